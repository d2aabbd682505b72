//! Dense linear-algebra and optimization kernels.
//!
//! Matrices are `nalgebra` dynamic matrices. Everything here is a pure
//! function of its arguments.

mod markov;
mod qp;
mod svd;

pub(crate) use markov::check_column_stochastic as markov_check;
pub use markov::{stationary_vector, stationary_vector_with, PowerIterOptions};
pub use qp::{solve_qp, solve_qp_with, QpProblem, QpSolution};
pub use svd::{lstsq_min_norm, truncated_svd, SvdFactors, DEFAULT_SVD_TOL};

pub type Mat = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

pub(crate) fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Builds a matrix from row-major entries.
pub fn mat_from_rows(rows: usize, cols: usize, entries: &[f64]) -> Mat {
    Mat::from_row_slice(rows, cols, entries)
}

/// Row-major copy of the entries.
pub fn mat_to_rows(m: &Mat) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}
