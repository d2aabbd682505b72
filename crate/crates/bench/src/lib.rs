//! Shared fixtures for the benchmarks.

use koopmpc::dynamics::{make_vanderpol, sample_training_set, ForcingFamily, Rect};
use koopmpc::numerics::{Mat, QpProblem, Vector};
use koopmpc::SampleSet;

/// Forced van der Pol samples with the benchmark's sampling settings.
pub fn vanderpol_samples(n_traj: usize) -> SampleSet {
    sample_training_set(
        &make_vanderpol(0.2),
        n_traj,
        &Rect::square(2, 6.0),
        1.0,
        0.05,
        &ForcingFamily::ProductSines {
            amplitude: 5.0,
            sigma: 10.0,
        },
        7,
    )
    .expect("sampling succeeds")
}

/// Well-conditioned dense `rows x cols` matrix with a fixed pattern.
pub fn pattern_matrix(rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |i, j| {
        ((i * 7 + j * 13) % 17) as f64 / 17.0 - 0.5 + if i == j { 2.0 } else { 0.0 }
    })
}

/// Box- and row-constrained QP in `n` variables with several active constraints.
pub fn constrained_qp(n: usize) -> QpProblem {
    let a = pattern_matrix(n, n);
    let h = a.transpose() * &a + Mat::identity(n, n) * 0.1;
    let g = Vector::from_fn(n, |i, _| if i % 2 == 0 { 3.0 } else { -3.0 });
    let mut a_ineq = Mat::zeros(n - 1, n);
    for i in 0..n - 1 {
        a_ineq[(i, i)] = 1.0;
        a_ineq[(i, i + 1)] = -1.0;
    }
    QpProblem {
        h,
        g,
        a_ineq,
        b_ineq: Vector::from_element(n - 1, 0.5),
        lb: Vector::from_element(n, -1.0),
        ub: Vector::from_element(n, 1.0),
    }
}
