use super::{Mat, Vector};
use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PowerIterOptions {
    /// Starting distribution; uniform when `None`.
    pub start: Option<Vector>,
    /// Iterate with `0.5 * (I + P)` instead of `P`. Same fixed points, no
    /// period-2 oscillation.
    pub damped: bool,
    pub max_iter: usize,
    /// Target for `|P pi - pi|_1`.
    pub tol: f64,
}

impl Default for PowerIterOptions {
    fn default() -> Self {
        Self {
            start: None,
            damped: true,
            max_iter: 100_000,
            tol: 1e-10,
        }
    }
}

/// Stationary distribution of a column-stochastic matrix by damped power
/// iteration from the uniform distribution.
pub fn stationary_vector(p: &Mat) -> Result<Vector> {
    stationary_vector_with(p, &PowerIterOptions::default())
}

pub fn stationary_vector_with(p: &Mat, opts: &PowerIterOptions) -> Result<Vector> {
    check_column_stochastic(p)?;
    let n = p.nrows();
    let mut pi = match &opts.start {
        Some(s) => {
            if s.len() != n || s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid(
                    "start vector must be nonnegative with matching length",
                ));
            }
            let total = s.sum();
            if total <= 0.0 {
                return Err(Error::invalid("start vector has zero mass"));
            }
            s / total
        }
        None => Vector::from_element(n, 1.0 / n as f64),
    };

    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let next = p * &pi;
        residual = (&next - &pi).lp_norm(1);
        if residual <= opts.tol {
            return Ok(pi);
        }
        pi = if opts.damped {
            (next + &pi) * 0.5
        } else {
            next
        };
        let total = pi.sum();
        pi /= total;
    }
    Err(Error::Convergence {
        iterations: opts.max_iter,
        residual,
    })
}

pub(crate) fn check_column_stochastic(p: &Mat) -> Result<()> {
    if !p.is_square() || p.nrows() == 0 {
        return Err(Error::invalid(
            "transition matrix must be square and nonempty",
        ));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(
            "transition matrix has negative or non-finite entries",
        ));
    }
    for (j, col) in p.column_iter().enumerate() {
        let s = col.sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::invalid(format!("column {j} sums to {s}, not 1")));
        }
    }
    Ok(())
}
