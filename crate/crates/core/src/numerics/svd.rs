use super::{all_finite, Mat};
use crate::error::{Error, Result};

/// Relative singular-value cutoff used when callers do not supply one.
pub const DEFAULT_SVD_TOL: f64 = 1e-10;

/// Thin SVD with singular values sorted in nonincreasing order.
///
/// `rank` counts the singular values above `tol * s[0]`; the factors
/// themselves are not cut, so `u * diag(s) * vt` reconstructs the input.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Mat,
    pub s: Vec<f64>,
    pub vt: Mat,
    pub rank: usize,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> Mat {
        let k = self.s.len();
        let mut us = self.u.clone();
        for j in 0..k {
            let sj = self.s[j];
            us.column_mut(j).scale_mut(sj);
        }
        us * &self.vt
    }

    /// Moore-Penrose pseudo-inverse restricted to the leading `rank` triplets.
    pub fn pinv(&self) -> Mat {
        let r = self.rank;
        let (m, n) = (self.u.nrows(), self.vt.ncols());
        if r == 0 {
            return Mat::zeros(n, m);
        }
        let mut v_r = self.vt.rows(0, r).transpose();
        for j in 0..r {
            let inv = 1.0 / self.s[j];
            v_r.column_mut(j).scale_mut(inv);
        }
        v_r * self.u.columns(0, r).transpose()
    }
}

pub fn truncated_svd(m: &Mat, tol: f64) -> Result<SvdFactors> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::invalid("SVD of an empty matrix"));
    }
    if !all_finite(m) {
        return Err(Error::invalid("SVD input contains non-finite entries"));
    }
    let svd = nalgebra::linalg::SVD::try_new(m.clone(), true, true, f64::EPSILON, 0).ok_or(
        Error::Convergence {
            iterations: 0,
            residual: f64::NAN,
        },
    )?;
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let raw = svd.singular_values;

    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]));

    let mut su = Mat::zeros(u.nrows(), order.len());
    let mut svt = Mat::zeros(order.len(), vt.ncols());
    let mut s = Vec::with_capacity(order.len());
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        svt.set_row(dst, &vt.row(src));
        s.push(raw[src].max(0.0));
    }
    let cutoff = tol * s[0];
    let rank = if s[0] == 0.0 {
        0
    } else {
        s.iter().take_while(|&&v| v > cutoff).count()
    };
    Ok(SvdFactors {
        u: su,
        s,
        vt: svt,
        rank,
    })
}

/// Minimum-norm least-squares solution of `a * x = b` via truncated SVD.
pub fn lstsq_min_norm(a: &Mat, b: &Mat, tol: f64) -> Result<Mat> {
    if a.nrows() != b.nrows() {
        return Err(Error::invalid(format!(
            "lstsq: a has {} rows, b has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.ncols() == 0 {
        return Ok(Mat::zeros(0, b.ncols()));
    }
    if a.nrows() == 0 {
        return Ok(Mat::zeros(a.ncols(), b.ncols()));
    }
    if !all_finite(b) {
        return Err(Error::invalid("lstsq right-hand side is not finite"));
    }
    let f = truncated_svd(a, tol)?;
    Ok(f.pinv() * b)
}
