use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::numerics::{truncated_svd, Mat, Vector};

#[derive(Debug, Clone)]
pub struct SparseOptions {
    /// Coefficients below `threshold * max|xi|` are dropped.
    pub threshold: f64,
    pub max_iter: usize,
    /// Largest accepted `|M xi| / |xi|`.
    pub acceptance: f64,
}

impl Default for SparseOptions {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            max_iter: 20,
            acceptance: 1e-6,
        }
    }
}

/// Residuals of one thresholding round: the truncated previous solution and
/// the re-solve on the reduced support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStep {
    pub truncated: f64,
    pub resolved: f64,
}

/// `phi(x) = Theta(x) xi` with `phi' = lambda phi` along the unforced flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenfunction {
    pub lambda: f64,
    pub xi: Vec<f64>,
    pub residual: f64,
    pub support: Vec<usize>,
    pub history: Vec<ThresholdStep>,
}

impl Eigenfunction {
    pub fn sparsity(&self) -> usize {
        self.support.len()
    }
}

/// Eigenfunction coordinates `z = [phi_1(x), ..., phi_r(x)]` over a shared library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenfunctionModel {
    pub theta: Dictionary,
    pub functions: Vec<Eigenfunction>,
}

impl EigenfunctionModel {
    pub fn new(theta: Dictionary, functions: Vec<Eigenfunction>) -> Self {
        Self { theta, functions }
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.functions.iter().map(|f| f.lambda).collect()
    }

    pub fn eval(&self, x: &[f64]) -> Vector {
        let lib = self.theta.lift(x);
        Vector::from_iterator(
            self.functions.len(),
            self.functions
                .iter()
                .map(|f| f.xi.iter().zip(lib.iter()).map(|(a, b)| a * b).sum::<f64>()),
        )
    }

    /// `B(z)` for a known input gain: row `j` is `grad phi_j(x) . G(x)`.
    pub fn control_coupling(&self, x: &[f64], gain: &Mat) -> Result<Mat> {
        if gain.nrows() != self.theta.n_in() {
            return Err(Error::invalid("input gain has the wrong number of rows"));
        }
        let jac = self.theta.jacobian(x);
        let mut out = Mat::zeros(self.functions.len(), gain.ncols());
        for (j, f) in self.functions.iter().enumerate() {
            let grad = jac.transpose() * Vector::from_column_slice(&f.xi);
            out.set_row(j, &(grad.transpose() * gain));
        }
        Ok(out)
    }

    /// `dz/dt = Lambda z + B(z) u`.
    pub fn derivative(&self, x: &[f64], u: &Vector, gain: &Mat) -> Result<Vector> {
        let z = self.eval(x);
        let lam = Vector::from_vec(self.lambdas());
        Ok(z.component_mul(&lam) + self.control_coupling(x, gain)? * u)
    }
}

/// Rows `xdot_k . grad Theta(x_k) - lambda Theta(x_k)`.
fn generator_matrix(x: &Mat, xdot: &Mat, theta: &Dictionary, lambda: f64) -> Mat {
    let m = x.ncols();
    let p = theta.len();
    let mut out = Mat::zeros(m, p);
    for k in 0..m {
        let xk: Vec<f64> = x.column(k).iter().copied().collect();
        let lib = theta.lift(&xk);
        let jac = theta.jacobian(&xk);
        let lie = &jac * xdot.column(k);
        for i in 0..p {
            out[(k, i)] = lie[i] - lambda * lib[i];
        }
    }
    out
}

/// Unit right singular vector of the smallest singular value of `m[:, support]`.
fn smallest_singular_vector(m: &Mat, support: &[usize]) -> Result<Vector> {
    let sub = m.select_columns(support);
    let rows = sub.nrows().max(sub.ncols());
    let mut padded = Mat::zeros(rows, sub.ncols());
    padded.rows_mut(0, sub.nrows()).copy_from(&sub);
    let f = truncated_svd(&padded, 0.0)?;
    let v = f.vt.row(sub.ncols() - 1).transpose();
    let mut xi = Vector::zeros(m.ncols());
    for (c, &i) in support.iter().enumerate() {
        xi[i] = v[c];
    }
    Ok(xi)
}

fn normalized_residual(m: &Mat, xi: &Vector) -> f64 {
    (m * xi).norm() / xi.norm()
}

/// Sparse nullspace search for an eigenfunction with eigenvalue `lambda`.
///
/// `xdot` holds the unforced time derivatives at the sample states.
pub fn identify_eigenfunctions(
    x: &Mat,
    xdot: &Mat,
    theta: &Dictionary,
    lambda: f64,
    opts: &SparseOptions,
) -> Result<Eigenfunction> {
    if x.shape() != xdot.shape() || x.nrows() != theta.n_in() {
        return Err(Error::invalid(
            "states, derivatives and library disagree in shape",
        ));
    }
    if x.ncols() == 0 || theta.is_empty() {
        return Err(Error::InsufficientData(
            "no samples or empty library".into(),
        ));
    }
    let m = generator_matrix(x, xdot, theta, lambda);
    let mut support: Vec<usize> = (0..theta.len()).collect();
    let mut xi = smallest_singular_vector(&m, &support)?;
    let mut history = Vec::new();

    for _ in 0..opts.max_iter {
        let cut = opts.threshold * xi.amax();
        let next: Vec<usize> = support
            .iter()
            .copied()
            .filter(|&i| xi[i].abs() >= cut)
            .collect();
        if next.len() == support.len() || next.is_empty() {
            break;
        }
        let mut truncated = Vector::zeros(xi.len());
        for &i in &next {
            truncated[i] = xi[i];
        }
        let before = normalized_residual(&m, &truncated);
        support = next;
        xi = smallest_singular_vector(&m, &support)?;
        history.push(ThresholdStep {
            truncated: before,
            resolved: normalized_residual(&m, &xi),
        });
    }

    xi /= xi.norm();
    if let Some(&lead) = support.iter().find(|&&i| xi[i] != 0.0) {
        if xi[lead] < 0.0 {
            xi = -xi;
        }
    }
    let residual = normalized_residual(&m, &xi);
    if !(residual <= opts.acceptance) {
        return Err(Error::NoEigenfunction {
            residual,
            bound: opts.acceptance,
        });
    }
    Ok(Eigenfunction {
        lambda,
        xi: xi.iter().copied().collect(),
        residual,
        support,
        history,
    })
}

/// Central-difference derivatives at the interior samples of a trajectory.
pub fn central_differences(traj: &Trajectory) -> Result<(Mat, Mat)> {
    let len = traj.states.len();
    if len < 3 {
        return Err(Error::InsufficientData(
            "central differences need three samples".into(),
        ));
    }
    let n = traj.states[0].len();
    let mut x = Mat::zeros(n, len - 2);
    let mut xdot = Mat::zeros(n, len - 2);
    for k in 1..len - 1 {
        let h = traj.times[k + 1] - traj.times[k - 1];
        x.set_column(k - 1, &traj.states[k]);
        xdot.set_column(k - 1, &((&traj.states[k + 1] - &traj.states[k - 1]) / h));
    }
    Ok((x, xdot))
}
