//! Observable dictionaries and time-delay embeddings.

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::numerics::{Mat, Vector};

/// A scalar function of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observable {
    Constant,
    /// `prod_i x_i^{e_i}`
    Monomial(Vec<u32>),
}

impl Observable {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Observable::Constant => 1.0,
            Observable::Monomial(e) => e
                .iter()
                .zip(x)
                .filter(|(p, _)| **p > 0)
                .map(|(&p, &xi)| xi.powi(p as i32))
                .product(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vector {
        let n = x.len();
        match self {
            Observable::Constant => Vector::zeros(n),
            Observable::Monomial(e) => Vector::from_iterator(
                n,
                (0..n).map(|i| {
                    if e[i] == 0 {
                        return 0.0;
                    }
                    let mut g = e[i] as f64 * x[i].powi(e[i] as i32 - 1);
                    for (j, (&p, &xj)) in e.iter().zip(x).enumerate() {
                        if j != i && p > 0 {
                            g *= xj.powi(p as i32);
                        }
                    }
                    g
                }),
            ),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Observable::Constant => "1".to_string(),
            Observable::Monomial(e) => {
                let parts: Vec<String> = e
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0)
                    .map(|(i, &p)| {
                        if p == 1 {
                            format!("x{}", i + 1)
                        } else {
                            format!("x{}^{}", i + 1, p)
                        }
                    })
                    .collect();
                if parts.is_empty() {
                    "1".to_string()
                } else {
                    parts.join("*")
                }
            }
        }
    }

    fn is_coordinate(&self, i: usize) -> bool {
        match self {
            Observable::Monomial(e) => e.iter().enumerate().all(|(j, &p)| p == u32::from(j == i)),
            Observable::Constant => false,
        }
    }
}

/// Ordered list of observables `f(x) = [f_1(x), ..., f_d(x)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    n_in: usize,
    observables: Vec<Observable>,
    labels: Vec<String>,
}

impl Dictionary {
    pub fn new(n_in: usize, observables: Vec<Observable>) -> Result<Self> {
        for o in &observables {
            if let Observable::Monomial(e) = o {
                if e.len() != n_in {
                    return Err(Error::invalid(format!(
                        "monomial {e:?} does not have {n_in} exponents"
                    )));
                }
            }
        }
        let labels = observables.iter().map(Observable::label).collect();
        Ok(Self {
            n_in,
            observables,
            labels,
        })
    }

    /// `[x_1, ..., x_n]`
    pub fn identity(n: usize) -> Self {
        Self::monomials(n, 1)
    }

    /// Every monomial of total degree `1..=max_order`, graded lexicographic,
    /// so the state coordinates come first.
    pub fn monomials(n: usize, max_order: u32) -> Self {
        let mut obs = Vec::new();
        for degree in 1..=max_order {
            let mut e = vec![0u32; n];
            push_exponents(&mut obs, &mut e, 0, degree);
        }
        Self::new(n, obs).expect("generated exponents have length n")
    }

    pub fn from_exponents(n: usize, exps: &[&[u32]]) -> Result<Self> {
        Self::new(
            n,
            exps.iter()
                .map(|e| Observable::Monomial(e.to_vec()))
                .collect(),
        )
    }

    /// Appends the constant observable.
    pub fn with_constant(mut self) -> Self {
        self.observables.push(Observable::Constant);
        self.labels.push("1".into());
        self
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    pub fn lift(&self, x: &[f64]) -> Vector {
        Vector::from_iterator(self.len(), self.observables.iter().map(|o| o.eval(x)))
    }

    /// `d x n_in` Jacobian of the lifting.
    pub fn jacobian(&self, x: &[f64]) -> Mat {
        let mut j = Mat::zeros(self.len(), self.n_in);
        for (i, o) in self.observables.iter().enumerate() {
            j.set_row(i, &o.gradient(x).transpose());
        }
        j
    }
}

fn push_exponents(out: &mut Vec<Observable>, e: &mut [u32], pos: usize, remaining: u32) {
    if pos == e.len() - 1 {
        e[pos] = remaining;
        out.push(Observable::Monomial(e.to_vec()));
        e[pos] = 0;
        return;
    }
    for p in (0..=remaining).rev() {
        e[pos] = p;
        push_exponents(out, e, pos + 1, remaining - p);
    }
    e[pos] = 0;
}

/// Lifts every column of `x`.
pub fn eval_dictionary(dict: &Dictionary, x: &Mat) -> Result<Mat> {
    if x.nrows() != dict.n_in() {
        return Err(Error::invalid(format!(
            "dictionary expects {} states, got {}",
            dict.n_in(),
            x.nrows()
        )));
    }
    let mut out = Mat::zeros(dict.len(), x.ncols());
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        out.set_column(j, &dict.lift(&col));
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "dictionary evaluation produced non-finite values",
        ));
    }
    Ok(out)
}

/// Selector `C` with `C f(x) = x`; the state coordinates must lead the dictionary.
pub fn recovery_matrix(dict: &Dictionary) -> Result<Mat> {
    let n = dict.n_in();
    if dict.len() < n || !(0..n).all(|i| dict.observables()[i].is_coordinate(i)) {
        return Err(Error::UnsupportedDictionary(
            "the first observables must be the state coordinates x1..xn".into(),
        ));
    }
    let mut c = Mat::zeros(n, dict.len());
    for i in 0..n {
        c[(i, i)] = 1.0;
    }
    Ok(c)
}

/// Embedding depths for states (`d1`) and inputs (`d2`) and the sample delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelaySpec {
    pub d1: usize,
    pub d2: usize,
    pub tau_steps: usize,
}

impl DelaySpec {
    pub fn new(d1: usize, d2: usize, tau_steps: usize) -> Result<Self> {
        if d1 == 0 || d2 == 0 || tau_steps == 0 {
            return Err(Error::invalid("delay depths and tau must be at least 1"));
        }
        Ok(Self { d1, d2, tau_steps })
    }

    pub fn equal(d: usize) -> Result<Self> {
        Self::new(d, d, 1)
    }

    /// Index of the first sample whose full history is available.
    pub fn first_index(&self) -> usize {
        (self.d1.max(self.d2) - 1) * self.tau_steps
    }
}

/// Stacks `samples[k], samples[k - tau], ...` (newest first) restricted to `coords`.
pub(crate) fn stack_at(
    samples: &[Vector],
    k: usize,
    depth: usize,
    tau: usize,
    coords: &[usize],
) -> Vector {
    let mut out = Vector::zeros(depth * coords.len());
    for lag in 0..depth {
        let s = &samples[k - lag * tau];
        for (c, &i) in coords.iter().enumerate() {
            out[lag * coords.len() + c] = s[i];
        }
    }
    out
}

/// Hankel-stacked delay coordinates of a trajectory, newest sample first.
///
/// Returns `(z, v, z_next)`: column `j` of `z` stacks the selected state
/// coordinates at samples `k, k - tau, ...`, `v` stacks the inputs the same
/// way, and `z_next` is `z` one sample later.
pub fn delay_embed(
    traj: &Trajectory,
    spec: &DelaySpec,
    coords: &[usize],
) -> Result<(Mat, Mat, Mat)> {
    let len = traj.states.len();
    let start = spec.first_index();
    if len < spec.d1.max(spec.d2) + 1 || len <= start + 1 {
        return Err(Error::InsufficientData(format!(
            "trajectory with {len} samples is too short for delay depth {}/{}",
            spec.d1, spec.d2
        )));
    }
    let n = traj.states[0].len();
    if coords.iter().any(|&i| i >= n) || coords.is_empty() {
        return Err(Error::invalid("delay coordinates out of range"));
    }
    let q = traj.inputs.first().map_or(0, |u| u.len());
    let all_inputs: Vec<usize> = (0..q).collect();
    let cols = len - 1 - start;
    let zr = spec.d1 * coords.len();
    let vr = spec.d2 * q;
    let mut z = Mat::zeros(zr, cols);
    let mut v = Mat::zeros(vr, cols);
    let mut zn = Mat::zeros(zr, cols);
    for (j, k) in (start..len - 1).enumerate() {
        z.set_column(
            j,
            &stack_at(&traj.states, k, spec.d1, spec.tau_steps, coords),
        );
        zn.set_column(
            j,
            &stack_at(&traj.states, k + 1, spec.d1, spec.tau_steps, coords),
        );
        v.set_column(
            j,
            &stack_at(&traj.inputs, k, spec.d2, spec.tau_steps, &all_inputs),
        );
    }
    Ok((z, v, zn))
}
