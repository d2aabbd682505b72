use serde::{Deserialize, Serialize};

use crate::dictionary::{stack_at, DelaySpec, Dictionary};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::numerics::{Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Dmdc,
    Edmdc,
    /// `z_{k+1} = A z_k + B v_k` with `v_k` the stacked input history.
    DelayMiso,
    /// Past inputs folded into the state; only `u_k` enters through `B`.
    DelayAugmented,
}

impl ModelKind {
    pub fn is_delay(self) -> bool {
        matches!(self, ModelKind::DelayMiso | ModelKind::DelayAugmented)
    }
}

/// How a measurement (plus history) becomes the model's lifted state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Lifting {
    Dictionary {
        dictionary: Dictionary,
    },
    Delay {
        spec: DelaySpec,
        /// State coordinates that are measured and embedded.
        coords: Vec<usize>,
        input_dim: usize,
        /// Optional projection onto leading Hankel modes (`zr x r`).
        #[serde(with = "crate::matrix_serde::option", default)]
        projection: Option<Mat>,
    },
}

/// Measurement at step `k` and its past, newest first:
/// `states = [x_k, x_{k-1}, ...]`, `inputs = [u_{k-1}, u_{k-2}, ...]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
}

impl History {
    pub fn current(x: Vector) -> Self {
        Self {
            states: vec![x],
            inputs: vec![],
        }
    }

    /// History ending at sample `k` of a trajectory.
    pub fn from_trajectory(traj: &Trajectory, k: usize) -> Self {
        Self {
            states: (0..=k).rev().map(|i| traj.states[i].clone()).collect(),
            inputs: (0..k).rev().map(|i| traj.inputs[i].clone()).collect(),
        }
    }

    /// Pushes a new measurement and the input that led to it.
    pub fn advance(&mut self, u: Vector, x: Vector, keep: usize) {
        self.inputs.insert(0, u);
        self.states.insert(0, x);
        self.states.truncate(keep.max(1));
        self.inputs.truncate(keep);
    }
}

/// `z_{k+1} = A z_k + B u_k`, `y_k = C z_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearControlModel {
    pub kind: ModelKind,
    #[serde(with = "crate::matrix_serde")]
    pub a: Mat,
    #[serde(with = "crate::matrix_serde")]
    pub b: Mat,
    #[serde(with = "crate::matrix_serde")]
    pub c: Mat,
    pub lifting: Lifting,
    pub dt: f64,
    /// RMS one-step residual of the regression on the training data.
    pub fit_residual: f64,
    /// Digest of the training data.
    pub training_digest: String,
}

impl LinearControlModel {
    pub fn lifted_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        match (&self.lifting, self.kind) {
            (Lifting::Delay { input_dim, .. }, _) => *input_dim,
            _ => self.b.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Number of past samples (states and inputs) the lifting consumes.
    pub fn history_len(&self) -> usize {
        match &self.lifting {
            Lifting::Dictionary { .. } => 0,
            Lifting::Delay { spec, .. } => spec.first_index(),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match &self.lifting {
            Lifting::Dictionary { dictionary } => dictionary.labels().to_vec(),
            Lifting::Delay {
                spec,
                coords,
                input_dim,
                projection,
            } => {
                let mut out = Vec::new();
                match projection {
                    Some(p) => out.extend((0..p.ncols()).map(|i| format!("hankel_mode{}", i + 1))),
                    None => {
                        for lag in 0..spec.d1 {
                            for &c in coords {
                                out.push(lag_label("x", c, lag));
                            }
                        }
                    }
                }
                if self.kind == ModelKind::DelayAugmented {
                    for lag in 1..spec.d2 {
                        for c in 0..*input_dim {
                            out.push(lag_label("u", c, lag));
                        }
                    }
                }
                out
            }
        }
    }

    /// Lifted state from a measurement and its history.
    pub fn lift(&self, hist: &History) -> Result<Vector> {
        let x = hist
            .states
            .first()
            .ok_or(Error::MissingHistory { needed: 1, got: 0 })?;
        match &self.lifting {
            Lifting::Dictionary { dictionary } => {
                if x.len() != dictionary.n_in() {
                    return Err(Error::invalid("measurement has the wrong dimension"));
                }
                Ok(dictionary.lift(x.as_slice()))
            }
            Lifting::Delay {
                spec,
                coords,
                input_dim,
                projection,
            } => {
                let need_x = (spec.d1 - 1) * spec.tau_steps + 1;
                if hist.states.len() < need_x {
                    return Err(Error::MissingHistory {
                        needed: need_x - 1,
                        got: hist.states.len() - 1,
                    });
                }
                // History is newest first; stack_at wants oldest first.
                let states: Vec<Vector> = hist.states[..need_x].iter().rev().cloned().collect();
                let z = stack_at(&states, need_x - 1, spec.d1, spec.tau_steps, coords);
                let z = match projection {
                    Some(p) => p.transpose() * z,
                    None => z,
                };
                if self.kind == ModelKind::DelayMiso {
                    return Ok(z);
                }
                let need_u = spec.d2 - 1;
                if hist.inputs.len() < need_u {
                    return Err(Error::MissingHistory {
                        needed: need_u,
                        got: hist.inputs.len(),
                    });
                }
                let mut out = Vector::zeros(z.len() + need_u * input_dim);
                out.rows_mut(0, z.len()).copy_from(&z);
                for lag in 0..need_u {
                    out.rows_mut(z.len() + lag * input_dim, *input_dim)
                        .copy_from(&hist.inputs[lag]);
                }
                Ok(out)
            }
        }
    }

    /// Measured coordinates the model predicts.
    pub fn observe(&self, x: &Vector) -> Vector {
        match &self.lifting {
            Lifting::Dictionary { .. } => x.clone(),
            Lifting::Delay { coords, .. } => {
                Vector::from_iterator(coords.len(), coords.iter().map(|&i| x[i]))
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        let d = m.a.nrows();
        if m.a.ncols() != d || m.b.nrows() != d || m.c.ncols() != d {
            return Err(Error::invalid(
                "model matrices have inconsistent dimensions",
            ));
        }
        Ok(m)
    }
}

fn lag_label(sym: &str, coord: usize, lag: usize) -> String {
    if lag == 0 {
        format!("{sym}{}[k]", coord + 1)
    } else {
        format!("{sym}{}[k-{lag}]", coord + 1)
    }
}

/// Open-loop prediction from an initial measurement under a given input sequence.
pub trait Rollout {
    fn rollout(&self, init: &History, inputs: &[Vector]) -> Result<Trajectory>;
}

impl Rollout for LinearControlModel {
    fn rollout(&self, init: &History, inputs: &[Vector]) -> Result<Trajectory> {
        if self.kind == ModelKind::DelayMiso {
            return self.to_augmented()?.rollout(init, inputs);
        }
        let q = self.input_dim();
        let mut z = self.lift(init)?;
        let mut traj = Trajectory {
            times: vec![0.0],
            states: vec![&self.c * &z],
            inputs: Vec::with_capacity(inputs.len()),
        };
        for (k, u) in inputs.iter().enumerate() {
            if u.len() != q || u.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("input {k} is malformed")));
            }
            z = &self.a * &z + &self.b * u;
            traj.inputs.push(u.clone());
            traj.times.push((k + 1) as f64 * self.dt);
            traj.states.push(&self.c * &z);
        }
        Ok(traj)
    }
}

/// Rolls any model forward; states are recovered through `C` at every step.
pub fn predict_rollout<M: Rollout + ?Sized>(
    model: &M,
    init: &History,
    inputs: &[Vector],
) -> Result<Trajectory> {
    model.rollout(init, inputs)
}
