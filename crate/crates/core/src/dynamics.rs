//! Controlled plants, fixed-step integration and training-data generation.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Mat, Vector};

/// Any state component beyond this magnitude counts as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e6;

pub type VectorField = Arc<dyn Fn(&Vector, &Vector, f64) -> Vector + Send + Sync>;
pub type GainField = Arc<dyn Fn(&Vector) -> Mat + Send + Sync>;

#[derive(Clone)]
pub enum Evolution {
    /// `dx/dt = f(x, u, t)`
    Ode(VectorField),
    /// `x_{k+1} = f(x_k, u_k, t_k)`; one application per step regardless of `dt`.
    Map(VectorField),
}

/// A plant with `state_dim` states and `input_dim` inputs.
#[derive(Clone)]
pub struct ControlSystem {
    pub name: String,
    pub state_dim: usize,
    pub input_dim: usize,
    pub evolution: Evolution,
    /// Input gain `G(x)` for control-affine plants.
    pub input_gain: Option<GainField>,
}

impl fmt::Debug for ControlSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSystem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("map", &matches!(self.evolution, Evolution::Map(_)))
            .finish()
    }
}

impl ControlSystem {
    pub fn ode<F>(name: &str, state_dim: usize, input_dim: usize, rhs: F) -> Self
    where
        F: Fn(&Vector, &Vector, f64) -> Vector + Send + Sync + 'static,
    {
        Self {
            name: name.to_string(),
            state_dim,
            input_dim,
            evolution: Evolution::Ode(Arc::new(rhs)),
            input_gain: None,
        }
    }

    pub fn map<F>(name: &str, state_dim: usize, input_dim: usize, f: F) -> Self
    where
        F: Fn(&Vector, &Vector, f64) -> Vector + Send + Sync + 'static,
    {
        Self {
            name: name.to_string(),
            state_dim,
            input_dim,
            evolution: Evolution::Map(Arc::new(f)),
            input_gain: None,
        }
    }

    pub fn with_input_gain<G>(mut self, gain: G) -> Self
    where
        G: Fn(&Vector) -> Mat + Send + Sync + 'static,
    {
        self.input_gain = Some(Arc::new(gain));
        self
    }

    /// `dx/dt` for ODE plants; `None` for discrete maps.
    pub fn rhs(&self, x: &Vector, u: &Vector, t: f64) -> Option<Vector> {
        match &self.evolution {
            Evolution::Ode(f) => Some(f(x, u, t)),
            Evolution::Map(_) => None,
        }
    }

    pub fn is_map(&self) -> bool {
        matches!(self.evolution, Evolution::Map(_))
    }

    /// Advances one sample: RK4 for ODEs, one map application otherwise.
    pub fn step(&self, x: &Vector, u: &Vector, t: f64, dt: f64) -> Result<Vector> {
        match &self.evolution {
            Evolution::Ode(_) => rk4_step(self, x, u, t, dt),
            Evolution::Map(f) => {
                let next = f(x, u, t);
                check_finite_step(x, next, t)
            }
        }
    }

    /// State flowed for duration `tau` under constant `u`, using RK4 substeps
    /// no longer than `max_dt` (maps are applied `round(tau)` times).
    pub fn flow(&self, x: &Vector, u: &Vector, tau: f64, max_dt: f64) -> Result<Vector> {
        let mut x = x.clone();
        match &self.evolution {
            Evolution::Ode(_) => {
                let n = (tau / max_dt).ceil().max(1.0) as usize;
                let h = tau / n as f64;
                for k in 0..n {
                    x = rk4_step(self, &x, u, k as f64 * h, h)?;
                }
            }
            Evolution::Map(f) => {
                let n = tau.round().max(1.0) as usize;
                for k in 0..n {
                    x = f(&x, u, k as f64);
                }
            }
        }
        Ok(x)
    }
}

fn check_finite_step(x: &Vector, next: Vector, t: f64) -> Result<Vector> {
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::Divergence {
            step: 0,
            partial: Box::new(Trajectory {
                times: vec![t],
                states: vec![x.clone()],
                inputs: vec![],
            }),
        })
    }
}

/// Forced van der Pol oscillator `x'' - mu (1 - x^2) x' + x = u` in first-order form.
pub fn make_vanderpol(mu: f64) -> ControlSystem {
    ControlSystem::ode("vanderpol", 2, 1, move |x, u, _t| {
        Vector::from_vec(vec![x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0] + u[0]])
    })
    .with_input_gain(|_x| Mat::from_column_slice(2, 1, &[0.0, 1.0]))
}

/// `x1' = mu x1`, `x2' = lambda (x2 - x1^2) + u`. The observables
/// `{x1, x2, x1^2}` span a Koopman-invariant subspace of this plant.
pub fn make_slow_manifold(mu: f64, lambda: f64) -> ControlSystem {
    ControlSystem::ode("slow-manifold", 2, 1, move |x, u, _t| {
        Vector::from_vec(vec![mu * x[0], lambda * (x[1] - x[0] * x[0]) + u[0]])
    })
    .with_input_gain(|_x| Mat::from_column_slice(2, 1, &[0.0, 1.0]))
}

/// Classical fourth-order Runge-Kutta step with `u` held over the step.
pub fn rk4_step(sys: &ControlSystem, x: &Vector, u: &Vector, t: f64, dt: f64) -> Result<Vector> {
    let f = match &sys.evolution {
        Evolution::Ode(f) => f,
        Evolution::Map(_) => return Err(Error::invalid("rk4_step on a discrete map plant")),
    };
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    let half = 0.5 * dt;
    let k1 = f(x, u, t);
    let k2 = f(&(x + &k1 * half), u, t + half);
    let k3 = f(&(x + &k2 * half), u, t + half);
    let k4 = f(&(x + &k3 * dt), u, t + dt);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    check_finite_step(x, next, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ForcingSignal {
    /// `amplitude * sin(|w1| t) * sin(|w2| t)`
    ProductSines {
        amplitude: f64,
        w1: f64,
        w2: f64,
    },
    Constant {
        value: Vec<f64>,
    },
    Zero {
        dim: usize,
    },
    /// `values[k]` on `[k dt, (k+1) dt)`, last value held afterwards.
    PiecewiseConstant {
        dt: f64,
        values: Vec<Vec<f64>>,
    },
}

impl ForcingSignal {
    pub fn input_dim(&self) -> usize {
        match self {
            ForcingSignal::ProductSines { .. } => 1,
            ForcingSignal::Constant { value } => value.len(),
            ForcingSignal::Zero { dim } => *dim,
            ForcingSignal::PiecewiseConstant { values, .. } => {
                values.first().map_or(0, |v| v.len())
            }
        }
    }

    pub fn eval(&self, t: f64) -> Vector {
        match self {
            ForcingSignal::ProductSines { amplitude, w1, w2 } => {
                Vector::from_element(1, amplitude * (w1.abs() * t).sin() * (w2.abs() * t).sin())
            }
            ForcingSignal::Constant { value } => Vector::from_column_slice(value),
            ForcingSignal::Zero { dim } => Vector::zeros(*dim),
            ForcingSignal::PiecewiseConstant { dt, values } => {
                let k = ((t / dt + 1e-9).floor().max(0.0) as usize).min(values.len() - 1);
                Vector::from_column_slice(&values[k])
            }
        }
    }
}

/// Seeded generator of per-trajectory forcing signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ForcingFamily {
    /// Product of sines with frequencies drawn from `N(0, sigma)` (sigma is a
    /// standard deviation).
    ProductSines {
        amplitude: f64,
        sigma: f64,
    },
    Zero {
        dim: usize,
    },
}

impl ForcingFamily {
    pub fn draw<R: Rng>(&self, rng: &mut R) -> ForcingSignal {
        match self {
            ForcingFamily::ProductSines { amplitude, sigma } => {
                let normal = Normal::new(0.0, *sigma).expect("sigma must be finite and >= 0");
                ForcingSignal::ProductSines {
                    amplitude: *amplitude,
                    w1: rng.sample(normal),
                    w2: rng.sample(normal),
                }
            }
            ForcingFamily::Zero { dim } => ForcingSignal::Zero { dim: *dim },
        }
    }
}

/// Axis-aligned rectangle `[lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Rect {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::invalid("rectangle needs lo < hi in every dimension"));
        }
        Ok(Self { lo, hi })
    }

    pub fn square(dim: usize, half_width: f64) -> Self {
        Self {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample_uniform<R: Rng>(&self, rng: &mut R) -> Vector {
        Vector::from_iterator(
            self.dim(),
            self.lo
                .iter()
                .zip(&self.hi)
                .map(|(a, b)| a + (b - a) * rng.random::<f64>()),
        )
    }
}

/// Sampled states with zero-order-hold inputs; `inputs` is one shorter than
/// `states`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    #[serde(with = "crate::matrix_serde::vector_list")]
    pub states: Vec<Vector>,
    #[serde(with = "crate::matrix_serde::vector_list")]
    pub inputs: Vec<Vector>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn final_state(&self) -> &Vector {
        self.states
            .last()
            .expect("trajectory has at least one state")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.states.first().map_or(0, |s| s.len());
        let q = self.inputs.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=q).map(|i| format!("u{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            match self.inputs.get(k) {
                Some(u) => row.extend(u.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), q)),
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub fn simulate(
    sys: &ControlSystem,
    x0: &Vector,
    forcing: &ForcingSignal,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    if !(t_end > 0.0) || !(dt > 0.0) {
        return Err(Error::invalid("t_end and dt must be positive"));
    }
    if x0.len() != sys.state_dim || forcing.input_dim() != sys.input_dim {
        return Err(Error::invalid(
            "initial state or forcing has the wrong dimension",
        ));
    }
    let steps = step_count(t_end, dt);
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps),
    };
    traj.times.push(0.0);
    traj.states.push(x0.clone());
    let mut x = x0.clone();
    for k in 0..steps {
        let t = k as f64 * dt;
        let u = forcing.eval(t);
        let next = match sys.step(&x, &u, t, dt) {
            Ok(v) => v,
            Err(Error::Divergence { .. }) => {
                return Err(Error::Divergence {
                    step: k,
                    partial: Box::new(traj),
                })
            }
            Err(e) => return Err(e),
        };
        traj.inputs.push(u);
        traj.times.push((k + 1) as f64 * dt);
        traj.states.push(next.clone());
        if next.iter().any(|v| v.abs() > DIVERGENCE_BOUND) {
            return Err(Error::Divergence {
                step: k + 1,
                partial: Box::new(traj),
            });
        }
        x = next;
    }
    Ok(traj)
}

/// `floor(t_end / dt)`, tolerant of `1.0 / 0.05 = 19.999...`.
pub fn step_count(t_end: f64, dt: f64) -> usize {
    (t_end / dt + 1e-9).floor() as usize
}

/// Per-index RNG stream derived from a master seed; independent of scheduling.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub requested_trajectories: usize,
    pub diverged: usize,
}

/// Snapshot triples `(x_k, x'_k, u_k)` stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub x: Mat,
    pub xp: Mat,
    pub u: Mat,
    pub dt: f64,
    /// Source trajectory of every column.
    pub traj_index: Vec<usize>,
    /// Time of `x` in every column.
    pub times: Vec<f64>,
    pub meta: SampleMeta,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn from_trajectories(trajs: &[Trajectory], dt: f64, meta: SampleMeta) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        let first = trajs
            .iter()
            .find(|t| !t.states.is_empty())
            .ok_or_else(|| Error::InsufficientData("no trajectories".into()))?;
        let n = first.states[0].len();
        let q = first.inputs.first().map_or(0, |u| u.len());
        let m: usize = trajs.iter().map(|t| t.steps()).sum();
        let mut x = Mat::zeros(n, m);
        let mut xp = Mat::zeros(n, m);
        let mut u = Mat::zeros(q, m);
        let mut traj_index = Vec::with_capacity(m);
        let mut times = Vec::with_capacity(m);
        let mut col = 0;
        for (ti, t) in trajs.iter().enumerate() {
            for k in 0..t.steps() {
                x.set_column(col, &t.states[k]);
                xp.set_column(col, &t.states[k + 1]);
                u.set_column(col, &t.inputs[k]);
                traj_index.push(ti);
                times.push(t.times[k]);
                col += 1;
            }
        }
        Ok(Self {
            x,
            xp,
            u,
            dt,
            traj_index,
            times,
            meta,
        })
    }

    /// Reassembles the source trajectories from consecutive columns.
    pub fn trajectories(&self) -> Vec<Trajectory> {
        let mut out: Vec<Trajectory> = Vec::new();
        let mut last: Option<usize> = None;
        for j in 0..self.len() {
            let id = self.traj_index[j];
            let contiguous = last == Some(id)
                && out
                    .last()
                    .is_some_and(|t| t.final_state() == &self.x.column(j).into_owned());
            if !contiguous {
                out.push(Trajectory {
                    times: vec![self.times[j]],
                    states: vec![self.x.column(j).into_owned()],
                    inputs: vec![],
                });
            }
            let t = out.last_mut().expect("pushed above");
            if let Some(tk) = t.times.last_mut() {
                *tk = self.times[j];
            }
            t.inputs.push(self.u.column(j).into_owned());
            t.states.push(self.xp.column(j).into_owned());
            t.times.push(t.times[0] + t.inputs.len() as f64 * self.dt);
            last = Some(id);
        }
        out
    }

    /// Stable digest of the numeric content, used to tag fitted models.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for m in [&self.x, &self.xp, &self.u] {
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for v in crate::numerics::mat_to_rows(m) {
                h.update(v.to_le_bytes());
            }
        }
        h.update(self.dt.to_le_bytes());
        hex::encode(h.finalize())
    }

    pub fn manifest(&self) -> SampleManifest {
        SampleManifest {
            state_dim: self.state_dim(),
            input_dim: self.input_dim(),
            samples: self.len(),
            trajectories: self.traj_index.last().map_or(0, |i| i + 1),
            dt: self.dt,
            seed: self.meta.seed,
            requested_trajectories: self.meta.requested_trajectories,
            diverged: self.meta.diverged,
        }
    }

    /// One row per snapshot: `traj,t,x1..xn,u1..uq,xnext1..xnextn`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let (n, q) = (self.state_dim(), self.input_dim());
        let mut header = vec!["traj".to_string(), "t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=q).map(|i| format!("u{i}")));
        header.extend((1..=n).map(|i| format!("xnext{i}")));
        writeln!(w, "{}", header.join(","))?;
        for j in 0..self.len() {
            let mut row = vec![self.traj_index[j].to_string(), self.times[j].to_string()];
            row.extend(self.x.column(j).iter().map(|v| v.to_string()));
            row.extend(self.u.column(j).iter().map(|v| v.to_string()));
            row.extend(self.xp.column(j).iter().map(|v| v.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, manifest: &SampleManifest) -> Result<Self> {
        let (n, q) = (manifest.state_dim, manifest.input_dim);
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("empty sample CSV"))??;
        let cols = header.split(',').count();
        if cols != 2 + 2 * n + q {
            return Err(Error::invalid(format!(
                "sample CSV has {cols} columns, manifest implies {}",
                2 + 2 * n + q
            )));
        }
        let mut traj_index = Vec::new();
        let mut times = Vec::new();
        let mut xs = Vec::new();
        let mut us = Vec::new();
        let mut xps = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(Error::invalid(format!(
                    "sample CSV line {}: wrong field count",
                    lineno + 2
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::invalid(format!("sample CSV line {}: bad number {s:?}", lineno + 2))
                })
            };
            traj_index.push(fields[0].trim().parse::<usize>().map_err(|_| {
                Error::invalid(format!("sample CSV line {}: bad trajectory id", lineno + 2))
            })?);
            times.push(num(fields[1])?);
            for f in &fields[2..2 + n] {
                xs.push(num(f)?);
            }
            for f in &fields[2 + n..2 + n + q] {
                us.push(num(f)?);
            }
            for f in &fields[2 + n + q..] {
                xps.push(num(f)?);
            }
        }
        let m = times.len();
        Ok(Self {
            x: Mat::from_column_slice(n, m, &xs),
            xp: Mat::from_column_slice(n, m, &xps),
            u: Mat::from_column_slice(q, m, &us),
            dt: manifest.dt,
            traj_index,
            times,
            meta: SampleMeta {
                seed: manifest.seed,
                requested_trajectories: manifest.requested_trajectories,
                diverged: manifest.diverged,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub state_dim: usize,
    pub input_dim: usize,
    pub samples: usize,
    pub trajectories: usize,
    pub dt: f64,
    pub seed: u64,
    pub requested_trajectories: usize,
    pub diverged: usize,
}

/// Simulates `n_traj` trajectories from uniform initial conditions in
/// `region` with forcing drawn from `family`, dropping divergent ones.
pub fn sample_trajectories(
    sys: &ControlSystem,
    n_traj: usize,
    region: &Rect,
    t_end: f64,
    dt: f64,
    family: &ForcingFamily,
    seed: u64,
) -> Result<(Vec<Trajectory>, usize)> {
    if n_traj == 0 {
        return Err(Error::invalid("need at least one trajectory"));
    }
    if region.dim() != sys.state_dim {
        return Err(Error::invalid(
            "sampling box dimension differs from the state dimension",
        ));
    }
    let runs: Vec<Result<Option<Trajectory>>> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let x0 = region.sample_uniform(&mut rng);
            let forcing = family.draw(&mut rng);
            match simulate(sys, &x0, &forcing, t_end, dt) {
                Ok(t) => Ok(Some(t)),
                Err(Error::Divergence { step, .. }) => {
                    log::warn!("trajectory {i} diverged at step {step}; dropped");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut trajs = Vec::with_capacity(n_traj);
    let mut diverged = 0;
    for r in runs {
        match r? {
            Some(t) => trajs.push(t),
            None => diverged += 1,
        }
    }
    Ok((trajs, diverged))
}

pub fn sample_training_set(
    sys: &ControlSystem,
    n_traj: usize,
    region: &Rect,
    t_end: f64,
    dt: f64,
    family: &ForcingFamily,
    seed: u64,
) -> Result<SampleSet> {
    let (trajs, diverged) = sample_trajectories(sys, n_traj, region, t_end, dt, family, seed)?;
    SampleSet::from_trajectories(
        &trajs,
        dt,
        SampleMeta {
            seed,
            requested_trajectories: n_traj,
            diverged,
        },
    )
}

/// Analytic `dx/dt` at every sample column.
pub fn state_derivatives(sys: &ControlSystem, x: &Mat, u: &Mat) -> Result<Mat> {
    let mut out = Mat::zeros(x.nrows(), x.ncols());
    for j in 0..x.ncols() {
        let d = sys
            .rhs(&x.column(j).into_owned(), &u.column(j).into_owned(), 0.0)
            .ok_or_else(|| Error::invalid("derivatives need an ODE plant"))?;
        out.set_column(j, &d);
    }
    Ok(out)
}
