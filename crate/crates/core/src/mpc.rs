//! Receding-horizon control on a lifted linear model.
//!
//! The QP is condensed: predicted lifted states are eliminated and the only
//! decision variables are the stacked inputs `u_0 .. u_{N-1}`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{step_count, ControlSystem, Trajectory, DIVERGENCE_BOUND};
use crate::error::{Error, Result};
use crate::numerics::{solve_qp_with, Mat, QpProblem, Vector};
use crate::sysid::{History, LinearControlModel, ModelKind};

/// Slack allowed between a QP solution and the constraints before the
/// applied input is projected back onto them.
const APPLY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    /// Output weight, `p x p` PSD.
    #[serde(with = "crate::matrix_serde")]
    pub q: Mat,
    /// Terminal output weight; `q` when absent.
    #[serde(with = "crate::matrix_serde::option", default)]
    pub q_terminal: Option<Mat>,
    pub ru: f64,
    pub rdu: f64,
    pub horizon: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub du_min: f64,
    pub du_max: f64,
    #[serde(with = "crate::matrix_serde::vector")]
    pub reference: Vector,
    pub qp_tol: f64,
}

impl MpcConfig {
    /// `Q = I`, `R_u = R_du = 0.1`, `N = 15`, `|u| <= 5`, `|du| <= 50`, origin reference.
    pub fn benchmark(n: usize) -> Self {
        Self {
            q: Mat::identity(n, n),
            q_terminal: None,
            ru: 0.1,
            rdu: 0.1,
            horizon: 15,
            u_min: -5.0,
            u_max: 5.0,
            du_min: -50.0,
            du_max: 50.0,
            reference: Vector::zeros(n),
            qp_tol: 1e-9,
        }
    }

    pub fn validate(&self, outputs: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.u_min > self.u_max || self.du_min > self.du_max {
            return Err(Error::invalid("lower bound above upper bound"));
        }
        if !(self.ru >= 0.0) || !(self.rdu >= 0.0) {
            return Err(Error::invalid("input weights must be nonnegative"));
        }
        let qt = self.terminal_weight();
        for w in [&self.q, qt] {
            if w.shape() != (outputs, outputs) {
                return Err(Error::invalid(format!(
                    "weight is {:?}, model has {outputs} outputs",
                    w.shape()
                )));
            }
            if (w - w.transpose()).amax() > 1e-12 * w.amax().max(1.0) {
                return Err(Error::invalid("weight matrix is not symmetric"));
            }
            let min_eig = w.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-12 * w.amax().max(1.0) {
                return Err(Error::invalid("weight matrix is not PSD"));
            }
        }
        if self.reference.len() != outputs {
            return Err(Error::invalid("reference has the wrong dimension"));
        }
        Ok(())
    }

    pub fn terminal_weight(&self) -> &Mat {
        self.q_terminal.as_ref().unwrap_or(&self.q)
    }

    /// `(y - r)'Q(y - r) + R_u |u|^2 + R_du |u - u_prev|^2`.
    pub fn stage_cost(&self, y: &Vector, u: &Vector, u_prev: &Vector) -> f64 {
        let e = y - &self.reference;
        e.dot(&(&self.q * &e)) + self.ru * u.norm_squared() + self.rdu * (u - u_prev).norm_squared()
    }
}

/// Prediction matrices for one model and configuration.
///
/// Stacked outputs `Y = [C z_1; ...; C z_N] = phi z_0 + gamma U`.
#[derive(Debug, Clone)]
pub struct Condenser {
    model: LinearControlModel,
    cfg: MpcConfig,
    phi: Mat,
    gamma: Mat,
    /// Block-diagonal output weights over the horizon.
    qbar: Mat,
    /// First differences: `D U - E u_prev` stacks `u_k - u_{k-1}`.
    diff: Mat,
    hessian: Mat,
}

impl Condenser {
    pub fn new(model: &LinearControlModel, cfg: &MpcConfig) -> Result<Self> {
        let model = if model.kind == ModelKind::DelayMiso {
            model.to_augmented()?
        } else {
            model.clone()
        };
        let n_out = model.output_dim();
        cfg.validate(n_out)?;
        let nz = model.lifted_dim();
        let q = model.input_dim();
        let big_n = cfg.horizon;
        if model.b.shape() != (nz, q) {
            return Err(Error::invalid(
                "input matrix does not match the input dimension",
            ));
        }

        // powers[k] = C A^k
        let mut powers = Vec::with_capacity(big_n + 1);
        let mut cak = model.c.clone();
        for _ in 0..=big_n {
            let next = &cak * &model.a;
            powers.push(cak);
            cak = next;
        }
        let mut phi = Mat::zeros(big_n * n_out, nz);
        let mut gamma = Mat::zeros(big_n * n_out, big_n * q);
        let markov: Vec<Mat> = powers.iter().map(|p| p * &model.b).collect();
        for k in 1..=big_n {
            phi.view_mut(((k - 1) * n_out, 0), (n_out, nz))
                .copy_from(&powers[k]);
            for j in 0..k {
                gamma
                    .view_mut(((k - 1) * n_out, j * q), (n_out, q))
                    .copy_from(&markov[k - 1 - j]);
            }
        }
        let mut qbar = Mat::zeros(big_n * n_out, big_n * n_out);
        for k in 0..big_n {
            let w = if k + 1 == big_n {
                cfg.terminal_weight()
            } else {
                &cfg.q
            };
            qbar.view_mut((k * n_out, k * n_out), (n_out, n_out))
                .copy_from(w);
        }
        let nu = big_n * q;
        let mut diff = Mat::identity(nu, nu);
        for i in q..nu {
            diff[(i, i - q)] = -1.0;
        }
        let gq = gamma.transpose() * &qbar;
        let mut hessian =
            (&gq * &gamma + Mat::identity(nu, nu) * cfg.ru + diff.transpose() * &diff * cfg.rdu)
                * 2.0;
        hessian = (&hessian + hessian.transpose()) * 0.5;
        Ok(Self {
            model,
            cfg: cfg.clone(),
            phi,
            gamma,
            qbar,
            diff,
            hessian,
        })
    }

    pub fn model(&self) -> &LinearControlModel {
        &self.model
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    /// QP in the stacked inputs for lifted state `z0` and last applied input.
    pub fn qp(&self, z0: &Vector, u_prev: &Vector) -> Result<QpProblem> {
        let q = self.model.input_dim();
        let big_n = self.cfg.horizon;
        if z0.len() != self.model.lifted_dim() || u_prev.len() != q {
            return Err(Error::invalid(
                "lifted state or previous input has the wrong dimension",
            ));
        }
        let nu = big_n * q;
        let mut rstack = Vector::zeros(big_n * self.cfg.reference.len());
        for k in 0..big_n {
            rstack
                .rows_mut(k * self.cfg.reference.len(), self.cfg.reference.len())
                .copy_from(&self.cfg.reference);
        }
        let mut eprev = Vector::zeros(nu);
        eprev.rows_mut(0, q).copy_from(u_prev);

        let free = &self.phi * z0 - rstack;
        let g = (self.gamma.transpose() * (&self.qbar * free)
            - self.diff.transpose() * &eprev * self.cfg.rdu)
            * 2.0;

        let mut a_ineq = Mat::zeros(2 * nu, nu);
        a_ineq.rows_mut(0, nu).copy_from(&self.diff);
        a_ineq.rows_mut(nu, nu).copy_from(&(-&self.diff));
        let mut b_ineq = Vector::zeros(2 * nu);
        for i in 0..nu {
            b_ineq[i] = self.cfg.du_max + eprev[i];
            b_ineq[nu + i] = -self.cfg.du_min - eprev[i];
        }
        Ok(QpProblem {
            h: self.hessian.clone(),
            g,
            a_ineq,
            b_ineq,
            lb: Vector::from_element(nu, self.cfg.u_min),
            ub: Vector::from_element(nu, self.cfg.u_max),
        })
    }
}

/// Builds the condensed QP for a single solve.
pub fn condense_qp(
    model: &LinearControlModel,
    z0: &Vector,
    u_prev: &Vector,
    cfg: &MpcConfig,
) -> Result<QpProblem> {
    Condenser::new(model, cfg)?.qp(z0, u_prev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    pub phase_one: bool,
    /// Whether the shifted previous solution was feasible for this QP.
    pub warm_start_feasible: bool,
}

#[derive(Debug, Clone)]
pub struct MpcStep {
    pub u0: Vector,
    pub sequence: Vec<Vector>,
    pub stats: SolveStats,
}

/// Stateful controller that warm-starts each QP from the shifted previous solution.
#[derive(Debug, Clone)]
pub struct MpcController {
    condenser: Condenser,
    previous: Option<Vector>,
}

impl MpcController {
    pub fn new(model: &LinearControlModel, cfg: &MpcConfig) -> Result<Self> {
        Ok(Self {
            condenser: Condenser::new(model, cfg)?,
            previous: None,
        })
    }

    pub fn condenser(&self) -> &Condenser {
        &self.condenser
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    pub fn step(&mut self, hist: &History, u_prev: &Vector) -> Result<MpcStep> {
        let model = self.condenser.model();
        let z0 = model.lift(hist)?;
        let qp = self.condenser.qp(&z0, u_prev)?;
        let q = model.input_dim();
        let nu = qp.dim();

        let shifted = self.previous.as_ref().map(|prev| {
            let mut s = Vector::zeros(nu);
            s.rows_mut(0, nu - q).copy_from(&prev.rows(q, nu - q));
            s.rows_mut(nu - q, q).copy_from(&prev.rows(nu - q, q));
            s
        });
        let warm_ok = shifted
            .as_ref()
            .is_some_and(|s| qp.max_violation(s) <= 1e-9);
        let start = match (&shifted, warm_ok) {
            (Some(s), true) => s.clone(),
            _ => Vector::zeros(nu),
        };

        let tol = self.condenser.config().qp_tol;
        let (x, stats) = match solve_qp_with(&qp, &start, tol, None) {
            Ok(sol) => (
                sol.x,
                SolveStats {
                    iterations: sol.iterations,
                    kkt_residual: sol.kkt_residual,
                    converged: true,
                    phase_one: sol.phase_one,
                    warm_start_feasible: warm_ok,
                },
            ),
            Err(Error::QpNotConverged {
                iterations,
                residual,
                best,
            }) if qp.max_violation(&best) <= APPLY_TOL => {
                log::warn!(
                    "MPC QP stopped after {iterations} iterations (residual {residual:.3e})"
                );
                (
                    best,
                    SolveStats {
                        iterations,
                        kkt_residual: residual,
                        converged: false,
                        phase_one: false,
                        warm_start_feasible: warm_ok,
                    },
                )
            }
            Err(e) => return Err(e),
        };
        let violation = qp.max_violation(&x);
        if violation > APPLY_TOL {
            return Err(Error::Infeasible(format!(
                "QP solution violates constraints by {violation:.3e}"
            )));
        }
        let cfg = self.condenser.config();
        let sequence: Vec<Vector> = (0..cfg.horizon)
            .map(|k| x.rows(k * q, q).into_owned())
            .collect();
        let u0 = project_input(&sequence[0], u_prev, cfg);
        self.previous = Some(x);
        Ok(MpcStep {
            u0,
            sequence,
            stats,
        })
    }
}

/// Snaps `u` onto the box and rate bounds (moves of at most `APPLY_TOL`).
fn project_input(u: &Vector, u_prev: &Vector, cfg: &MpcConfig) -> Vector {
    u.zip_map(u_prev, |v, p| {
        let lo = cfg.u_min.max(p + cfg.du_min);
        let hi = cfg.u_max.min(p + cfg.du_max);
        v.clamp(lo, hi)
    })
}

/// One MPC solve from a measurement (and, for delay models, its history).
pub fn mpc_step(
    model: &LinearControlModel,
    hist: &History,
    u_prev: &Vector,
    cfg: &MpcConfig,
) -> Result<MpcStep> {
    MpcController::new(model, cfg)?.step(hist, u_prev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopResult {
    pub trajectory: Trajectory,
    pub stage_costs: Vec<f64>,
    pub cumulative_cost: Vec<f64>,
    /// One entry per MPC solve (warm-up steps have none).
    pub solve_stats: Vec<SolveStats>,
    /// Initial steps run with `u = 0` to fill a delay model's history.
    pub warmup_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopSummary {
    pub final_state_norm: f64,
    pub cumulative_cost: f64,
    pub steps: usize,
    pub warmup_steps: usize,
    pub total_qp_iterations: usize,
    pub max_kkt_residual: f64,
    pub unconverged_solves: usize,
}

impl ClosedLoopResult {
    pub fn total_cost(&self) -> f64 {
        self.cumulative_cost.last().copied().unwrap_or(0.0)
    }

    pub fn final_norm(&self) -> f64 {
        self.trajectory.final_state().norm()
    }

    pub fn summary(&self) -> ClosedLoopSummary {
        ClosedLoopSummary {
            final_state_norm: self.final_norm(),
            cumulative_cost: self.total_cost(),
            steps: self.trajectory.steps(),
            warmup_steps: self.warmup_steps,
            total_qp_iterations: self.solve_stats.iter().map(|s| s.iterations).sum(),
            max_kkt_residual: self
                .solve_stats
                .iter()
                .map(|s| s.kkt_residual)
                .fold(0.0, f64::max),
            unconverged_solves: self.solve_stats.iter().filter(|s| !s.converged).count(),
        }
    }

    /// Columns `t,x1..,u1..,stage_cost,cumulative_cost`; the final row has no input.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let tr = &self.trajectory;
        let n = tr.states.first().map_or(0, |x| x.len());
        let q = tr.inputs.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=q).map(|i| format!("u{i}")));
        header.push("stage_cost".into());
        header.push("cumulative_cost".into());
        writeln!(w, "{}", header.join(","))?;
        for (k, (t, x)) in tr.times.iter().zip(&tr.states).enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            match tr.inputs.get(k) {
                Some(u) => {
                    row.extend(u.iter().map(|v| v.to_string()));
                    row.push(self.stage_costs[k].to_string());
                    row.push(self.cumulative_cost[k].to_string());
                }
                None => row.extend(std::iter::repeat_n(String::new(), q + 2)),
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Drives the true plant with MPC on `model` from `x0` until `t_end`.
///
/// The stage cost is evaluated on the measured plant state.
pub fn closed_loop_run(
    plant: &ControlSystem,
    model: &LinearControlModel,
    cfg: &MpcConfig,
    x0: &Vector,
    t_end: f64,
    dt: f64,
) -> Result<ClosedLoopResult> {
    if (dt - model.dt).abs() > 1e-12 * dt.abs().max(1.0) {
        return Err(Error::invalid(format!(
            "dt {dt} differs from the model's {}",
            model.dt
        )));
    }
    if x0.len() != plant.state_dim || model.input_dim() != plant.input_dim {
        return Err(Error::invalid("plant and model dimensions differ"));
    }
    let mut ctrl = MpcController::new(model, cfg)?;
    let q = plant.input_dim;
    let warmup = model.history_len();
    let keep = warmup + 1;
    let steps = step_count(t_end, dt);

    let mut out = ClosedLoopResult {
        trajectory: Trajectory {
            times: vec![0.0],
            states: vec![x0.clone()],
            inputs: Vec::with_capacity(steps),
        },
        stage_costs: Vec::with_capacity(steps),
        cumulative_cost: Vec::with_capacity(steps),
        solve_stats: Vec::with_capacity(steps),
        warmup_steps: warmup.min(steps),
    };
    let mut hist = History::current(x0.clone());
    let mut u_prev = Vector::zeros(q);
    let mut x = x0.clone();
    let mut total = 0.0;
    for k in 0..steps {
        let u = if k < warmup {
            Vector::zeros(q)
        } else {
            let step = ctrl
                .step(&hist, &u_prev)
                .map_err(|e| e.in_stage(format!("MPC step {k}")))?;
            out.solve_stats.push(step.stats);
            step.u0
        };
        let cost = cfg.stage_cost(&model.observe(&x), &u, &u_prev);
        total += cost;
        let t = k as f64 * dt;
        let next = plant.step(&x, &u, t, dt);
        out.trajectory.inputs.push(u.clone());
        out.stage_costs.push(cost);
        out.cumulative_cost.push(total);
        let next = match next {
            Ok(v) if v.iter().all(|c| c.abs() <= DIVERGENCE_BOUND) => v,
            Ok(v) => {
                out.trajectory.times.push(t + dt);
                out.trajectory.states.push(v);
                return Err(Error::Divergence {
                    step: k + 1,
                    partial: Box::new(out.trajectory),
                });
            }
            Err(_) => {
                out.trajectory.inputs.pop();
                return Err(Error::Divergence {
                    step: k,
                    partial: Box::new(out.trajectory),
                });
            }
        };
        out.trajectory.times.push((k + 1) as f64 * dt);
        out.trajectory.states.push(next.clone());
        hist.advance(u.clone(), next.clone(), keep);
        u_prev = u;
        x = next;
    }
    Ok(out)
}
