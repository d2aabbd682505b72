//! End-to-end van der Pol benchmark: data generation, the three DMDc-family
//! fits, validation errors and closed-loop MPC cost maps.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::dynamics::{
    make_vanderpol, sample_trajectories, ForcingFamily, Rect, SampleMeta, SampleSet, Trajectory,
};
use crate::error::{Error, Result};
use crate::mpc::{closed_loop_run, MpcConfig};
use crate::numerics::{Mat, Vector};
use crate::sysid::{
    fit_delay_augmented, fit_dmdc, fit_edmdc, predict_rollout, DelayFitOptions, History,
    LinearControlModel,
};

pub const MODEL_NAMES: [&str; 3] = ["dmdc", "edmdc", "delay"];

/// Benchmark settings; every field has a default and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mu: f64,
    pub n_traj: usize,
    /// Training initial conditions are uniform in `[-w, w]^2`.
    pub train_half_width: f64,
    pub t_train: f64,
    pub dt: f64,
    pub forcing_amplitude: f64,
    /// Standard deviation of the forcing frequencies.
    pub forcing_sigma: f64,
    pub svd_tol: f64,
    pub edmdc_order: u32,
    pub delay_depth: usize,
    pub horizon: usize,
    /// `Q = q_weight * I`.
    pub q_weight: f64,
    /// Terminal weight `q_terminal * I`; `q_weight` when absent.
    pub q_terminal: Option<f64>,
    pub ru: f64,
    pub rdu: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub du_min: f64,
    pub du_max: f64,
    pub reference: Vec<f64>,
    pub n_validation: usize,
    pub validation_half_width: f64,
    pub t_end: f64,
    pub success_threshold: f64,
    pub grid_points: usize,
    pub grid_half_width: f64,
    /// Edges of the initial-condition distance bands for success rates.
    pub band_edges: Vec<f64>,
    pub closed_loop_validation: bool,
    pub closed_loop_grid: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            mu: 0.2,
            n_traj: 200,
            train_half_width: 6.0,
            t_train: 1.0,
            dt: 0.05,
            forcing_amplitude: 5.0,
            forcing_sigma: 10.0,
            svd_tol: crate::numerics::DEFAULT_SVD_TOL,
            edmdc_order: 5,
            delay_depth: 5,
            horizon: 15,
            q_weight: 1.0,
            q_terminal: None,
            ru: 0.1,
            rdu: 0.1,
            u_min: -5.0,
            u_max: 5.0,
            du_min: -50.0,
            du_max: 50.0,
            reference: vec![0.0, 0.0],
            n_validation: 50,
            validation_half_width: 3.0,
            t_end: 30.0,
            success_threshold: 0.05,
            grid_points: 9,
            grid_half_width: 4.0,
            band_edges: vec![0.0, 2.0, 4.0, 6.0],
            closed_loop_validation: true,
            closed_loop_grid: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_traj == 0 || self.n_validation == 0 {
            return fail("n_traj and n_validation must be positive");
        }
        if !(self.dt > 0.0 && self.t_train >= self.dt && self.t_end > 0.0) {
            return fail("dt, t_train and t_end must be positive with t_train >= dt");
        }
        if self.delay_depth == 0 || self.horizon == 0 || self.edmdc_order == 0 {
            return fail("delay_depth, horizon and edmdc_order must be at least 1");
        }
        if self.reference.len() != 2 {
            return fail("reference must have two entries");
        }
        if self.band_edges.len() < 2 || self.band_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return fail("band_edges must be increasing with at least two entries");
        }
        self.mpc_config()
            .validate(2)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig {
            q: Mat::identity(2, 2) * self.q_weight,
            q_terminal: self.q_terminal.map(|w| Mat::identity(2, 2) * w),
            ru: self.ru,
            rdu: self.rdu,
            horizon: self.horizon,
            u_min: self.u_min,
            u_max: self.u_max,
            du_min: self.du_min,
            du_max: self.du_max,
            reference: Vector::from_column_slice(&self.reference),
            ..MpcConfig::benchmark(2)
        }
    }

    fn forcing(&self) -> ForcingFamily {
        ForcingFamily::ProductSines {
            amplitude: self.forcing_amplitude,
            sigma: self.forcing_sigma,
        }
    }

    /// Seed for the validation set, distinct from the training seed.
    pub fn validation_seed(&self) -> u64 {
        self.seed ^ 0x9E37_79B9_7F4A_7C15
    }

    /// Row-major grid of initial conditions, first coordinate varying fastest.
    pub fn grid(&self) -> Vec<Vector> {
        let n = self.grid_points;
        let w = self.grid_half_width;
        let coord = |i: usize| {
            if n == 1 {
                0.0
            } else {
                -w + 2.0 * w * i as f64 / (n - 1) as f64
            }
        };
        (0..n * n)
            .map(|k| Vector::from_vec(vec![coord(k % n), coord(k / n)]))
            .collect()
    }
}

/// Reads a TOML config; an empty file gives the defaults.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub lifted_dim: usize,
    pub fit_residual: f64,
    pub one_step_rms_median: f64,
    pub rollout_rms_median: f64,
    pub one_step_rms: Vec<f64>,
    pub rollout_rms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub model: String,
    pub x0: Vec<f64>,
    /// Absent when the run failed.
    pub cumulative_cost: Option<f64>,
    pub final_norm: Option<f64>,
    pub success: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRate {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessSummary {
    pub model: String,
    pub validation_success_rate: Option<f64>,
    pub grid_success_rate: Option<f64>,
    pub grid_bands: Vec<BandRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub validation_seed: u64,
    pub version: String,
    pub training_digest: String,
    pub training_samples: usize,
    pub training_diverged: usize,
    pub validation_diverged: usize,
}

/// Everything except timing, so equal seeds give byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: ExperimentConfig,
    pub metadata: ReportMetadata,
    pub models: Vec<ModelReport>,
    pub validation_costs: Vec<CostRow>,
    pub grid_costs: Vec<CostRow>,
    pub success: Vec<SuccessSummary>,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn success_for(&self, name: &str) -> Option<&SuccessSummary> {
        self.success.iter().find(|m| m.model == name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTiming {
    pub threads: usize,
    pub stages: Vec<(String, f64)>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; the global pool when `None`.
    pub threads: Option<usize>,
    /// Artifacts are written here as each stage finishes.
    pub out_dir: Option<PathBuf>,
}

pub struct FittedModels {
    pub training: SampleSet,
    pub models: Vec<(String, LinearControlModel)>,
}

/// Generates the training set and fits DMDc, eDMDc and delay DMDc.
pub fn fit_benchmark_models(cfg: &ExperimentConfig) -> Result<FittedModels> {
    let plant = make_vanderpol(cfg.mu);
    let region = Rect::square(2, cfg.train_half_width);
    let (trajs, diverged) = sample_trajectories(
        &plant,
        cfg.n_traj,
        &region,
        cfg.t_train,
        cfg.dt,
        &cfg.forcing(),
        cfg.seed,
    )
    .map_err(|e| e.in_stage("training data"))?;
    let meta = SampleMeta {
        seed: cfg.seed,
        requested_trajectories: cfg.n_traj,
        diverged,
    };
    let training = SampleSet::from_trajectories(&trajs, cfg.dt, meta)
        .map_err(|e| e.in_stage("training data"))?;

    let dmdc = fit_dmdc(&training, cfg.svd_tol).map_err(|e| e.in_stage("fit dmdc"))?;
    let dict = Dictionary::monomials(2, cfg.edmdc_order);
    let edmdc = fit_edmdc(&training, &dict, cfg.svd_tol).map_err(|e| e.in_stage("fit edmdc"))?;
    let mut opts =
        DelayFitOptions::full_state(cfg.delay_depth, 2).map_err(|e| e.in_stage("fit delay"))?;
    opts.svd_tol = cfg.svd_tol;
    let delay = fit_delay_augmented(&trajs, &opts).map_err(|e| e.in_stage("fit delay"))?;
    Ok(FittedModels {
        training,
        models: vec![
            ("dmdc".into(), dmdc),
            ("edmdc".into(), edmdc),
            ("delay".into(), delay),
        ],
    })
}

/// Fresh trajectories long enough for a delay warm-up plus one horizon.
pub fn validation_trajectories(cfg: &ExperimentConfig) -> Result<(Vec<Trajectory>, usize)> {
    let plant = make_vanderpol(cfg.mu);
    let steps = cfg.delay_depth - 1 + cfg.horizon;
    sample_trajectories(
        &plant,
        cfg.n_validation,
        &Rect::square(2, cfg.validation_half_width),
        steps as f64 * cfg.dt,
        cfg.dt,
        &cfg.forcing(),
        cfg.validation_seed(),
    )
}

/// One-step and full-horizon RMS of the recovered state, starting every
/// model at the same sample so delay models have their history.
pub fn validation_errors(
    model: &LinearControlModel,
    trajs: &[Trajectory],
    start: usize,
    horizon: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut one = Vec::with_capacity(trajs.len());
    let mut full = Vec::with_capacity(trajs.len());
    for t in trajs {
        if t.steps() < start + horizon {
            return Err(Error::InsufficientData(
                "validation trajectory too short".into(),
            ));
        }
        let pred = predict_rollout(
            model,
            &History::from_trajectory(t, start),
            &t.inputs[start..start + horizon],
        )?;
        let sq: Vec<f64> = (1..=horizon)
            .map(|k| {
                let truth = model.observe(&t.states[start + k]);
                (&pred.states[k] - truth).norm_squared() / pred.states[k].len() as f64
            })
            .collect();
        one.push(sq[0].sqrt());
        full.push((sq.iter().sum::<f64>() / horizon as f64).sqrt());
    }
    Ok((one, full))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn cost_rows(
    cfg: &ExperimentConfig,
    models: &[(String, LinearControlModel)],
    ics: &[Vector],
) -> Vec<CostRow> {
    let plant = make_vanderpol(cfg.mu);
    let mpc = cfg.mpc_config();
    let jobs: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..ics.len()).map(move |i| (m, i)))
        .collect();
    jobs.par_iter()
        .map(|&(m, i)| {
            let (name, model) = &models[m];
            let x0 = &ics[i];
            let base = CostRow {
                model: name.clone(),
                x0: x0.iter().copied().collect(),
                cumulative_cost: None,
                final_norm: None,
                success: false,
                error: None,
            };
            match closed_loop_run(&plant, model, &mpc, x0, cfg.t_end, cfg.dt) {
                Ok(r) => {
                    let norm = r.final_norm();
                    CostRow {
                        cumulative_cost: Some(r.total_cost()),
                        final_norm: Some(norm),
                        success: norm < cfg.success_threshold,
                        ..base
                    }
                }
                Err(e) => CostRow {
                    error: Some(e.to_string()),
                    ..base
                },
            }
        })
        .collect()
}

fn success_rate(rows: &[&CostRow]) -> Option<f64> {
    if rows.is_empty() {
        None
    } else {
        Some(rows.iter().filter(|r| r.success).count() as f64 / rows.len() as f64)
    }
}

fn summarize(
    cfg: &ExperimentConfig,
    validation: &[CostRow],
    grid: &[CostRow],
) -> Vec<SuccessSummary> {
    MODEL_NAMES
        .iter()
        .map(|&name| {
            let val: Vec<&CostRow> = validation.iter().filter(|r| r.model == name).collect();
            let gr: Vec<&CostRow> = grid.iter().filter(|r| r.model == name).collect();
            let grid_bands = cfg
                .band_edges
                .windows(2)
                .map(|w| {
                    let inside: Vec<&CostRow> = gr
                        .iter()
                        .copied()
                        .filter(|r| {
                            let d = r.x0.iter().map(|v| v * v).sum::<f64>().sqrt();
                            d >= w[0] && d < w[1]
                        })
                        .collect();
                    BandRate {
                        lo: w[0],
                        hi: w[1],
                        count: inside.len(),
                        success_rate: success_rate(&inside).unwrap_or(0.0),
                    }
                })
                .collect();
            SuccessSummary {
                model: name.to_string(),
                validation_success_rate: success_rate(&val),
                grid_success_rate: success_rate(&gr),
                grid_bands,
            }
        })
        .collect()
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_cost_csv(path: &Path, rows: &[CostRow]) -> Result<()> {
    let mut out = String::from("model,x1,x2,cumulative_cost,final_norm,success\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.model,
            r.x0[0],
            r.x0[1],
            opt(r.cumulative_cost),
            opt(r.final_norm),
            r.success
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_validation_csv(path: &Path, models: &[ModelReport]) -> Result<()> {
    let mut out = String::from("model,trajectory,one_step_rms,rollout_rms\n");
    for m in models {
        for (i, (a, b)) in m.one_step_rms.iter().zip(&m.rollout_rms).enumerate() {
            out.push_str(&format!("{},{i},{a},{b}\n", m.name));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Runs the full benchmark; the report is independent of the thread count.
pub fn run_benchmark(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<(BenchmarkReport, BenchmarkTiming)> {
    cfg.validate()?;
    match opts.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid(e.to_string()))?;
            pool.install(|| run_inner(cfg, opts))
        }
        None => run_inner(cfg, opts),
    }
}

fn run_inner(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<(BenchmarkReport, BenchmarkTiming)> {
    let wall = Instant::now();
    let mut timing = BenchmarkTiming {
        threads: rayon::current_num_threads(),
        ..Default::default()
    };
    let mut lap = Instant::now();
    let mut mark = |timing: &mut BenchmarkTiming, stage: &str| {
        timing
            .stages
            .push((stage.to_string(), lap.elapsed().as_secs_f64()));
        lap = Instant::now();
    };
    let out = opts.out_dir.as_deref();
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    }

    let fitted = fit_benchmark_models(cfg)?;
    if let Some(dir) = out {
        fitted
            .training
            .write_csv(fs::File::create(dir.join("training.csv"))?)?;
        write_json(dir, "training_manifest.json", &fitted.training.manifest())?;
        for (name, m) in &fitted.models {
            fs::write(dir.join(format!("model_{name}.json")), m.to_json()?)?;
        }
    }
    mark(&mut timing, "fit");

    let (val, val_diverged) =
        validation_trajectories(cfg).map_err(|e| e.in_stage("validation data"))?;
    if val.is_empty() {
        return Err(
            Error::InsufficientData("every validation trajectory diverged".into())
                .in_stage("validation data"),
        );
    }
    let start = cfg.delay_depth - 1;
    let mut models = Vec::new();
    for (name, m) in &fitted.models {
        let (one, full) = validation_errors(m, &val, start, cfg.horizon)
            .map_err(|e| e.in_stage(format!("validate {name}")))?;
        models.push(ModelReport {
            name: name.clone(),
            lifted_dim: m.lifted_dim(),
            fit_residual: m.fit_residual,
            one_step_rms_median: median(&one),
            rollout_rms_median: median(&full),
            one_step_rms: one,
            rollout_rms: full,
        });
    }
    if let Some(dir) = out {
        write_validation_csv(&dir.join("validation_errors.csv"), &models)?;
    }
    mark(&mut timing, "validation");

    let validation_costs = if cfg.closed_loop_validation {
        let ics: Vec<Vector> = val.iter().map(|t| t.states[0].clone()).collect();
        cost_rows(cfg, &fitted.models, &ics)
    } else {
        vec![]
    };
    mark(&mut timing, "closed loop (validation)");
    let grid_costs = if cfg.closed_loop_grid {
        cost_rows(cfg, &fitted.models, &cfg.grid())
    } else {
        vec![]
    };
    mark(&mut timing, "closed loop (grid)");

    let report = BenchmarkReport {
        config: cfg.clone(),
        metadata: ReportMetadata {
            seed: cfg.seed,
            validation_seed: cfg.validation_seed(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            training_digest: fitted.training.digest(),
            training_samples: fitted.training.len(),
            training_diverged: fitted.training.meta.diverged,
            validation_diverged: val_diverged,
        },
        models,
        success: summarize(cfg, &validation_costs, &grid_costs),
        validation_costs,
        grid_costs,
    };
    timing.wall_seconds = wall.elapsed().as_secs_f64();
    if let Some(dir) = out {
        write_cost_csv(&dir.join("validation_costs.csv"), &report.validation_costs)?;
        write_cost_csv(&dir.join("cost_map.csv"), &report.grid_costs)?;
        fs::write(dir.join("report.json"), report.to_json()?)?;
        write_json(dir, "timing.json", &timing)?;
    }
    Ok((report, timing))
}
