use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use koopmpc::dictionary::Dictionary;
use koopmpc::dynamics::{make_vanderpol, ControlSystem, Rect, SampleManifest, SampleSet};
use koopmpc::experiment::{
    fit_benchmark_models, median, run_benchmark, validation_errors, validation_trajectories,
    ExperimentConfig, RunOptions,
};
use koopmpc::mpc::closed_loop_run;
use koopmpc::numerics::Vector;
use koopmpc::sysid::{
    fit_delay_augmented, fit_dmdc, fit_edmdc, predict_rollout, DelayFitOptions, History,
};
use koopmpc::transfer::{
    estimate_controlled_transition, invariant_density, BoxPartition, UlamOptions,
};
use koopmpc::LinearControlModel;

#[derive(Parser)]
#[command(
    name = "koopmpc",
    version,
    about = "Koopman/DMDc surrogate models and MPC on the van der Pol oscillator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[arg(long, global = true, value_enum)]
    model: Option<ModelArg>,

    /// Worker threads.
    #[arg(long, global = true)]
    parallel: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate forced training trajectories.
    Generate {
        #[arg(long)]
        n_traj: Option<usize>,
        /// Trajectory length in time units.
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Fit models to a generated data directory.
    Fit {
        #[arg(long)]
        data: PathBuf,
    },
    /// Roll a fitted model over the validation set.
    Predict {
        #[arg(long)]
        model_file: PathBuf,
    },
    /// Closed-loop MPC on the van der Pol plant.
    Mpc {
        /// Fitted model; fits one from fresh data when absent.
        #[arg(long)]
        model_file: Option<PathBuf>,
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "2,0"
        )]
        x0: Vec<f64>,
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Ulam transition matrices per input level and their invariant densities.
    Ulam {
        #[arg(long, value_enum, default_value = "vanderpol")]
        plant: PlantArg,
        /// Boxes per dimension.
        #[arg(long, default_value_t = 20)]
        boxes: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "-5,0,5"
        )]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 4.0)]
        half_width: f64,
        /// Longest integration substep.
        #[arg(long, default_value_t = 0.01)]
        max_dt: f64,
    },
    /// Full benchmark: data, fits, validation and closed-loop cost maps.
    Benchmark,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Dmdc,
    Edmdc,
    Delay,
}

impl ModelArg {
    fn name(self) -> &'static str {
        match self {
            ModelArg::Dmdc => "dmdc",
            ModelArg::Edmdc => "edmdc",
            ModelArg::Delay => "delay",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlantArg {
    Vanderpol,
    /// `dx/dt = 0`
    Still,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => koopmpc::parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if let (Some(n), false) = (cli.parallel, matches!(cli.command, Command::Benchmark)) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()?;
    }
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::Generate { n_traj, t_end } => generate(&cli, cfg, *n_traj, *t_end),
        Command::Fit { data } => fit(&cli, &cfg, data),
        Command::Predict { model_file } => predict(&cli, &cfg, model_file),
        Command::Mpc {
            model_file,
            x0,
            t_end,
        } => mpc(&cli, &cfg, model_file.as_deref(), x0, *t_end),
        Command::Ulam {
            plant,
            boxes,
            samples,
            tau,
            levels,
            half_width,
            max_dt,
        } => {
            let sys = match plant {
                PlantArg::Vanderpol => make_vanderpol(cfg.mu),
                PlantArg::Still => ControlSystem::ode("still", 2, 1, |_x, _u, _t| Vector::zeros(2)),
            };
            let opts = UlamOptions {
                tau: *tau,
                samples_per_box: *samples,
                seed: cfg.seed,
                max_dt: *max_dt,
            };
            ulam(&cli, &sys, *boxes, *half_width, levels, &opts)
        }
        Command::Benchmark => benchmark(&cli, &cfg),
    }
}

fn generate(
    cli: &Cli,
    mut cfg: ExperimentConfig,
    n_traj: Option<usize>,
    t_end: Option<f64>,
) -> Result<()> {
    if let Some(n) = n_traj {
        cfg.n_traj = n;
    }
    if let Some(t) = t_end {
        cfg.t_train = t;
    }
    cfg.validate()?;
    let plant = make_vanderpol(cfg.mu);
    let family = koopmpc::ForcingFamily::ProductSines {
        amplitude: cfg.forcing_amplitude,
        sigma: cfg.forcing_sigma,
    };
    let data = koopmpc::dynamics::sample_training_set(
        &plant,
        cfg.n_traj,
        &Rect::square(2, cfg.train_half_width),
        cfg.t_train,
        cfg.dt,
        &family,
        cfg.seed,
    )?;
    data.write_csv(BufWriter::new(File::create(cli.out.join("training.csv"))?))?;
    write_json(&cli.out.join("training_manifest.json"), &data.manifest())?;
    println!(
        "{} samples from {} trajectories ({} diverged) -> {}",
        data.len(),
        cfg.n_traj - data.meta.diverged,
        data.meta.diverged,
        cli.out.display()
    );
    Ok(())
}

fn load_samples(dir: &Path) -> Result<SampleSet> {
    let manifest: SampleManifest = serde_json::from_reader(BufReader::new(
        File::open(dir.join("training_manifest.json")).context("reading training_manifest.json")?,
    ))?;
    let csv = File::open(dir.join("training.csv")).context("reading training.csv")?;
    Ok(SampleSet::read_csv(BufReader::new(csv), &manifest)?)
}

fn fit_one(kind: ModelArg, cfg: &ExperimentConfig, data: &SampleSet) -> Result<LinearControlModel> {
    let n = data.state_dim();
    Ok(match kind {
        ModelArg::Dmdc => fit_dmdc(data, cfg.svd_tol)?,
        ModelArg::Edmdc => fit_edmdc(
            data,
            &Dictionary::monomials(n, cfg.edmdc_order),
            cfg.svd_tol,
        )?,
        ModelArg::Delay => {
            let mut opts = DelayFitOptions::full_state(cfg.delay_depth, n)?;
            opts.svd_tol = cfg.svd_tol;
            fit_delay_augmented(&data.trajectories(), &opts)?
        }
    })
}

fn fit(cli: &Cli, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let data = load_samples(dir)?;
    let kinds = match cli.model {
        Some(m) => vec![m],
        None => vec![ModelArg::Dmdc, ModelArg::Edmdc, ModelArg::Delay],
    };
    for kind in kinds {
        let model =
            fit_one(kind, cfg, &data).with_context(|| format!("fitting {}", kind.name()))?;
        let path = cli.out.join(format!("model_{}.json", kind.name()));
        fs::write(&path, model.to_json()?)?;
        println!(
            "{}: lifted dim {}, fit residual {:.3e} -> {}",
            kind.name(),
            model.lifted_dim(),
            model.fit_residual,
            path.display()
        );
    }
    Ok(())
}

fn read_model(path: &Path) -> Result<LinearControlModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(LinearControlModel::from_json(&text)?)
}

fn predict(cli: &Cli, cfg: &ExperimentConfig, model_file: &Path) -> Result<()> {
    let model = read_model(model_file)?;
    let (trajs, _) = validation_trajectories(cfg)?;
    let start = cfg.delay_depth - 1;
    let (one, full) = validation_errors(&model, &trajs, start, cfg.horizon)?;

    let n = model.output_dim();
    let mut w = BufWriter::new(File::create(cli.out.join("predictions.csv"))?);
    let mut header = vec!["trajectory".to_string(), "k".into(), "t".into()];
    header.extend((1..=n).map(|i| format!("pred_x{i}")));
    header.extend((1..=n).map(|i| format!("true_x{i}")));
    writeln!(w, "{}", header.join(","))?;
    for (i, t) in trajs.iter().enumerate() {
        let pred = predict_rollout(
            &model,
            &History::from_trajectory(t, start),
            &t.inputs[start..start + cfg.horizon],
        )?;
        for k in 0..=cfg.horizon {
            let truth = model.observe(&t.states[start + k]);
            let mut row = vec![i.to_string(), k.to_string(), t.times[start + k].to_string()];
            row.extend(pred.states[k].iter().map(|v| v.to_string()));
            row.extend(truth.iter().map(|v| v.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
    }
    let summary = serde_json::json!({
        "model": format!("{:?}", model.kind),
        "trajectories": trajs.len(),
        "horizon": cfg.horizon,
        "one_step_rms_median": median(&one),
        "rollout_rms_median": median(&full),
        "one_step_rms": one,
        "rollout_rms": full,
    });
    write_json(&cli.out.join("prediction_summary.json"), &summary)?;
    println!(
        "median one-step RMS {:.4e}, {}-step RMS {:.4e}",
        median(&one),
        cfg.horizon,
        median(&full)
    );
    Ok(())
}

fn mpc(
    cli: &Cli,
    cfg: &ExperimentConfig,
    model_file: Option<&Path>,
    x0: &[f64],
    t_end: Option<f64>,
) -> Result<()> {
    let model = match model_file {
        Some(p) => read_model(p)?,
        None => {
            let name = cli.model.unwrap_or(ModelArg::Edmdc).name();
            let fitted = fit_benchmark_models(cfg)?;
            fitted
                .models
                .into_iter()
                .find(|(n, _)| n == name)
                .map(|(_, m)| m)
                .expect("benchmark fits every model kind")
        }
    };
    if x0.len() != 2 {
        bail!("--x0 needs two comma-separated values");
    }
    let plant = make_vanderpol(cfg.mu);
    let result = closed_loop_run(
        &plant,
        &model,
        &cfg.mpc_config(),
        &Vector::from_column_slice(x0),
        t_end.unwrap_or(cfg.t_end),
        cfg.dt,
    )?;
    result.write_csv(BufWriter::new(File::create(
        cli.out.join("closed_loop.csv"),
    )?))?;
    let summary = result.summary();
    write_json(&cli.out.join("closed_loop_summary.json"), &summary)?;
    println!(
        "final |x| {:.4e}, cumulative cost {:.4}, {} QP iterations",
        summary.final_state_norm, summary.cumulative_cost, summary.total_qp_iterations
    );
    Ok(())
}

fn ulam(
    cli: &Cli,
    sys: &ControlSystem,
    boxes: usize,
    half_width: f64,
    levels: &[f64],
    opts: &UlamOptions,
) -> Result<()> {
    let part = BoxPartition::new(
        Rect::square(sys.state_dim, half_width),
        vec![boxes; sys.state_dim],
    )?;
    let levels: Vec<Vec<f64>> = levels.iter().map(|&u| vec![u]).collect();
    let chain = estimate_controlled_transition(sys, &part, &levels, opts)?;
    write_json(&cli.out.join("chain.json"), &chain)?;

    let mut densities = Vec::with_capacity(levels.len());
    for (i, m) in chain.mats.iter().enumerate() {
        m.write_csv(BufWriter::new(File::create(
            cli.out.join(format!("transition_level{i}.csv")),
        )?))?;
        densities.push(
            invariant_density(m)
                .with_context(|| format!("invariant density for level {:?}", levels[i]))?,
        );
    }
    let mut w = BufWriter::new(File::create(cli.out.join("invariant_densities.csv"))?);
    let mut header = vec!["box".to_string()];
    header.extend(levels.iter().map(|l| format!("u={}", l[0])));
    writeln!(w, "{}", header.join(","))?;
    for b in 0..=part.len() {
        let mut row = vec![if b == part.len() {
            "outside".to_string()
        } else {
            b.to_string()
        }];
        row.extend(densities.iter().map(|d| d.0[b].to_string()));
        writeln!(w, "{}", row.join(","))?;
    }
    for (l, d) in levels.iter().zip(&densities) {
        println!("u = {}: outside mass {:.4}", l[0], d.0[part.len()]);
    }
    Ok(())
}

fn benchmark(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let opts = RunOptions {
        threads: cli.parallel,
        out_dir: Some(cli.out.clone()),
    };
    let (report, timing) = run_benchmark(cfg, &opts)?;
    println!(
        "{:<8} {:>14} {:>14}",
        "model",
        "1-step RMS",
        format!("{}-step RMS", cfg.horizon)
    );
    for m in &report.models {
        println!(
            "{:<8} {:>14.4e} {:>14.4e}",
            m.name, m.one_step_rms_median, m.rollout_rms_median
        );
    }
    for s in &report.success {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.0}%", 100.0 * x));
        println!(
            "{:<8} success: validation {}, grid {}",
            s.model,
            pct(s.validation_success_rate),
            pct(s.grid_success_rate)
        );
    }
    println!(
        "wall time {:.1} s -> {}",
        timing.wall_seconds,
        cli.out.display()
    );
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
