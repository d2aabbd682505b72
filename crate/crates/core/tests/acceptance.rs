//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fail.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{grid_minimizer, loglog_slope, random_mat, random_qp_2d, rng};
use koopmpc::dictionary::Dictionary;
use koopmpc::dynamics::{
    make_slow_manifold, make_vanderpol, sample_training_set, simulate, state_derivatives,
    ControlSystem, ForcingFamily, ForcingSignal, Rect, SampleMeta, SampleSet, Trajectory,
};
use koopmpc::experiment::{run_benchmark, BenchmarkReport, ExperimentConfig, RunOptions};
use koopmpc::mpc::{condense_qp, MpcConfig};
use koopmpc::numerics::{solve_qp, Mat, Vector, DEFAULT_SVD_TOL};
use koopmpc::sysid::{
    fit_dmdc, fit_edmdc, identify_eigenfunctions, predict_rollout, History, Lifting, ModelKind,
    SparseOptions,
};
use koopmpc::transfer::{
    estimate_controlled_transition, invariant_density, BoxPartition, TransitionMatrix, UlamOptions,
};
use koopmpc::LinearControlModel;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn exact_recovery() -> Outcome {
    let t0 = Instant::now();
    let a0 = Mat::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
    let b0 = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
    let mut r = rng(1);
    let trajs: Vec<Trajectory> = (0..50)
        .map(|_| {
            let x = random_mat(&mut r, 2, 1).column(0).into_owned();
            let u = random_mat(&mut r, 1, 1).column(0).into_owned();
            Trajectory {
                times: vec![0.0, 1.0],
                states: vec![x.clone(), &a0 * &x + &b0 * &u],
                inputs: vec![u],
            }
        })
        .collect();
    let meta = SampleMeta {
        seed: 1,
        requested_trajectories: 50,
        diverged: 0,
    };
    let data = SampleSet::from_trajectories(&trajs, 1.0, meta).unwrap();
    let m = match fit_dmdc(&data, DEFAULT_SVD_TOL) {
        Ok(m) => m,
        Err(e) => return outcome(false, e.to_string()),
    };
    let secs = t0.elapsed().as_secs_f64();
    let (ea, eb) = ((&m.a - &a0).norm(), (&m.b - &b0).norm());
    outcome(
        ea <= 1e-8 && eb <= 1e-8 && secs < 1.0,
        format!("|A-A0|_F = {ea:.2e}, |B-B0|_F = {eb:.2e}, {secs:.3} s"),
    )
}

const MU_S: f64 = -0.05;
const LAMBDA_S: f64 = -1.0;

fn exact_closure() -> Outcome {
    let sys = make_slow_manifold(MU_S, LAMBDA_S);
    let family = ForcingFamily::ProductSines {
        amplitude: 1.0,
        sigma: 3.0,
    };
    let data = sample_training_set(&sys, 20, &Rect::square(2, 2.0), 1.0, 0.01, &family, 2).unwrap();
    let dict = Dictionary::from_exponents(2, &[&[1, 0], &[0, 1], &[2, 0]]).unwrap();
    let model = fit_edmdc(&data, &dict, DEFAULT_SVD_TOL).unwrap();
    let forcing = ForcingSignal::ProductSines {
        amplitude: 1.0,
        w1: 1.3,
        w2: 2.9,
    };
    let x0 = Vector::from_vec(vec![-1.5, 0.7]);
    let truth = simulate(&sys, &x0, &forcing, 1.0, 0.01).unwrap();
    let pred = predict_rollout(&model, &History::current(x0), &truth.inputs).unwrap();
    let steps = truth.steps();
    let sq: f64 = (1..=steps)
        .map(|k| (&pred.states[k] - &truth.states[k]).norm_squared())
        .sum();
    let rms = (sq / (2 * steps) as f64).sqrt();
    outcome(
        steps == 100 && rms <= 1e-6,
        format!("{steps}-step rollout RMS = {rms:.2e}"),
    )
}

fn eigenfunction_oracle() -> Outcome {
    let mut r = rng(3);
    let x = Mat::from_fn(2, 200, |_, _| r.random_range(-2.0..2.0));
    let xdot =
        state_derivatives(&make_slow_manifold(MU_S, LAMBDA_S), &x, &Mat::zeros(1, 200)).unwrap();
    let ef = match identify_eigenfunctions(
        &x,
        &xdot,
        &Dictionary::monomials(2, 2),
        LAMBDA_S,
        &SparseOptions::default(),
    ) {
        Ok(ef) => ef,
        Err(e) => return outcome(false, e.to_string()),
    };
    let b = LAMBDA_S / (LAMBDA_S - 2.0 * MU_S);
    let n = (1.0 + b * b).sqrt();
    let expect = [0.0, 1.0 / n, -b / n, 0.0, 0.0];
    let err = ef
        .xi
        .iter()
        .zip(expect)
        .map(|(c, e)| (c - e).abs())
        .fold(0.0, f64::max);
    outcome(
        err <= 1e-5 && ef.residual <= 1e-8,
        format!("coefficient error {err:.2e}, residual {:.2e}", ef.residual),
    )
}

fn validation_ranking(reports: &[(u64, BenchmarkReport, f64)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (seed, rep, secs) in reports {
        let m = |n: &str| rep.model(n).unwrap().rollout_rms_median;
        let (e, d, p) = (m("edmdc"), m("delay"), m("dmdc"));
        pass &= e < d && d < p && *secs <= 300.0;
        parts.push(format!(
            "seed {seed}: {e:.3e} < {d:.3e} < {p:.3e} ({secs:.0} s)"
        ));
    }
    outcome(
        pass,
        format!(
            "eDMDc < delay < DMDc median 15-step RMS; {}",
            parts.join("; ")
        ),
    )
}

fn stabilization(rep: &BenchmarkReport) -> Outcome {
    let rate = |n: &str| {
        rep.success_for(n)
            .and_then(|s| s.validation_success_rate)
            .unwrap_or(0.0)
    };
    let (e, d, p) = (rate("edmdc"), rate("delay"), rate("dmdc"));
    let bands = &rep.success_for("dmdc").unwrap().grid_bands;
    let populated: Vec<f64> = bands
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| b.success_rate)
        .collect();
    let monotone = populated.windows(2).all(|w| w[1] <= w[0]);
    let band_txt: Vec<String> = bands
        .iter()
        .map(|b| format!("[{},{}): {:.2} of {}", b.lo, b.hi, b.success_rate, b.count))
        .collect();
    outcome(
        e >= 0.95 && d >= 0.95 && p >= 0.70 && monotone && !populated.is_empty(),
        format!(
            "success eDMDc {:.0}%, delay {:.0}%, DMDc {:.0}%; DMDc grid bands {}",
            100.0 * e,
            100.0 * d,
            100.0 * p,
            band_txt.join(", ")
        ),
    )
}

fn ulam_properties() -> Outcome {
    let doubling = ControlSystem::map("doubling", 1, 1, |x, _u, _t| {
        x.map(|v| (2.0 * v).rem_euclid(1.0))
    });
    let unit = BoxPartition::new(Rect::new(vec![0.0], vec![1.0]).unwrap(), vec![2]).unwrap();
    let opts = UlamOptions {
        tau: 1.0,
        samples_per_box: 1000,
        seed: 5,
        max_dt: 1.0,
    };
    let dchain = estimate_controlled_transition(&doubling, &unit, &[vec![0.0]], &opts).unwrap();
    let derr = dchain.mats[0].interior().map(|v| (v - 0.5).abs()).max();

    let part = BoxPartition::new(Rect::square(2, 4.0), vec![10, 10]).unwrap();
    let vopts = UlamOptions {
        tau: 0.5,
        samples_per_box: 100,
        seed: 5,
        max_dt: 0.05,
    };
    let vchain = estimate_controlled_transition(
        &make_vanderpol(0.2),
        &part,
        &[vec![-5.0], vec![0.0], vec![5.0]],
        &vopts,
    )
    .unwrap();
    let col_err = vchain
        .mats
        .iter()
        .chain(&dchain.mats)
        .flat_map(|m| {
            m.p.column_iter()
                .map(|c| (c.sum() - 1.0).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);

    let two =
        TransitionMatrix::from_mat(Mat::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.8]), 1.0).unwrap();
    let pi = invariant_density(&two).unwrap();
    let perr = (pi.0[0] - 2.0 / 3.0).abs().max((pi.0[1] - 1.0 / 3.0).abs());
    outcome(
        col_err <= 1e-12 && derr <= 0.05 && perr <= 1e-9,
        format!("max column-sum error {col_err:.1e}, doubling-map max error {derr:.3}, 2-state pi error {perr:.1e}"),
    )
}

fn qp_oracle() -> Outcome {
    let mut r = rng(77);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let q = random_qp_2d(&mut r);
        match solve_qp(&q, &Vector::zeros(2), 1e-10) {
            Ok(x) => worst = worst.max((x - grid_minimizer(&q, 1e-3)).amax()),
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    let model = LinearControlModel {
        kind: ModelKind::Dmdc,
        a: Mat::from_element(1, 1, 1.1),
        b: Mat::from_element(1, 1, 0.8),
        c: Mat::identity(1, 1),
        lifting: Lifting::Dictionary {
            dictionary: Dictionary::identity(1),
        },
        dt: 0.1,
        fit_residual: 0.0,
        training_digest: String::new(),
    };
    let cfg = MpcConfig {
        horizon: 2,
        u_min: -1.0,
        u_max: 1.0,
        du_min: -0.2,
        du_max: 0.2,
        ..MpcConfig::benchmark(1)
    };
    let qp = condense_qp(
        &model,
        &Vector::from_element(1, 2.0),
        &Vector::zeros(1),
        &cfg,
    )
    .unwrap();
    let x = solve_qp(&qp, &Vector::zeros(2), 1e-10).unwrap();
    let mpc_err = (x - grid_minimizer(&qp, 1e-3)).amax();
    outcome(
        worst <= 2e-3 && mpc_err <= 2e-3,
        format!("max deviation {worst:.1e} over 20 random problems, {mpc_err:.1e} on the N = 2 MPC problem"),
    )
}

fn rk4_order() -> Outcome {
    let sys = ControlSystem::ode("decay", 1, 1, |x, _u, _t| -x);
    let dts = [0.1, 0.05, 0.025, 0.0125];
    let errs: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let t = simulate(
                &sys,
                &Vector::from_element(1, 1.0),
                &ForcingSignal::Zero { dim: 1 },
                1.0,
                dt,
            )
            .unwrap();
            (t.final_state()[0] - (-1.0f64).exp()).abs()
        })
        .collect();
    let slope = loglog_slope(&dts, &errs);
    outcome((slope - 4.0).abs() <= 0.2, format!("slope {slope:.3}"))
}

fn determinism(base: &BenchmarkReport) -> Outcome {
    let cfg = base.config.clone();
    let json = |threads| {
        run_benchmark(
            &cfg,
            &RunOptions {
                threads: Some(threads),
                out_dir: None,
            },
        )
        .map(|(r, _)| r.to_json().unwrap())
    };
    let reference = base.to_json().unwrap();
    match (json(1), json(4)) {
        (Ok(a), Ok(b)) => outcome(
            a == reference && b == reference,
            format!(
                "{} bytes; 1 and 4 threads match the default-pool run",
                reference.len()
            ),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, e.to_string()),
    }
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!(
            "{} [{}] {}",
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail
        );
        results.push((name, o));
    };

    report("1 exact recovery", exact_recovery());
    report("2 exact closure", exact_closure());
    report("3 eigenfunction oracle", eigenfunction_oracle());

    let mut runs = Vec::new();
    for seed in [1u64, 2, 3] {
        let cfg = ExperimentConfig {
            seed,
            ..Default::default()
        };
        let t0 = Instant::now();
        match run_benchmark(&cfg, &RunOptions::default()) {
            Ok((rep, _)) => runs.push((seed, rep, t0.elapsed().as_secs_f64())),
            Err(e) => println!("benchmark seed {seed} failed: {e}"),
        }
    }
    if runs.len() == 3 {
        report("4 validation ranking", validation_ranking(&runs));
        report("5 stabilization", stabilization(&runs[0].1));
    } else {
        report("4 validation ranking", outcome(false, "benchmark failed"));
        report("5 stabilization", outcome(false, "benchmark failed"));
    }
    report("6 Ulam properties", ulam_properties());
    report("7 QP oracle", qp_oracle());
    report("8 RK4 order", rk4_order());
    match runs.first() {
        Some((_, rep, _)) => report("9 determinism", determinism(rep)),
        None => report("9 determinism", outcome(false, "benchmark failed")),
    }

    let failed: Vec<&str> = results
        .iter()
        .filter(|(_, o)| !o.pass)
        .map(|(n, _)| *n)
        .collect();
    println!(
        "{} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
