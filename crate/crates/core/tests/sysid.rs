mod common;

use common::{random_mat, rng};
use koopmpc::dictionary::{eval_dictionary, Dictionary};
use koopmpc::dynamics::{
    make_slow_manifold, sample_training_set, simulate, state_derivatives, ForcingFamily,
    ForcingSignal, Rect, SampleSet,
};
use koopmpc::experiment::{
    fit_benchmark_models, median, validation_errors, validation_trajectories, ExperimentConfig,
};
use koopmpc::numerics::{Mat, Vector, DEFAULT_SVD_TOL};
use koopmpc::sysid::{
    fit_dmdc, fit_edmdc, identify_eigenfunctions, predict_rollout, History, SparseOptions,
};
use rand::Rng;

const MU: f64 = -0.05;
const LAMBDA: f64 = -1.0;

fn slow_manifold_data() -> SampleSet {
    sample_training_set(
        &make_slow_manifold(MU, LAMBDA),
        20,
        &Rect::square(2, 2.0),
        1.0,
        0.01,
        &ForcingFamily::ProductSines {
            amplitude: 1.0,
            sigma: 3.0,
        },
        12,
    )
    .unwrap()
}

fn closure_dictionary() -> Dictionary {
    Dictionary::from_exponents(2, &[&[1, 0], &[0, 1], &[2, 0]]).unwrap()
}

#[test]
fn closed_dictionary_rolls_out_exactly() {
    let model = fit_edmdc(
        &slow_manifold_data(),
        &closure_dictionary(),
        DEFAULT_SVD_TOL,
    )
    .unwrap();
    let forcing = ForcingSignal::ProductSines {
        amplitude: 1.0,
        w1: 2.0,
        w2: 3.0,
    };
    let x0 = Vector::from_vec(vec![1.2, -0.5]);
    let truth = simulate(&make_slow_manifold(MU, LAMBDA), &x0, &forcing, 1.0, 0.01).unwrap();
    assert_eq!(truth.steps(), 100);
    let pred = predict_rollout(&model, &History::current(x0), &truth.inputs).unwrap();
    let sq: f64 = (1..=100)
        .map(|k| (&pred.states[k] - &truth.states[k]).norm_squared())
        .sum();
    let rms = (sq / 200.0).sqrt();
    assert!(rms <= 1e-6, "rms {rms:e}");
}

#[test]
fn slow_manifold_eigenfunction() {
    let mut r = rng(4);
    let x = Mat::from_fn(2, 200, |_, _| r.random_range(-2.0..2.0));
    let xdot = state_derivatives(&make_slow_manifold(MU, LAMBDA), &x, &Mat::zeros(1, 200)).unwrap();
    let theta = Dictionary::monomials(2, 2);
    let ef = identify_eigenfunctions(&x, &xdot, &theta, LAMBDA, &SparseOptions::default()).unwrap();

    let b = LAMBDA / (LAMBDA - 2.0 * MU);
    let norm = (1.0 + b * b).sqrt();
    // Library order: x1, x2, x1^2, x1*x2, x2^2.
    let expect = [0.0, 1.0 / norm, -b / norm, 0.0, 0.0];
    for (c, e) in ef.xi.iter().zip(expect) {
        assert!((c - e).abs() <= 1e-5, "{:?}", ef.xi);
    }
    assert!(ef.residual <= 1e-8, "residual {:e}", ef.residual);
    for step in &ef.history {
        assert!(
            step.resolved <= step.truncated * (1.0 + 1e-12) + 1e-15,
            "{step:?}"
        );
    }
}

#[test]
fn input_scaling_rescales_b() {
    let data = slow_manifold_data();
    let base = fit_dmdc(&data, DEFAULT_SVD_TOL).unwrap();
    for s in [0.5, 2.0] {
        let mut scaled = data.clone();
        scaled.u *= s;
        let m = fit_dmdc(&scaled, DEFAULT_SVD_TOL).unwrap();
        assert!((&m.b * s - &base.b).amax() <= 1e-9 * base.b.amax().max(1.0));
        assert!((&m.a - &base.a).amax() <= 1e-9);
    }
}

#[test]
fn fit_beats_nearby_perturbations() {
    let data = slow_manifold_data();
    let dict = Dictionary::monomials(2, 3);
    let model = fit_edmdc(&data, &dict, DEFAULT_SVD_TOL).unwrap();
    let z = eval_dictionary(&dict, &data.x).unwrap();
    let zn = eval_dictionary(&dict, &data.xp).unwrap();
    let resid = |a: &Mat, b: &Mat| (&zn - a * &z - b * &data.u).norm();
    let base = resid(&model.a, &model.b);
    let mut r = rng(6);
    for _ in 0..100 {
        let da = random_mat(&mut r, model.a.nrows(), model.a.ncols());
        let db = random_mat(&mut r, model.b.nrows(), model.b.ncols());
        let scale = 1e-3 / (da.norm_squared() + db.norm_squared()).sqrt();
        assert!(resid(&(&model.a + da * scale), &(&model.b + db * scale)) >= base);
    }
}

#[test]
fn linear_dictionary_is_dmdc() {
    let data = slow_manifold_data();
    let a = fit_dmdc(&data, DEFAULT_SVD_TOL).unwrap();
    let b = fit_edmdc(&data, &Dictionary::identity(2), DEFAULT_SVD_TOL).unwrap();
    assert!((&a.a - &b.a).amax() <= 1e-12);
    assert!((&a.b - &b.b).amax() <= 1e-12);
}

#[test]
fn vanderpol_edmdc_beats_dmdc_one_step() {
    let cfg = ExperimentConfig::default();
    let fitted = fit_benchmark_models(&cfg).unwrap();
    let (val, _) = validation_trajectories(&cfg).unwrap();
    let start = cfg.delay_depth - 1;
    let (dmdc_one, _) = validation_errors(&fitted.models[0].1, &val, start, cfg.horizon).unwrap();
    let (edmdc_one, edmdc_full) =
        validation_errors(&fitted.models[1].1, &val, start, cfg.horizon).unwrap();
    assert!(median(&edmdc_one) < median(&dmdc_one));
    assert!(edmdc_full.iter().all(|v| v.is_finite()));
}
