mod common;

use common::{loglog_slope, rk4_decay};
use koopmpc::dynamics::{
    make_vanderpol, rk4_step, sample_training_set, simulate, ControlSystem, ForcingFamily,
    ForcingSignal, Rect, SampleSet,
};
use koopmpc::numerics::Vector;

fn decay() -> ControlSystem {
    ControlSystem::ode("decay", 1, 1, |x, _u, _t| -x)
}

fn training(n_traj: usize, seed: u64) -> SampleSet {
    sample_training_set(
        &make_vanderpol(0.2),
        n_traj,
        &Rect::square(2, 6.0),
        1.0,
        0.05,
        &ForcingFamily::ProductSines {
            amplitude: 5.0,
            sigma: 10.0,
        },
        seed,
    )
    .unwrap()
}

#[test]
fn rk4_global_error_is_fourth_order() {
    let dts = [0.1, 0.05, 0.025, 0.0125];
    let errs: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let t = simulate(
                &decay(),
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
    assert!((slope - 4.0).abs() <= 0.2, "slope {slope}");
}

#[test]
fn library_rk4_matches_hand_written_step() {
    let x = Vector::from_element(1, 0.7);
    let y = rk4_step(&decay(), &x, &Vector::zeros(1), 0.0, 0.1).unwrap();
    assert!((y[0] - rk4_decay(0.7, 0.1)).abs() < 1e-16);
}

#[test]
fn simulate_equals_repeated_steps() {
    let sys = make_vanderpol(0.2);
    let u = Vector::from_element(1, 1.5);
    let x0 = Vector::from_vec(vec![1.0, -2.0]);
    let traj = simulate(
        &sys,
        &x0,
        &ForcingSignal::Constant { value: vec![1.5] },
        2.0,
        0.05,
    )
    .unwrap();
    let mut x = x0;
    for k in 0..traj.steps() {
        x = rk4_step(&sys, &x, &u, k as f64 * 0.05, 0.05).unwrap();
        assert_eq!(x, traj.states[k + 1]);
    }
}

#[test]
fn training_columns_are_single_steps() {
    let data = training(20, 4);
    let sys = make_vanderpol(0.2);
    for j in 0..data.len() {
        let x = data.x.column(j).into_owned();
        let u = data.u.column(j).into_owned();
        let next = rk4_step(&sys, &x, &u, data.times[j], data.dt).unwrap();
        assert_eq!(next, data.xp.column(j).into_owned());
    }
}

#[test]
fn benchmark_training_set_has_4000_columns() {
    let data = training(200, 1);
    assert_eq!(data.len() + 20 * data.meta.diverged, 4000);
    assert_eq!(data.meta.diverged, 0);
}

#[test]
fn sampling_is_independent_of_thread_count() {
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| training(40, 9).digest())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn sample_set_csv_round_trip() {
    let data = training(5, 2);
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    let back = SampleSet::read_csv(buf.as_slice(), &data.manifest()).unwrap();
    assert_eq!(back.x, data.x);
    assert_eq!(back.xp, data.xp);
    assert_eq!(back.u, data.u);
    assert_eq!(back.digest(), data.digest());
}
