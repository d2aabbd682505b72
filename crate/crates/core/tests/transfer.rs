mod common;

use common::rng;
use koopmpc::dynamics::{make_vanderpol, ControlSystem, Rect};
use koopmpc::numerics::{Mat, Vector};
use koopmpc::transfer::{
    compose_multiplicative, estimate_controlled_transition, invariant_density, propagate_density,
    BoxPartition, TransitionMatrix, UlamOptions,
};
use rand::Rng;

fn doubling() -> ControlSystem {
    ControlSystem::map("doubling", 1, 1, |x, _u, _t| {
        x.map(|v| (2.0 * v).rem_euclid(1.0))
    })
}

fn unit_interval(n: usize) -> BoxPartition {
    BoxPartition::new(Rect::new(vec![0.0], vec![1.0]).unwrap(), vec![n]).unwrap()
}

fn random_stochastic<R: Rng>(r: &mut R, n: usize) -> Mat {
    let mut p = Mat::from_fn(n, n, |_, _| r.random_range(0.0..1.0));
    for mut c in p.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    p
}

#[test]
fn doubling_estimate_converges_with_samples() {
    let mean_err = |samples: usize| {
        (0..5u64)
            .map(|seed| {
                let opts = UlamOptions {
                    tau: 1.0,
                    samples_per_box: samples,
                    seed,
                    max_dt: 1.0,
                };
                let chain = estimate_controlled_transition(
                    &doubling(),
                    &unit_interval(2),
                    &[vec![0.0]],
                    &opts,
                )
                .unwrap();
                chain.mats[0].interior().map(|v| (v - 0.5).abs()).max()
            })
            .sum::<f64>()
            / 5.0
    };
    let errs: Vec<f64> = [100, 1000, 10_000].iter().map(|&s| mean_err(s)).collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn vanderpol_chain_is_column_stochastic() {
    let part = BoxPartition::new(Rect::square(2, 4.0), vec![8, 8]).unwrap();
    let opts = UlamOptions {
        tau: 0.5,
        samples_per_box: 50,
        seed: 3,
        max_dt: 0.05,
    };
    let chain = estimate_controlled_transition(
        &make_vanderpol(0.2),
        &part,
        &[vec![-5.0], vec![0.0], vec![5.0]],
        &opts,
    )
    .unwrap();
    for m in &chain.mats {
        assert!(m.p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        for c in m.p.column_iter() {
            assert!((c.sum() - 1.0).abs() <= 1e-12);
        }
    }
    let p0 = chain.mats[0].uniform_density();
    let seq: Vec<Vec<f64>> = (0..20).map(|k| vec![[-5.0, 0.0, 5.0][k % 3]]).collect();
    for d in propagate_density(&chain, &p0, &seq).unwrap() {
        assert!(d.0.iter().all(|&v| v >= 0.0));
        assert!((d.0.sum() - 1.0).abs() <= 1e-12);
    }
    let pi = invariant_density(&chain.mats[1]).unwrap();
    assert!((&chain.mats[1].p * &pi.0 - &pi.0).lp_norm(1) <= 1e-10);
}

#[test]
fn products_of_random_chains_stay_stochastic() {
    let mut r = rng(10);
    for _ in 0..20 {
        let a = TransitionMatrix::from_mat(random_stochastic(&mut r, 10), 1.0).unwrap();
        let b = TransitionMatrix::from_mat(random_stochastic(&mut r, 10), 1.0).unwrap();
        let c = compose_multiplicative(&a, &b).unwrap();
        for col in c.p.column_iter() {
            assert!((col.sum() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn mismatched_chains_do_not_compose() {
    let a = TransitionMatrix::from_mat(Mat::identity(2, 2), 1.0).unwrap();
    let b = TransitionMatrix::from_mat(Mat::identity(3, 3), 1.0).unwrap();
    assert!(compose_multiplicative(&a, &b).is_err());
}

#[test]
fn chain_json_round_trip() {
    let opts = UlamOptions {
        tau: 1.0,
        samples_per_box: 20,
        seed: 1,
        max_dt: 1.0,
    };
    let chain = estimate_controlled_transition(
        &doubling(),
        &unit_interval(4),
        &[vec![0.0], vec![1.0]],
        &opts,
    )
    .unwrap();
    let text = serde_json::to_string(&chain).unwrap();
    let back: koopmpc::ControlledChain = serde_json::from_str(&text).unwrap();
    assert_eq!(back, chain);
    let d = Vector::from_vec(vec![0.25, 0.25, 0.25, 0.25, 0.0]);
    assert_eq!(back.mats[0].uniform_density().0, d);
}
