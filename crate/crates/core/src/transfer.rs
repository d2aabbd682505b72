//! Ulam-Galerkin transition matrices over a box partition, parametrized by
//! a discrete input level.
//!
//! Matrices are column-stochastic: column `j` holds the landing
//! distribution of samples seeded in box `j`, and densities propagate by
//! left multiplication. Estimated matrices carry one extra absorbing
//! "outside" state (the last index) that collects samples leaving the
//! partitioned rectangle.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{stream_rng, ControlSystem, Rect};
use crate::error::{Error, Result};
use crate::numerics::{stationary_vector_with, Mat, PowerIterOptions, Vector};

/// Equipartition of a rectangle into `counts[0] x counts[1] x ...` boxes,
/// first dimension varying fastest in the box index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPartition {
    pub bounds: Rect,
    pub counts: Vec<usize>,
}

impl BoxPartition {
    pub fn new(bounds: Rect, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != bounds.dim() || counts.contains(&0) {
            return Err(Error::invalid("need a positive box count per dimension"));
        }
        Ok(Self { bounds, counts })
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Box containing `x`, or `None` outside the rectangle. Boxes are
    /// half-open `[lo, hi)` except at the upper edge of the rectangle.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for (k, &xk) in x.iter().enumerate() {
            let (lo, hi) = (self.bounds.lo[k], self.bounds.hi[k]);
            if !(xk >= lo && xk <= hi) {
                return None;
            }
            let n = self.counts[k];
            let i = (((xk - lo) / (hi - lo)) * n as f64).floor() as usize;
            idx += i.min(n - 1) * stride;
            stride *= n;
        }
        Some(idx)
    }

    pub fn cell(&self, index: usize) -> Rect {
        let mut rem = index;
        let mut lo = Vec::with_capacity(self.counts.len());
        let mut hi = Vec::with_capacity(self.counts.len());
        for (k, &n) in self.counts.iter().enumerate() {
            let i = rem % n;
            rem /= n;
            let w = (self.bounds.hi[k] - self.bounds.lo[k]) / n as f64;
            lo.push(self.bounds.lo[k] + i as f64 * w);
            hi.push(self.bounds.lo[k] + (i + 1) as f64 * w);
        }
        Rect { lo, hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    #[serde(with = "crate::matrix_serde")]
    pub p: Mat,
    pub tau: f64,
    /// In-box sample count behind every column.
    pub counts: Vec<usize>,
    /// Index of the absorbing outside state, if present.
    pub outside: Option<usize>,
    /// Boxes whose samples all left the domain.
    pub escaped: Vec<usize>,
}

impl TransitionMatrix {
    /// Wraps an existing column-stochastic matrix (no outside state).
    pub fn from_mat(p: Mat, tau: f64) -> Result<Self> {
        crate::numerics::markov_check(&p)?;
        let n = p.ncols();
        Ok(Self {
            p,
            tau,
            counts: vec![0; n],
            outside: None,
            escaped: vec![],
        })
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    /// Box-to-box block without the outside state.
    pub fn interior(&self) -> Mat {
        match self.outside {
            Some(o) => self.p.view((0, 0), (o, o)).into_owned(),
            None => self.p.clone(),
        }
    }

    /// Uniform mass on the partition boxes, none outside.
    pub fn uniform_density(&self) -> DensityVector {
        let n = self.dim();
        let inside = self.outside.map_or(n, |_| n - 1);
        let mut p = Vector::from_element(n, 1.0 / inside as f64);
        if let Some(o) = self.outside {
            p[o] = 0.0;
        }
        DensityVector(p)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.p.nrows() {
            let row: Vec<String> = self.p.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Transition matrices for each discrete input level over one partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlledChain {
    pub levels: Vec<Vec<f64>>,
    pub mats: Vec<TransitionMatrix>,
    pub partition: BoxPartition,
}

impl ControlledChain {
    pub fn matrix_for(&self, level: &[f64]) -> Result<&TransitionMatrix> {
        self.levels
            .iter()
            .position(|l| {
                l.len() == level.len() && l.iter().zip(level).all(|(a, b)| (a - b).abs() <= 1e-12)
            })
            .map(|i| &self.mats[i])
            .ok_or_else(|| Error::UnknownLevel(level.to_vec()))
    }
}

/// Nonnegative vector with unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityVector(#[serde(with = "crate::matrix_serde::vector")] pub Vector);

impl DensityVector {
    pub fn new(p: Vector) -> Result<Self> {
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(
                "density entries must be finite and nonnegative",
            ));
        }
        if (p.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("density sums to {}", p.sum())));
        }
        Ok(Self(p))
    }

    pub fn as_vector(&self) -> &Vector {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct UlamOptions {
    pub tau: f64,
    pub samples_per_box: usize,
    pub seed: u64,
    /// Longest RK4 substep used to flow samples over `tau`.
    pub max_dt: f64,
}

/// Monte Carlo Ulam estimate of `P(u_l)` for each input level.
///
/// Every level reuses the same sample points per box.
pub fn estimate_controlled_transition(
    sys: &ControlSystem,
    part: &BoxPartition,
    levels: &[Vec<f64>],
    opts: &UlamOptions,
) -> Result<ControlledChain> {
    if opts.samples_per_box == 0 {
        return Err(Error::invalid("samples_per_box must be at least 1"));
    }
    if part.bounds.dim() != sys.state_dim {
        return Err(Error::invalid("partition dimension differs from the plant"));
    }
    if !(opts.tau > 0.0) || !(opts.max_dt > 0.0) {
        return Err(Error::invalid("tau and max_dt must be positive"));
    }
    let d = part.len();
    let mut mats = Vec::with_capacity(levels.len());
    for level in levels {
        if level.len() != sys.input_dim {
            return Err(Error::invalid(format!(
                "level {level:?} has the wrong dimension"
            )));
        }
        let u = Vector::from_column_slice(level);
        let landings: Vec<Vec<usize>> = (0..d)
            .into_par_iter()
            .map(|j| {
                let cell = part.cell(j);
                let mut rng = stream_rng(opts.seed, j as u64);
                let mut hits = vec![0usize; d + 1];
                for _ in 0..opts.samples_per_box {
                    let x = cell.sample_uniform(&mut rng);
                    let dest = match sys.flow(&x, &u, opts.tau, opts.max_dt) {
                        Ok(y) => part.locate(y.as_slice()).unwrap_or(d),
                        Err(_) => d,
                    };
                    hits[dest] += 1;
                }
                hits
            })
            .collect();

        let mut p = Mat::zeros(d + 1, d + 1);
        let mut escaped = Vec::new();
        for (j, hits) in landings.iter().enumerate() {
            for (i, &h) in hits.iter().enumerate() {
                p[(i, j)] = h as f64 / opts.samples_per_box as f64;
            }
            if hits[d] == opts.samples_per_box {
                escaped.push(j);
            }
        }
        p[(d, d)] = 1.0;
        if !escaped.is_empty() {
            log::warn!(
                "{} boxes lose every sample to the outside state",
                escaped.len()
            );
        }
        let mut counts = vec![opts.samples_per_box; d];
        counts.push(0);
        mats.push(TransitionMatrix {
            p,
            tau: opts.tau,
            counts,
            outside: Some(d),
            escaped,
        });
    }
    Ok(ControlledChain {
        levels: levels.to_vec(),
        mats,
        partition: part.clone(),
    })
}

/// `p_{k+1} = P(u_k) p_k` for each level in the sequence; output starts with `p0`.
pub fn propagate_density(
    chain: &ControlledChain,
    p0: &DensityVector,
    input_sequence: &[Vec<f64>],
) -> Result<Vec<DensityVector>> {
    let mut out = Vec::with_capacity(input_sequence.len() + 1);
    out.push(p0.clone());
    let mut p = p0.0.clone();
    for level in input_sequence {
        let tm = chain.matrix_for(level)?;
        if tm.dim() != p.len() {
            return Err(Error::invalid("density length differs from the chain"));
        }
        p = &tm.p * &p;
        let mass = p.sum();
        p /= mass;
        out.push(DensityVector(p.clone()));
    }
    Ok(out)
}

/// Fixed point of `P`, started from the uniform density on the boxes.
pub fn invariant_density(tm: &TransitionMatrix) -> Result<DensityVector> {
    let opts = PowerIterOptions {
        start: Some(tm.uniform_density().0),
        ..Default::default()
    };
    Ok(DensityVector(stationary_vector_with(&tm.p, &opts)?))
}

/// Control as a separate stochastic kernel: `p_{k+1} = P P^u p_k`.
pub fn compose_multiplicative(
    p: &TransitionMatrix,
    pu: &TransitionMatrix,
) -> Result<TransitionMatrix> {
    if p.p.shape() != pu.p.shape() {
        return Err(Error::invalid("transition matrices differ in size"));
    }
    crate::numerics::markov_check(&p.p)?;
    crate::numerics::markov_check(&pu.p)?;
    Ok(TransitionMatrix {
        p: &p.p * &pu.p,
        tau: p.tau + pu.tau,
        counts: p.counts.clone(),
        outside: p.outside,
        escaped: p.escaped.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveReport {
    pub nonnegative: bool,
    pub conserves_mass: bool,
    pub min_entry: f64,
    pub max_column_sum_error: f64,
}

impl AdditiveReport {
    pub fn is_valid(&self) -> bool {
        self.nonnegative && self.conserves_mass
    }
}

/// Checks whether `P + P^u` is still a column-stochastic matrix.
pub fn check_additive(p: &TransitionMatrix, pu: &Mat) -> Result<AdditiveReport> {
    if p.p.shape() != pu.shape() {
        return Err(Error::invalid("perturbation has the wrong shape"));
    }
    let sum = &p.p + pu;
    let min_entry = sum.min();
    let max_err = sum
        .column_iter()
        .map(|c| (c.sum() - 1.0).abs())
        .fold(0.0_f64, f64::max);
    Ok(AdditiveReport {
        nonnegative: min_entry >= 0.0,
        conserves_mass: max_err <= 1e-10,
        min_entry,
        max_column_sum_error: max_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_interval(n: usize) -> BoxPartition {
        BoxPartition::new(Rect::new(vec![0.0], vec![1.0]).unwrap(), vec![n]).unwrap()
    }

    fn doubling() -> ControlSystem {
        ControlSystem::map("doubling", 1, 1, |x, _u, _t| {
            x.map(|v| (2.0 * v).rem_euclid(1.0))
        })
    }

    fn opts(samples: usize, seed: u64) -> UlamOptions {
        UlamOptions {
            tau: 1.0,
            samples_per_box: samples,
            seed,
            max_dt: 0.01,
        }
    }

    #[test]
    fn locate_half_open_boxes() {
        let p = unit_interval(2);
        assert_eq!(p.locate(&[0.25]), Some(0));
        assert_eq!(p.locate(&[0.5]), Some(1));
        assert_eq!(p.locate(&[1.0]), Some(1));
        assert_eq!(p.locate(&[1.5]), None);
        assert_eq!(p.locate(&[-0.1]), None);
    }

    #[test]
    fn locate_two_dimensional_index() {
        let p = BoxPartition::new(Rect::square(2, 1.0), vec![2, 3]).unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(p.locate(&[-0.5, -0.9]), Some(0));
        assert_eq!(p.locate(&[0.5, -0.9]), Some(1));
        assert_eq!(p.locate(&[0.5, 0.9]), Some(5));
        let c = p.cell(5);
        assert!((c.lo[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identity_flow_gives_identity() {
        let sys = ControlSystem::ode("still", 2, 1, |_x, _u, _t| Vector::zeros(2));
        let part = BoxPartition::new(Rect::square(2, 1.0), vec![3, 3]).unwrap();
        let chain =
            estimate_controlled_transition(&sys, &part, &[vec![0.0], vec![1.0]], &opts(20, 1))
                .unwrap();
        for m in &chain.mats {
            assert_eq!(m.p, Mat::identity(10, 10));
        }
    }

    #[test]
    fn doubling_map_splits_evenly() {
        let chain = estimate_controlled_transition(
            &doubling(),
            &unit_interval(2),
            &[vec![0.0]],
            &opts(1000, 4),
        )
        .unwrap();
        let p = chain.mats[0].interior();
        for v in p.iter() {
            assert!((v - 0.5).abs() <= 0.05);
        }
        let pi = invariant_density(&chain.mats[0]).unwrap();
        assert!((pi.0[0] - 0.5).abs() < 0.05);
        assert_eq!(pi.0[2], 0.0);
    }

    #[test]
    fn single_invariant_box() {
        let sys = ControlSystem::map("half", 1, 1, |x, _u, _t| x * 0.5);
        let chain =
            estimate_controlled_transition(&sys, &unit_interval(1), &[vec![0.0]], &opts(50, 2))
                .unwrap();
        assert_eq!(chain.mats[0].interior(), Mat::identity(1, 1));
    }

    #[test]
    fn escaping_box_is_flagged() {
        let sys = ControlSystem::map("shift", 1, 1, |x, _u, _t| x.map(|v| v + 0.5));
        let chain =
            estimate_controlled_transition(&sys, &unit_interval(2), &[vec![0.0]], &opts(50, 2))
                .unwrap();
        let m = &chain.mats[0];
        assert_eq!(m.escaped, vec![1]);
        for c in m.p.column_iter() {
            assert!((c.sum() - 1.0).abs() < 1e-12);
        }
    }

    fn two_state_chain() -> ControlledChain {
        let p = Mat::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.8]);
        ControlledChain {
            levels: vec![vec![0.0], vec![1.0]],
            mats: vec![
                TransitionMatrix::from_mat(p, 1.0).unwrap(),
                TransitionMatrix::from_mat(Mat::identity(2, 2), 1.0).unwrap(),
            ],
            partition: unit_interval(2),
        }
    }

    #[test]
    fn propagation_examples() {
        let chain = two_state_chain();
        let p0 = DensityVector::new(Vector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(
            propagate_density(&chain, &p0, &[]).unwrap(),
            vec![p0.clone()]
        );
        let out = propagate_density(&chain, &p0, &[vec![0.0]]).unwrap();
        assert!((out[1].0[0] - 0.9).abs() < 1e-15);
        assert!((out[1].0[1] - 0.1).abs() < 1e-15);
        let still = propagate_density(&chain, &p0, &vec![vec![1.0]; 5]).unwrap();
        assert!(still.iter().all(|d| d == &p0));
        assert!(matches!(
            propagate_density(&chain, &p0, &[vec![3.0]]),
            Err(Error::UnknownLevel(_))
        ));
    }

    #[test]
    fn invariant_density_of_two_state_chain() {
        let pi = invariant_density(&two_state_chain().mats[0]).unwrap();
        assert!((pi.0[0] - 2.0 / 3.0).abs() < 1e-9);
        assert!((pi.0[1] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn compose_with_identity_is_exact() {
        let c = two_state_chain();
        let out = compose_multiplicative(&c.mats[0], &c.mats[1]).unwrap();
        assert_eq!(out.p, c.mats[0].p);
    }

    #[test]
    fn compose_hand_product() {
        let a = TransitionMatrix::from_mat(Mat::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.8]), 1.0)
            .unwrap();
        let b = TransitionMatrix::from_mat(Mat::from_row_slice(2, 2, &[0.5, 0.0, 0.5, 1.0]), 1.0)
            .unwrap();
        let out = compose_multiplicative(&a, &b).unwrap();
        // [0.9*0.5+0.2*0.5, 0.2; 0.1*0.5+0.8*0.5, 0.8]
        let expect = Mat::from_row_slice(2, 2, &[0.55, 0.2, 0.45, 0.8]);
        assert!((out.p - expect).amax() < 1e-15);
    }

    #[test]
    fn additive_checks() {
        let p = two_state_chain().mats[0].clone();
        assert!(check_additive(&p, &Mat::zeros(2, 2)).unwrap().is_valid());
        let bad = Mat::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.0]);
        let r = check_additive(&p, &bad).unwrap();
        assert!(!r.conserves_mass);
        let delta = Mat::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        assert!(check_additive(&p, &(delta * 0.05)).unwrap().is_valid());
        let too_big = Mat::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        assert!(!check_additive(&p, &too_big).unwrap().nonnegative);
    }
}
