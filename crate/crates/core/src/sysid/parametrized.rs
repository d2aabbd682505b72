use serde::{Deserialize, Serialize};

use crate::dictionary::{eval_dictionary, recovery_matrix, Dictionary};
use crate::dynamics::{SampleSet, Trajectory};
use crate::error::{Error, Result};
use crate::numerics::{Mat, Vector};

use super::linear::regress;
use super::model::{History, Rollout};

/// Inputs closer than this (max-norm) to a level are treated as that level.
const LEVEL_TOL: f64 = 1e-12;

/// One autonomous lifted model `z_{k+1} = A_i z_k` per discrete input level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametrizedFamily {
    pub levels: Vec<Vec<f64>>,
    #[serde(with = "crate::matrix_serde::list")]
    pub mats: Vec<Mat>,
    pub dict: Dictionary,
    #[serde(with = "crate::matrix_serde")]
    pub c: Mat,
    pub dt: f64,
}

impl ParametrizedFamily {
    pub fn level_index(&self, u: &[f64]) -> Option<usize> {
        self.levels.iter().position(|l| matches_level(l, u))
    }

    pub fn matrix_for(&self, u: &[f64]) -> Result<&Mat> {
        self.level_index(u)
            .map(|i| &self.mats[i])
            .ok_or_else(|| Error::UnknownLevel(u.to_vec()))
    }
}

fn matches_level(level: &[f64], u: &[f64]) -> bool {
    level.len() == u.len() && level.iter().zip(u).all(|(a, b)| (a - b).abs() <= LEVEL_TOL)
}

/// Fits `A_i` separately on the columns recorded under each input level.
pub fn fit_parametrized(
    data: &SampleSet,
    dict: &Dictionary,
    levels: &[Vec<f64>],
    svd_tol: f64,
) -> Result<ParametrizedFamily> {
    if levels.is_empty() {
        return Err(Error::invalid("no input levels given"));
    }
    let c = recovery_matrix(dict)?;
    let z = eval_dictionary(dict, &data.x)?;
    let zp = eval_dictionary(dict, &data.xp)?;
    let d = dict.len();
    let mut mats = Vec::with_capacity(levels.len());
    for level in levels {
        if level.len() != data.input_dim() {
            return Err(Error::invalid(format!(
                "level {level:?} has the wrong dimension"
            )));
        }
        let cols: Vec<usize> = (0..data.len())
            .filter(|&j| matches_level(level, data.u.column(j).as_slice()))
            .collect();
        if cols.len() < d {
            return Err(Error::LevelInsufficientData {
                level: level.clone(),
                found: cols.len(),
                needed: d,
            });
        }
        let zi = z.select_columns(&cols);
        let zpi = zp.select_columns(&cols);
        mats.push(regress(&zpi, &zi, svd_tol)?.0);
    }
    Ok(ParametrizedFamily {
        levels: levels.to_vec(),
        mats,
        dict: dict.clone(),
        c,
        dt: data.dt,
    })
}

impl Rollout for ParametrizedFamily {
    fn rollout(&self, init: &History, inputs: &[Vector]) -> Result<Trajectory> {
        let x0 = init
            .states
            .first()
            .ok_or(Error::MissingHistory { needed: 1, got: 0 })?;
        if x0.len() != self.dict.n_in() {
            return Err(Error::invalid("initial state has the wrong dimension"));
        }
        let mut z = self.dict.lift(x0.as_slice());
        let mut traj = Trajectory {
            times: vec![0.0],
            states: vec![&self.c * &z],
            inputs: Vec::with_capacity(inputs.len()),
        };
        for (k, u) in inputs.iter().enumerate() {
            z = self.matrix_for(u.as_slice())? * &z;
            traj.inputs.push(u.clone());
            traj.times.push((k + 1) as f64 * self.dt);
            traj.states.push(&self.c * &z);
        }
        Ok(traj)
    }
}
