use crate::dictionary::{eval_dictionary, recovery_matrix, Dictionary};
use crate::dynamics::SampleSet;
use crate::error::{Error, Result};
use crate::numerics::{lstsq_min_norm, Mat};

use super::model::{Lifting, LinearControlModel, ModelKind};

/// Minimum-norm `G` with `target ~ G * regressors`, plus the RMS column residual.
pub(crate) fn regress(target: &Mat, regressors: &Mat, svd_tol: f64) -> Result<(Mat, f64)> {
    let g = lstsq_min_norm(&regressors.transpose(), &target.transpose(), svd_tol)?.transpose();
    let resid = (target - &g * regressors).norm() / (target.ncols().max(1) as f64).sqrt();
    Ok((g, resid))
}

pub(crate) fn stack_rows(top: &Mat, bottom: &Mat) -> Mat {
    let mut out = Mat::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

/// DMD with control on the raw state.
pub fn fit_dmdc(data: &SampleSet, svd_tol: f64) -> Result<LinearControlModel> {
    let mut m = fit_lifted(data, &Dictionary::identity(data.state_dim()), svd_tol)?;
    m.kind = ModelKind::Dmdc;
    Ok(m)
}

/// DMD with control after lifting through `dict`.
pub fn fit_edmdc(data: &SampleSet, dict: &Dictionary, svd_tol: f64) -> Result<LinearControlModel> {
    fit_lifted(data, dict, svd_tol)
}

fn fit_lifted(data: &SampleSet, dict: &Dictionary, svd_tol: f64) -> Result<LinearControlModel> {
    if dict.n_in() != data.state_dim() {
        return Err(Error::invalid(
            "dictionary input dimension differs from the data",
        ));
    }
    let d = dict.len();
    let q = data.input_dim();
    if data.len() < d + q {
        return Err(Error::InsufficientData(format!(
            "{} samples for {} lifted states and {} inputs",
            data.len(),
            d,
            q
        )));
    }
    let c = recovery_matrix(dict)?;
    let z = eval_dictionary(dict, &data.x)?;
    let zp = eval_dictionary(dict, &data.xp)?;
    let (g, fit_residual) = regress(&zp, &stack_rows(&z, &data.u), svd_tol)?;
    Ok(LinearControlModel {
        kind: ModelKind::Edmdc,
        a: g.columns(0, d).into_owned(),
        b: g.columns(d, q).into_owned(),
        c,
        lifting: Lifting::Dictionary {
            dictionary: dict.clone(),
        },
        dt: data.dt,
        fit_residual,
        training_digest: data.digest(),
    })
}
