use crate::dictionary::{delay_embed, DelaySpec};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::numerics::{truncated_svd, Mat, DEFAULT_SVD_TOL};

use super::linear::{regress, stack_rows};
use super::model::{Lifting, LinearControlModel, ModelKind};

#[derive(Debug, Clone)]
pub struct DelayFitOptions {
    pub spec: DelaySpec,
    /// Measured state coordinates to embed.
    pub coords: Vec<usize>,
    pub svd_tol: f64,
    /// Fit on the leading `r` Hankel modes instead of raw delay coordinates.
    pub hankel_rank: Option<usize>,
}

impl DelayFitOptions {
    /// Embeds the full `n`-dimensional state with equal depths `d`.
    pub fn full_state(d: usize, n: usize) -> Result<Self> {
        Ok(Self {
            spec: DelaySpec::equal(d)?,
            coords: (0..n).collect(),
            svd_tol: DEFAULT_SVD_TOL,
            hankel_rank: None,
        })
    }
}

/// Delay-coordinate DMDc in input-history form: `z_{k+1} = A z_k + B v_k`.
///
/// Only the newest block of `z_{k+1}` is regressed; the older lags are exact
/// shifts with zero input gain, which keeps the model causal.
pub fn fit_delay_miso(trajs: &[Trajectory], opts: &DelayFitOptions) -> Result<LinearControlModel> {
    let spec = opts.spec;
    if spec.tau_steps != 1 {
        return Err(Error::invalid("delay models are fitted with tau_steps = 1"));
    }
    let q = trajs
        .iter()
        .find_map(|t| t.inputs.first().map(|u| u.len()))
        .ok_or_else(|| Error::InsufficientData("no trajectory with inputs".into()))?;

    let mut zs = Vec::new();
    let mut vs = Vec::new();
    let mut zns = Vec::new();
    for t in trajs {
        let (z, v, zn) = delay_embed(t, &spec, &opts.coords)?;
        zs.push(z);
        vs.push(v);
        zns.push(zn);
    }
    let z = hcat(&zs);
    let v = hcat(&vs);
    let zn = hcat(&zns);
    let nc = opts.coords.len();
    let zr = z.nrows();
    let vr = v.nrows();

    let (a, b, c, projection, fit_residual) = match opts.hankel_rank {
        None => {
            if z.ncols() < zr + vr {
                return Err(Error::InsufficientData(format!(
                    "{} delay samples for {} regressors",
                    z.ncols(),
                    zr + vr
                )));
            }
            let newest = zn.rows(0, nc).into_owned();
            let (g, _) = regress(&newest, &stack_rows(&z, &v), opts.svd_tol)?;
            let mut a = Mat::zeros(zr, zr);
            let mut b = Mat::zeros(zr, vr);
            a.rows_mut(0, nc).copy_from(&g.columns(0, zr));
            b.rows_mut(0, nc).copy_from(&g.columns(zr, vr));
            for i in 0..zr - nc {
                a[(nc + i, i)] = 1.0;
            }
            let mut c = Mat::zeros(nc, zr);
            for i in 0..nc {
                c[(i, i)] = 1.0;
            }
            let resid = (&zn - &a * &z - &b * &v).norm() / (z.ncols() as f64).sqrt();
            (a, b, c, None, resid)
        }
        Some(r) => {
            if r == 0 || r > zr {
                return Err(Error::invalid(format!("hankel rank {r} outside 1..={zr}")));
            }
            if z.ncols() < r + vr {
                return Err(Error::InsufficientData(format!(
                    "{} delay samples for {} regressors",
                    z.ncols(),
                    r + vr
                )));
            }
            let f = truncated_svd(&z, opts.svd_tol)?;
            let ur = f.u.columns(0, r).into_owned();
            let w = ur.transpose() * &z;
            let wn = ur.transpose() * &zn;
            let (g, resid) = regress(&wn, &stack_rows(&w, &v), opts.svd_tol)?;
            let c = ur.rows(0, nc).into_owned();
            (
                g.columns(0, r).into_owned(),
                g.columns(r, vr).into_owned(),
                c,
                Some(ur),
                resid,
            )
        }
    };

    Ok(LinearControlModel {
        kind: ModelKind::DelayMiso,
        a,
        b,
        c,
        lifting: Lifting::Delay {
            spec,
            coords: opts.coords.clone(),
            input_dim: q,
            projection,
        },
        dt: trajectory_dt(trajs),
        fit_residual,
        training_digest: trajectories_digest(trajs),
    })
}

/// Delay-coordinate DMDc with past inputs folded into the state so that
/// only the current input enters through `B`.
pub fn fit_delay_augmented(
    trajs: &[Trajectory],
    opts: &DelayFitOptions,
) -> Result<LinearControlModel> {
    fit_delay_miso(trajs, opts)?.to_augmented()
}

impl LinearControlModel {
    /// Rearranges a delay model into the augmented single-input form
    /// `[z; u_{k-1}; ...; u_{k-d+1}]`.
    pub fn to_augmented(&self) -> Result<LinearControlModel> {
        match self.kind {
            ModelKind::DelayAugmented => return Ok(self.clone()),
            ModelKind::DelayMiso => {}
            _ => return Err(Error::invalid("only delay models can be augmented")),
        }
        let (spec, q) = match &self.lifting {
            Lifting::Delay {
                spec, input_dim, ..
            } => (*spec, *input_dim),
            Lifting::Dictionary { .. } => unreachable!("delay kind carries a delay lifting"),
        };
        let zr = self.a.nrows();
        let hist = (spec.d2 - 1) * q;
        let dim = zr + hist;

        let mut a = Mat::zeros(dim, dim);
        a.view_mut((0, 0), (zr, zr)).copy_from(&self.a);
        a.view_mut((0, zr), (zr, hist))
            .copy_from(&self.b.columns(q, hist));
        // u_{k-i} <- u_{k-i+1}; the u_k slot is filled through B.
        for i in q..hist {
            a[(zr + i, zr + i - q)] = 1.0;
        }
        let mut b = Mat::zeros(dim, q);
        b.view_mut((0, 0), (zr, q)).copy_from(&self.b.columns(0, q));
        if hist > 0 {
            for i in 0..q {
                b[(zr + i, i)] = 1.0;
            }
        }
        let mut c = Mat::zeros(self.c.nrows(), dim);
        c.columns_mut(0, zr).copy_from(&self.c);

        Ok(LinearControlModel {
            kind: ModelKind::DelayAugmented,
            a,
            b,
            c,
            lifting: self.lifting.clone(),
            dt: self.dt,
            fit_residual: self.fit_residual,
            training_digest: self.training_digest.clone(),
        })
    }
}

fn hcat(ms: &[Mat]) -> Mat {
    let rows = ms.first().map_or(0, |m| m.nrows());
    let cols = ms.iter().map(|m| m.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut at = 0;
    for m in ms {
        out.columns_mut(at, m.ncols()).copy_from(m);
        at += m.ncols();
    }
    out
}

fn trajectory_dt(trajs: &[Trajectory]) -> f64 {
    trajs
        .iter()
        .find(|t| t.times.len() > 1)
        .map_or(0.0, |t| t.times[1] - t.times[0])
}

fn trajectories_digest(trajs: &[Trajectory]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for t in trajs {
        h.update((t.states.len() as u64).to_le_bytes());
        for x in t.states.iter().chain(&t.inputs) {
            for v in x.iter() {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}
