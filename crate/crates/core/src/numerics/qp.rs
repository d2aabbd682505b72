use super::{all_finite, truncated_svd, Mat, Vector};
use crate::error::{Error, Result};

/// `min 0.5 x'hx + g'x` subject to `a_ineq x <= b_ineq` and `lb <= x <= ub`.
///
/// Infinite entries in `lb`/`ub` mean "unbounded" in that coordinate.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: Mat,
    pub g: Vector,
    pub a_ineq: Mat,
    pub b_ineq: Vector,
    pub lb: Vector,
    pub ub: Vector,
}

impl QpProblem {
    /// Unconstrained problem in `n` variables.
    pub fn unconstrained(h: Mat, g: Vector) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_ineq: Mat::zeros(0, n),
            b_ineq: Vector::zeros(0),
            lb: Vector::from_element(n, f64::NEG_INFINITY),
            ub: Vector::from_element(n, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Largest violation of any box or inequality row (0 when feasible).
    pub fn max_violation(&self, x: &Vector) -> f64 {
        let mut v: f64 = 0.0;
        for j in 0..x.len() {
            v = v.max(self.lb[j] - x[j]).max(x[j] - self.ub[j]);
        }
        if self.a_ineq.nrows() > 0 {
            let ax = &self.a_ineq * x;
            for i in 0..ax.len() {
                v = v.max(ax[i] - self.b_ineq[i]);
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(Error::invalid("QP Hessian dimension does not match g"));
        }
        if self.a_ineq.ncols() != n || self.a_ineq.nrows() != self.b_ineq.len() {
            return Err(Error::invalid(
                "QP inequality block has inconsistent dimensions",
            ));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(Error::invalid("QP bound vectors have wrong length"));
        }
        if !all_finite(&self.h) || self.g.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("QP data is not finite"));
        }
        if !all_finite(&self.a_ineq) || self.b_ineq.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("QP inequality data is not finite"));
        }
        let scale = self.h.amax().max(1.0);
        if (&self.h - self.h.transpose()).amax() > 1e-10 * scale {
            return Err(Error::invalid("QP Hessian is not symmetric"));
        }
        for j in 0..n {
            if self.lb[j] > self.ub[j] || self.lb[j].is_nan() || self.ub[j].is_nan() {
                return Err(Error::Infeasible(format!("bound {j}: lb > ub")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vector,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Whether phase 1 was needed to find a feasible start.
    pub phase_one: bool,
}

pub fn solve_qp(q: &QpProblem, x0: &Vector, tol: f64) -> Result<Vector> {
    solve_qp_with(q, x0, tol, None).map(|s| s.x)
}

/// Primal active-set solve from `x0` (phase 1 runs first if `x0` is infeasible).
pub fn solve_qp_with(
    q: &QpProblem,
    x0: &Vector,
    tol: f64,
    max_iter: Option<usize>,
) -> Result<QpSolution> {
    q.validate()?;
    let n = q.dim();
    if x0.len() != n {
        return Err(Error::invalid("QP start point has wrong length"));
    }
    let cons = Constraints::from_problem(q);
    let max_iter = max_iter.unwrap_or(50 * (n + cons.len()) + 100);

    let mut x = x0.clone();
    for j in 0..n {
        if !x[j].is_finite() {
            x[j] = 0.0;
        }
        x[j] = x[j].clamp(q.lb[j], q.ub[j]);
    }
    let feas_tol = 1e-12 * (1.0 + cons.scale());
    let mut phase_one = false;
    if cons.max_violation(&x) > feas_tol {
        phase_one = true;
        x = find_feasible(q, &x, max_iter, tol)?;
    }

    let out = active_set(&q.h, &q.g, &cons, x, tol, max_iter)?;
    if out.kkt > tol {
        return Err(Error::QpNotConverged {
            iterations: out.iterations,
            residual: out.kkt,
            best: out.x,
        });
    }
    Ok(QpSolution {
        x: out.x,
        iterations: out.iterations,
        kkt_residual: out.kkt,
        phase_one,
    })
}

/// All constraints as rows `a_i x <= b_i`.
struct Constraints {
    rows: Vec<Vector>,
    rhs: Vec<f64>,
    /// Box rows come first.
    n_box: usize,
}

impl Constraints {
    fn from_problem(q: &QpProblem) -> Self {
        let n = q.dim();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for j in 0..n {
            if q.ub[j].is_finite() {
                let mut e = Vector::zeros(n);
                e[j] = 1.0;
                rows.push(e);
                rhs.push(q.ub[j]);
            }
            if q.lb[j].is_finite() {
                let mut e = Vector::zeros(n);
                e[j] = -1.0;
                rows.push(e);
                rhs.push(-q.lb[j]);
            }
        }
        let n_box = rows.len();
        for i in 0..q.a_ineq.nrows() {
            rows.push(q.a_ineq.row(i).transpose());
            rhs.push(q.b_ineq[i]);
        }
        Self { rows, rhs, n_box }
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    fn scale(&self) -> f64 {
        self.rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn slack(&self, i: usize, x: &Vector) -> f64 {
        self.rhs[i] - self.rows[i].dot(x)
    }

    fn max_violation(&self, x: &Vector) -> f64 {
        (0..self.len()).fold(0.0_f64, |m, i| m.max(-self.slack(i, x)))
    }
}

struct ActiveSetOutcome {
    x: Vector,
    iterations: usize,
    kkt: f64,
}

/// Orthonormal basis of the null space of the stacked working-set rows.
fn null_space(rows: &[&Vector], n: usize) -> Result<Mat> {
    if rows.is_empty() {
        return Ok(Mat::identity(n, n));
    }
    let k = rows.len().max(n);
    let mut a = Mat::zeros(k, n);
    for (i, r) in rows.iter().enumerate() {
        a.set_row(i, &r.transpose());
    }
    let f = truncated_svd(&a, 1e-12)?;
    let r = f.rank;
    Ok(f.vt.rows(r, n - r).transpose())
}

fn active_set(
    h: &Mat,
    g: &Vector,
    cons: &Constraints,
    mut x: Vector,
    tol: f64,
    max_iter: usize,
) -> Result<ActiveSetOutcome> {
    let n = x.len();
    let mut working: Vec<usize> = Vec::new();
    let step_eps = 1e-13;
    let mult_tol = tol.min(1e-9);

    for iter in 0..max_iter {
        let grad = h * &x + g;
        let w_rows: Vec<&Vector> = working.iter().map(|&i| &cons.rows[i]).collect();
        let z = null_space(&w_rows, n)?;

        let (p, zero_curvature) = if z.ncols() == 0 {
            (Vector::zeros(n), false)
        } else {
            let hz = z.transpose() * h * &z;
            let gz = z.transpose() * &grad;
            let f = truncated_svd(&hz, 1e-12)?;
            let pz = -(f.pinv() * &gz);
            let res = &hz * &pz + &gz;
            if res.norm() > 1e-9 * (1.0 + gz.norm()) {
                // gradient has a component along a flat direction
                (-(&z * res), true)
            } else {
                (&z * pz, false)
            }
        };

        let xscale = 1.0 + x.amax();
        if !zero_curvature && p.amax() <= step_eps * xscale {
            let lambda = multipliers(&w_rows, &grad, n)?;
            let (min_idx, min_val) =
                lambda
                    .iter()
                    .enumerate()
                    .fold((usize::MAX, f64::INFINITY), |(bi, bv), (i, &v)| {
                        if v < bv {
                            (i, v)
                        } else {
                            (bi, bv)
                        }
                    });
            if working.is_empty() || min_val >= -mult_tol {
                let kkt = kkt_residual(&grad, &w_rows, &lambda, cons, &x);
                return Ok(ActiveSetOutcome {
                    x,
                    iterations: iter,
                    kkt,
                });
            }
            working.remove(min_idx);
            continue;
        }

        let mut alpha = if zero_curvature { f64::INFINITY } else { 1.0 };
        let mut blocking = None;
        let pnorm = p.norm();
        for i in 0..cons.len() {
            if working.contains(&i) {
                continue;
            }
            let ap = cons.rows[i].dot(&p);
            if ap > 1e-12 * cons.rows[i].norm() * pnorm {
                let a_i = (cons.slack(i, &x).max(0.0)) / ap;
                if a_i < alpha {
                    alpha = a_i;
                    blocking = Some(i);
                }
            }
        }
        if !alpha.is_finite() {
            return Err(Error::invalid("QP is unbounded below on the feasible set"));
        }
        x += &p * alpha;
        if let Some(i) = blocking {
            working.push(i);
        }
    }

    let grad = h * &x + g;
    let w_rows: Vec<&Vector> = working.iter().map(|&i| &cons.rows[i]).collect();
    let lambda = multipliers(&w_rows, &grad, n)?;
    let kkt = kkt_residual(&grad, &w_rows, &lambda, cons, &x).max(f64::MIN_POSITIVE);
    Err(Error::QpNotConverged {
        iterations: max_iter,
        residual: kkt.max(lambda.iter().fold(0.0_f64, |m, &v| m.max(-v))),
        best: x,
    })
}

/// Least-squares multipliers for `grad + A_w' lambda = 0`.
fn multipliers(w_rows: &[&Vector], grad: &Vector, n: usize) -> Result<Vector> {
    if w_rows.is_empty() {
        return Ok(Vector::zeros(0));
    }
    let mut at = Mat::zeros(n, w_rows.len());
    for (j, r) in w_rows.iter().enumerate() {
        at.set_column(j, r);
    }
    let rhs = Mat::from_column_slice(n, 1, (-grad).as_slice());
    let sol = super::lstsq_min_norm(&at, &rhs, 1e-12)?;
    Ok(sol.column(0).into_owned())
}

fn kkt_residual(
    grad: &Vector,
    w_rows: &[&Vector],
    lambda: &Vector,
    cons: &Constraints,
    x: &Vector,
) -> f64 {
    let mut stat = grad.clone();
    for (r, &l) in w_rows.iter().zip(lambda.iter()) {
        stat += *r * l;
    }
    let dual = lambda.iter().fold(0.0_f64, |m, &v| m.max(-v));
    stat.amax().max(cons.max_violation(x)).max(dual)
}

/// Phase 1: minimize a shared slack `t` over `a_i x - t <= b_i`, keeping
/// the box constraints hard.
fn find_feasible(q: &QpProblem, x_box: &Vector, max_iter: usize, tol: f64) -> Result<Vector> {
    let n = q.dim();
    let base = Constraints::from_problem(q);
    let t0 = base.max_violation(x_box);

    let mut rows = Vec::with_capacity(base.len() + 1);
    let mut rhs = Vec::with_capacity(base.len() + 1);
    for (i, (r, &b)) in base.rows.iter().zip(&base.rhs).enumerate() {
        let mut ext = Vector::zeros(n + 1);
        ext.rows_mut(0, n).copy_from(r);
        if i >= base.n_box {
            ext[n] = -1.0;
        }
        rows.push(ext);
        rhs.push(b);
    }
    let mut t_nonneg = Vector::zeros(n + 1);
    t_nonneg[n] = -1.0;
    rows.push(t_nonneg);
    rhs.push(0.0);
    let ext = Constraints {
        rows,
        rhs,
        n_box: base.n_box,
    };

    let mut start = Vector::zeros(n + 1);
    start.rows_mut(0, n).copy_from(x_box);
    start[n] = t0;
    let h = Mat::zeros(n + 1, n + 1);
    let mut g = Vector::zeros(n + 1);
    g[n] = 1.0;
    let out = match active_set(&h, &g, &ext, start, tol, max_iter) {
        Ok(o) => o,
        Err(Error::QpNotConverged { best, .. }) => ActiveSetOutcome {
            x: best,
            iterations: max_iter,
            kkt: f64::INFINITY,
        },
        Err(e) => return Err(e),
    };
    let x = out.x.rows(0, n).into_owned();
    let viol = base.max_violation(&x);
    if viol > 1e-9 * (1.0 + base.scale()) {
        return Err(Error::Infeasible(format!(
            "no point satisfies the constraints (min violation {viol:.3e})"
        )));
    }
    Ok(x)
}
