#![allow(dead_code)]

use koopmpc::numerics::{Mat, QpProblem, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(m: &Mat) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() < 1e-15 * a.norm().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Exhaustive search at spacing `res`: a lattice over the (finite) box plus
/// points along every inequality boundary.
pub fn grid_minimizer(q: &QpProblem, res: f64) -> Vector {
    assert_eq!(q.dim(), 2);
    let n0 = ((q.ub[0] - q.lb[0]) / res).round() as usize;
    let n1 = ((q.ub[1] - q.lb[1]) / res).round() as usize;
    let mut best = f64::INFINITY;
    let mut arg = Vector::zeros(2);
    let mut x = Vector::zeros(2);
    for i in 0..=n0 {
        x[0] = q.lb[0] + i as f64 * res;
        for j in 0..=n1 {
            x[1] = q.lb[1] + j as f64 * res;
            if q.max_violation(&x) > 1e-12 {
                continue;
            }
            let f = q.objective(&x);
            if f < best {
                best = f;
                arg = x.clone();
            }
        }
    }
    // The optimum often sits on a slanted inequality row, which a lattice
    // only brushes sparsely; sample each row's boundary line as well.
    for r in 0..q.a_ineq.nrows() {
        let (a0, a1, b) = (q.a_ineq[(r, 0)], q.a_ineq[(r, 1)], q.b_ineq[r]);
        let norm = (a0 * a0 + a1 * a1).sqrt();
        if norm == 0.0 {
            continue;
        }
        let p0 = Vector::from_vec(vec![a0 * b / (norm * norm), a1 * b / (norm * norm)]);
        let dir = Vector::from_vec(vec![-a1 / norm, a0 / norm]);
        let reach = (&q.ub - &q.lb).norm() + p0.norm();
        let steps = (reach / res).ceil() as i64;
        for k in -steps..=steps {
            let x = &p0 + &dir * (k as f64 * res);
            if q.max_violation(&x) > 1e-12 {
                continue;
            }
            let f = q.objective(&x);
            if f < best {
                best = f;
                arg = x;
            }
        }
    }
    assert!(best.is_finite(), "grid has no feasible point");
    arg
}

/// Strictly convex 2-variable QP on `[-1,1]^2` plus one inequality row,
/// with the origin feasible.
pub fn random_qp_2d<R: Rng>(rng: &mut R) -> QpProblem {
    let l = random_mat(rng, 2, 2);
    let h = &l * l.transpose() + Mat::identity(2, 2) * 0.5;
    let g = Vector::from_fn(2, |_, _| rng.random_range(-4.0..4.0));
    let a = random_mat(rng, 1, 2);
    QpProblem {
        h,
        g,
        a_ineq: a,
        b_ineq: Vector::from_element(1, rng.random_range(0.05..0.8)),
        lb: Vector::from_element(2, -1.0),
        ub: Vector::from_element(2, 1.0),
    }
}

/// Hand-written RK4 step for `dx/dt = -x`.
pub fn rk4_decay(x: f64, dt: f64) -> f64 {
    let k1 = -x;
    let k2 = -(x + 0.5 * dt * k1);
    let k3 = -(x + 0.5 * dt * k2);
    let k4 = -(x + dt * k3);
    x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}
