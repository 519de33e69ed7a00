//! Dense strictly-convex quadratic programs,
//!
//! ```text
//!     minimize   1/2 xᵀ H x + gᵀ x
//!     subject to A x ≤ b
//! ```
//!
//! solved by a dual active-set method in the Goldfarb–Idnani style: start at
//! the unconstrained minimizer, repeatedly pick a violated constraint, and
//! take primal/dual steps (dropping blocking constraints) until it becomes
//! active. Projections are recomputed from scratch each step, which is plenty
//! for the small problems the controllers generate. An unbounded dual step
//! certifies infeasibility.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub struct QpProblem {
    /// Quadratic cost matrix, symmetric positive definite.
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    /// Inequality rows `a_iᵀ x ≤ b_i`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers for every inequality row (zero when inactive).
    pub lambda: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

const TOL: f64 = 1e-9;

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let n = h.nrows();
        assert_eq!(h.ncols(), n);
        assert_eq!(g.len(), n);
        assert_eq!(a.ncols(), n.max(a.ncols().min(n)));
        assert_eq!(a.nrows(), b.len());
        QpProblem { h, g, a, b }
    }

    pub fn num_vars(&self) -> usize {
        self.h.nrows()
    }

    /// Stationarity and primal feasibility residuals of a candidate.
    pub fn kkt_residual(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> (f64, f64) {
        let stat = (&self.h * x + &self.g + self.a.transpose() * lambda).amax();
        let feas = (&self.a * x - &self.b).iter().fold(0.0f64, |m, v| m.max(*v));
        (stat, feas)
    }
}

pub fn solve_qp(qp: &QpProblem) -> QpSolution {
    let n = qp.num_vars();
    let m = qp.a.nrows();
    let chol = match Cholesky::new(qp.h.clone()) {
        Some(c) => c,
        None => {
            // nudge toward positive definiteness; callers keep H well-formed
            let bumped = &qp.h + DMatrix::identity(n, n) * 1e-10;
            Cholesky::new(bumped).expect("cost matrix must be positive definite")
        }
    };
    let mut x = chol.solve(&(-&qp.g));
    let mut active: Vec<usize> = Vec::new();
    let mut lam: Vec<f64> = Vec::new();
    let max_iter = 50 * (n + m + 1);
    let mut iterations = 0;

    let finish = |x: DVector<f64>, active: &[usize], lam: &[f64], status, iterations| {
        let mut lambda = DVector::zeros(m);
        for (k, i) in active.iter().enumerate() {
            lambda[*i] = lam[k];
        }
        QpSolution { x, lambda, status, iterations }
    };

    'outer: loop {
        iterations += 1;
        if iterations > max_iter {
            return finish(x, &active, &lam, QpStatus::MaxIter, iterations);
        }
        // most violated inactive constraint
        let mut p = None;
        let mut worst = TOL.max(1e-8);
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let s = qp.a.row(i).transpose().dot(&x) - qp.b[i];
            if s > worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else {
            return finish(x, &active, &lam, QpStatus::Optimal, iterations);
        };
        let n_p = qp.a.row(p).transpose();
        let mut lam_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return finish(x, &active, &lam, QpStatus::MaxIter, iterations);
            }
            let hi_np = chol.solve(&n_p);
            // dual direction r and primal direction z
            let (z, r) = if active.is_empty() {
                (hi_np.clone(), DVector::zeros(0))
            } else {
                let aw = DMatrix::from_rows(
                    &active.iter().map(|i| qp.a.row(*i)).collect::<Vec<_>>(),
                );
                let hi_awt = chol.solve(&aw.transpose());
                let mmat = &aw * &hi_awt;
                let rhs = &aw * &hi_np;
                let r = mmat
                    .clone()
                    .lu()
                    .solve(&rhs)
                    .unwrap_or_else(|| DVector::zeros(active.len()));
                let z = &hi_np - &hi_awt * &r;
                (z, r)
            };
            let s_p = n_p.dot(&x) - qp.b[p];
            // dual blocking step
            let mut t1 = f64::INFINITY;
            let mut blocker = None;
            for (k, rk) in r.iter().enumerate() {
                if *rk > TOL && lam[k] / rk < t1 {
                    t1 = lam[k] / rk;
                    blocker = Some(k);
                }
            }
            // full primal step
            let zn = z.dot(&n_p);
            let t2 = if zn > TOL { s_p / zn } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                return finish(x, &active, &lam, QpStatus::Infeasible, iterations);
            }
            x -= &z * t;
            for (k, rk) in r.iter().enumerate() {
                lam[k] -= t * rk;
            }
            lam_p += t;
            if t2 <= t1 {
                active.push(p);
                lam.push(lam_p);
                continue 'outer;
            }
            let k = blocker.expect("blocking index exists when t1 is finite");
            active.remove(k);
            lam.remove(k);
        }
    }
}

/// Projected-gradient ascent on the dual, used as an independent oracle in
/// tests: `λ ← max(0, λ + α (A x(λ) − b))` with `x(λ) = −H⁻¹(g + Aᵀλ)`.
pub fn solve_qp_projected_gradient(qp: &QpProblem, iters: usize, tol: f64) -> DVector<f64> {
    let m = qp.a.nrows();
    let chol = Cholesky::new(qp.h.clone()).expect("positive definite");
    let hi_at = chol.solve(&qp.a.transpose());
    let gram = &qp.a * &hi_at;
    // step below 1/λmax via the Frobenius bound
    let lip = gram.norm().max(1e-12);
    let alpha = 1.0 / lip;
    let mut lambda = DVector::zeros(m);
    for _ in 0..iters {
        let x = chol.solve(&(-(&qp.g + qp.a.transpose() * &lambda)));
        let grad = &qp.a * &x - &qp.b;
        let mut next = &lambda + &grad * alpha;
        next.apply(|v| *v = v.max(0.0));
        let delta = (&next - &lambda).amax();
        lambda = next;
        if delta < tol {
            break;
        }
    }
    chol.solve(&(-(&qp.g + qp.a.transpose() * &lambda)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dm(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn active_constraint_example() {
        // min ½u² s.t. u ≥ 1  →  u = 1
        let qp = QpProblem::new(
            dm(1, 1, &[1.0]),
            DVector::from_vec(vec![0.0]),
            dm(1, 1, &[-1.0]),
            DVector::from_vec(vec![-1.0]),
        );
        let sol = solve_qp(&qp);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        let (stat, feas) = qp.kkt_residual(&sol.x, &sol.lambda);
        assert!(stat < 1e-6 && feas < 1e-6);
    }

    #[test]
    fn unconstrained_minimum() {
        let qp = QpProblem::new(
            dm(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        );
        let sol = solve_qp(&qp);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.x.amax() < 1e-12);
    }

    #[test]
    fn detects_infeasible() {
        // x ≤ 0 and x ≥ 1
        let qp = QpProblem::new(
            dm(1, 1, &[1.0]),
            DVector::from_vec(vec![0.0]),
            dm(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![0.0, -1.0]),
        );
        let sol = solve_qp(&qp);
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QpProblem {
        let q = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = &q * q.transpose() + DMatrix::identity(n, n);
        let g = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        // feasible by construction: interior point with positive slack
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let slack = DVector::from_fn(m, |_, _| rng.gen_range(0.05..1.0));
        let b = &a * &x0 + slack;
        QpProblem::new(h, g, a, b)
    }

    #[test]
    fn matches_projected_gradient_oracle_on_random_qps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let qp = random_qp(&mut rng, 5, 8);
            let sol = solve_qp(&qp);
            assert_eq!(sol.status, QpStatus::Optimal, "trial {trial}");
            let oracle = solve_qp_projected_gradient(&qp, 400_000, 1e-12);
            let diff = (&sol.x - &oracle).amax();
            assert!(diff < 1e-5, "trial {trial}: |Δx| = {diff:.2e}");
            let (stat, feas) = qp.kkt_residual(&sol.x, &sol.lambda);
            assert!(stat < 1e-6 && feas < 1e-6, "trial {trial}: KKT {stat:.2e}/{feas:.2e}");
        }
    }

    #[test]
    fn moderate_size_stays_accurate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let qp = random_qp(&mut rng, 40, 60);
        let sol = solve_qp(&qp);
        assert_eq!(sol.status, QpStatus::Optimal);
        let (stat, feas) = qp.kkt_residual(&sol.x, &sol.lambda);
        assert!(stat < 1e-6 && feas < 1e-6);
    }
}
