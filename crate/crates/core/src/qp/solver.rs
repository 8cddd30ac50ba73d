//! Dense primal active-set solver for small convex QPs
//! `min ½zᵀHz + cᵀz  s.t.  A z ≥ b`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub feasibility_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            feasibility_tol: 1e-9,
        }
    }
}

/// Optimality residuals of a returned point on the original problem.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// `max(0, max_i b_i − a_i·z)`.
    pub primal: f64,
    /// `‖Hz + c − Aᵀλ‖∞`.
    pub stationarity: f64,
    /// `max_i |λ_i (a_i·z − b_i)|`.
    pub complementarity: f64,
    /// `max(0, −min_i λ_i)`.
    pub dual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub multipliers: DVector<f64>,
    /// Rows in the final working set.
    pub active: Vec<usize>,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

impl DenseQp {
    pub fn new(h: DMatrix<f64>, c: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        assert_eq!(h.nrows(), c.len());
        assert_eq!(a.ncols(), c.len());
        assert_eq!(a.nrows(), b.len());
        Self { h, c, a, b }
    }

    pub fn vars(&self) -> usize {
        self.c.len()
    }

    pub fn rows(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.c.dot(z)
    }

    pub fn residuals(&self, z: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
        let slack = &self.a * z - &self.b;
        let primal = slack.iter().fold(0.0f64, |m, s| m.max(-s));
        let stat = &self.h * z + &self.c - self.a.tr_mul(lambda);
        let complementarity = slack
            .iter()
            .zip(lambda.iter())
            .fold(0.0f64, |m, (s, l)| m.max((s * l).abs()));
        let dual = lambda.iter().fold(0.0f64, |m, l| m.max(-l));
        KktResiduals {
            primal,
            stationarity: stat.amax(),
            complementarity,
            dual,
        }
    }

    /// Solves the equality-constrained problem with rows `set` held at
    /// equality; `None` when the KKT matrix is singular.
    pub fn solve_equality(&self, set: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
        let m = self.vars();
        let k = set.len();
        let mut kkt = DMatrix::zeros(m + k, m + k);
        kkt.view_mut((0, 0), (m, m)).copy_from(&self.h);
        let mut rhs = DVector::zeros(m + k);
        rhs.rows_mut(0, m).copy_from(&(-&self.c));
        for (j, &i) in set.iter().enumerate() {
            for col in 0..m {
                kkt[(m + j, col)] = self.a[(i, col)];
                kkt[(col, m + j)] = -self.a[(i, col)];
            }
            rhs[m + j] = self.b[i];
        }
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut lambda = DVector::zeros(self.rows());
        for (j, &i) in set.iter().enumerate() {
            lambda[i] = sol[m + j];
        }
        Some((sol.rows(0, m).into_owned(), lambda))
    }
}

fn independent(rows: &DMatrix<f64>) -> bool {
    if rows.nrows() == 0 {
        return true;
    }
    if rows.nrows() > rows.ncols() {
        return false;
    }
    let svd = rows.transpose().svd(false, false);
    let max = svd.singular_values.max();
    svd.singular_values.min() > 1e-10 * max.max(1.0)
}

/// Goldfarb–Idnani dual active-set method. Starts from the unconstrained
/// minimizer, or from the minimizer on a warm-start working set when that
/// point is dual feasible, and adds the most violated row each outer pass.
pub fn solve_dense(
    qp: &DenseQp,
    warm: Option<&[usize]>,
    opts: &SolverOptions,
) -> Result<QpSolution> {
    let m = qp.vars();
    let p = qp.rows();
    let norms: Vec<f64> = (0..p).map(|i| qp.a.row(i).norm()).collect();
    if (0..p).any(|i| norms[i] == 0.0 && qp.b[i] > opts.feasibility_tol) {
        return Err(Error::Infeasible);
    }

    let mut h = qp.h.clone();
    if h.clone().cholesky().is_none() {
        let reg = 1e-12 * h.diagonal().amax().max(1.0);
        for i in 0..m {
            h[(i, i)] += reg;
        }
    }
    let work_qp = DenseQp {
        h: h.clone(),
        c: qp.c.clone(),
        a: qp.a.clone(),
        b: qp.b.clone(),
    };
    let chol = h.clone().cholesky().ok_or(Error::Infeasible)?;

    let mut x = chol.solve(&(-&qp.c));
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    if let Some(set) = warm {
        let mut cand: Vec<usize> = Vec::new();
        for &i in set {
            if i < p && norms[i] > 0.0 && !cand.contains(&i) {
                cand.push(i);
                let rows = DMatrix::from_fn(cand.len(), m, |r, c| qp.a[(cand[r], c)]);
                if !independent(&rows) {
                    cand.pop();
                }
            }
        }
        if let Some((z, lambda)) = work_qp.solve_equality(&cand) {
            if cand.iter().all(|&i| lambda[i] >= 0.0) {
                x = z;
                u = cand.iter().map(|&i| lambda[i]).collect();
                active = cand;
            }
        }
    }

    let row = |i: usize| qp.a.row(i).transpose();
    let slack = |x: &DVector<f64>, i: usize| (qp.a.row(i) * x)[0] - qp.b[i];
    let mut iterations = 0;
    loop {
        // most violated row, scaled by its norm
        let mut pick = None;
        let mut worst = -opts.feasibility_tol;
        for i in 0..p {
            if norms[i] == 0.0 || active.contains(&i) {
                continue;
            }
            let s = slack(&x, i) / norms[i];
            if s < worst {
                worst = s;
                pick = Some(i);
            }
        }
        let Some(k) = pick else { break };
        let np = row(k);
        let mut u_new = 0.0;
        loop {
            if iterations >= opts.max_iterations {
                return Err(Error::IterationLimit(opts.max_iterations));
            }
            iterations += 1;
            let na = active.len();
            // [H N; Nᵀ 0][z; r] = [n_p; 0]
            let mut kkt = DMatrix::zeros(m + na, m + na);
            kkt.view_mut((0, 0), (m, m)).copy_from(&h);
            for (j, &i) in active.iter().enumerate() {
                for c in 0..m {
                    kkt[(c, m + j)] = qp.a[(i, c)];
                    kkt[(m + j, c)] = qp.a[(i, c)];
                }
            }
            let mut rhs = DVector::zeros(m + na);
            rhs.rows_mut(0, m).copy_from(&np);
            let sol = kkt.lu().solve(&rhs).ok_or(Error::Infeasible)?;
            let z = sol.rows(0, m).into_owned();
            let r = sol.rows(m, na).into_owned();

            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for j in 0..na {
                if r[j] > 1e-14 {
                    let ratio = u[j] / r[j];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(j);
                    }
                }
            }
            let zn = z.dot(&np);
            let t2 = if z.amax() <= 1e-12 * norms[k] || zn <= 0.0 {
                f64::INFINITY
            } else {
                -slack(&x, k) / zn
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Infeasible);
            }
            if t2.is_finite() {
                x += &z * t;
            }
            for j in 0..na {
                u[j] -= t * r[j];
            }
            u_new += t;
            if t2 <= t1 {
                active.push(k);
                u.push(u_new);
                break;
            }
            let j = drop.expect("partial step has a blocking multiplier");
            active.remove(j);
            u.remove(j);
        }
    }

    let mut lambda = DVector::zeros(p);
    for (j, &i) in active.iter().enumerate() {
        lambda[i] = u[j].max(0.0);
    }
    // polish on the identified working set
    if let Some((zp, lp)) = qp.solve_equality(&active) {
        let res = qp.residuals(&zp, &lp);
        if res.primal <= opts.feasibility_tol && res.dual <= 1e-9 * (1.0 + lp.amax()) {
            x = zp;
            lambda = lp;
        }
    }
    let kkt = qp.residuals(&x, &lambda);
    Ok(QpSolution {
        z: x,
        multipliers: lambda,
        active,
        iterations,
        kkt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Minimum objective over every subset of rows held at equality whose
    /// solution is primal feasible.
    pub(crate) fn enumerate_active_sets(qp: &DenseQp) -> Option<(f64, DVector<f64>)> {
        let p = qp.rows();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << p) {
            let set: Vec<usize> = (0..p).filter(|i| mask & (1 << i) != 0).collect();
            if set.len() > qp.vars() {
                continue;
            }
            if let Some((z, _)) = qp.solve_equality(&set) {
                let slack = &qp.a * &z - &qp.b;
                if slack.iter().all(|s| *s >= -1e-9) {
                    let f = qp.objective(&z);
                    if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                        best = Some((f, z));
                    }
                }
            }
        }
        best
    }

    fn random_qp(rng: &mut ChaCha8Rng, m: usize, p: usize) -> DenseQp {
        let l = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        let h = &l * l.transpose() + DMatrix::identity(m, m) * 0.1;
        let c = DVector::from_fn(m, |_, _| rng.gen_range(-3.0..3.0));
        let a = DMatrix::from_fn(p, m, |_, _| rng.gen_range(-1.0..1.0));
        // feasible by construction around a random interior point
        let z0 = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let b = &a * &z0 - DVector::from_fn(p, |_, _| rng.gen_range(0.0..1.0));
        DenseQp::new(h, c, a, b)
    }

    #[test]
    fn unconstrained_matches_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let qp = random_qp(&mut rng, 4, 0);
        let sol = solve_dense(&qp, None, &SolverOptions::default()).unwrap();
        let direct = qp.h.clone().cholesky().unwrap().solve(&(-&qp.c));
        assert_relative_eq!(sol.z, direct, epsilon = 1e-10);
        assert!((&qp.h * &sol.z + &qp.c).amax() < 1e-8);
    }

    #[test]
    fn matches_enumeration_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let m = rng.gen_range(2..=4);
            let p = rng.gen_range(1..=6);
            let qp = random_qp(&mut rng, m, p);
            let sol = solve_dense(&qp, None, &SolverOptions::default()).unwrap();
            let (f, _) = enumerate_active_sets(&qp).unwrap();
            assert_relative_eq!(qp.objective(&sol.z), f, epsilon = 1e-6, max_relative = 1e-9);
            assert!(sol.kkt.primal <= 1e-9);
            assert!(sol.kkt.stationarity <= 1e-8, "{:?}", sol.kkt);
            assert!(sol.kkt.complementarity <= 1e-8, "{:?}", sol.kkt);
        }
    }

    #[test]
    fn warm_start_gives_identical_answer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let qp = random_qp(&mut rng, 3, 5);
        let cold = solve_dense(&qp, None, &SolverOptions::default()).unwrap();
        let warm =
            solve_dense(&qp, Some(cold.active.as_slice()), &SolverOptions::default()).unwrap();
        assert_relative_eq!(warm.z, cold.z, epsilon = 1e-12);
        assert!(warm.iterations <= cold.iterations);
        let again =
            solve_dense(&qp, Some(cold.active.as_slice()), &SolverOptions::default()).unwrap();
        assert_eq!(again, warm);
    }

    #[test]
    fn infeasible_problem_is_reported() {
        // z ≥ 1 and −z ≥ 0
        let qp = DenseQp::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        );
        assert!(matches!(
            solve_dense(&qp, None, &SolverOptions::default()),
            Err(Error::Infeasible)
        ));
    }

    #[test]
    fn singular_hessian_with_bounds() {
        // min (z0 + z1 − 1)² over the box [0, 1]²
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]);
        let c = DVector::from_vec(vec![-2.0, -2.0]);
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![0.0, 0.0, -1.0, -1.0]);
        let qp = DenseQp::new(h, c, a, b);
        let sol = solve_dense(&qp, None, &SolverOptions::default()).unwrap();
        assert_relative_eq!(sol.z[0] + sol.z[1], 1.0, epsilon = 1e-9);
    }
}
