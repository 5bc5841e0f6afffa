//! Dense convex QP solver.
//!
//! Solves
//!
//! ```text
//! minimize    1/2 x'Hx + g'x
//! subject to  l <= Ax <= u
//! ```
//!
//! with an operator-splitting (ADMM) iteration in the style of OSQP: the
//! linear system `(H + sigma I + A' diag(rho) A)` is factored once per
//! penalty value, iterates are over-relaxed, equality rows get a stiffer
//! penalty, and a converged iterate is polished by solving the KKT system of
//! the detected active set. Rows of `A` are equilibrated internally; all
//! reported residuals refer to the unscaled problem.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("invalid QP: {0}")]
    InvalidProblem(String),
    #[error("KKT factorization failed")]
    Factorization,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.g.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.l.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.g.len();
        let m = self.l.len();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(QpError::InvalidProblem(format!("H is {}x{}, expected {n}x{n}", self.h.nrows(), self.h.ncols())));
        }
        if self.a.nrows() != m || self.a.ncols() != n || self.u.len() != m {
            return Err(QpError::InvalidProblem(format!(
                "A is {}x{}, l has {m} rows, u has {}; expected A {m}x{n}",
                self.a.nrows(),
                self.a.ncols(),
                self.u.len()
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.h[(i, j)] - self.h[(j, i)]).abs() > 1e-10 {
                    return Err(QpError::InvalidProblem(format!("H not symmetric at ({i},{j})")));
                }
            }
        }
        for i in 0..m {
            if self.l[i] > self.u[i] || self.l[i].is_nan() || self.u[i].is_nan() {
                return Err(QpError::InvalidProblem(format!("bounds inverted at row {i}: {} > {}", self.l[i], self.u[i])));
            }
        }
        if self.h.iter().chain(self.g.iter()).chain(self.a.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::InvalidProblem("non-finite entries".into()));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    pub eps_prim_inf: f64,
    /// Iteration at which the penalty may be rescaled once.
    pub rho_update_iter: usize,
    pub polish: bool,
    /// Also try polishing every this many iterations; 0 polishes only at
    /// the end.
    pub polish_interval: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_prim_inf: 1e-5,
            rho_update_iter: 100,
            polish: true,
            polish_interval: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub status: QpStatus,
    /// `||Ax - proj_[l,u](Ax)||_inf`
    pub primal_residual: f64,
    /// `||Hx + g + A'y||_inf`
    pub dual_residual: f64,
    pub iterations: usize,
    pub objective: f64,
    pub polished: bool,
}

const RHO_EQ_SCALE: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;

/// Reusable solver; holds scratch state for one solve at a time.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
}

struct Scaled {
    h: DMatrix<f64>,
    g: DVector<f64>,
    a: DMatrix<f64>,
    at: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    /// Variable scale: x = dvar * x_scaled.
    dvar: DVector<f64>,
    /// Row scale: scaled row = d * original row.
    d: DVector<f64>,
    /// Cost scale.
    c: f64,
    is_eq: Vec<bool>,
}

const RUIZ_ITERS: usize = 15;

impl Scaled {
    /// Modified Ruiz equilibration of the KKT matrix followed by a cost scale.
    fn new(p: &QpProblem) -> Self {
        let n = p.num_vars();
        let m = p.num_constraints();
        let mut h = p.h.clone();
        let mut a = p.a.clone();
        let mut dvar = DVector::from_element(n, 1.0);
        let mut d = DVector::from_element(m, 1.0);
        let safe = |v: f64| if v < 1e-4 { 1.0 } else { 1.0 / v.sqrt() };
        for _ in 0..RUIZ_ITERS {
            let dv: Vec<f64> = (0..n).map(|j| safe(h.column(j).amax().max(if m > 0 { a.column(j).amax() } else { 0.0 }))).collect();
            let dr: Vec<f64> = (0..m).map(|i| safe(a.row(i).amax())).collect();
            for j in 0..n {
                dvar[j] *= dv[j];
            }
            for i in 0..m {
                d[i] *= dr[i];
            }
            for i in 0..n {
                for j in 0..n {
                    h[(i, j)] *= dv[i] * dv[j];
                }
            }
            for i in 0..m {
                for j in 0..n {
                    a[(i, j)] *= dr[i] * dv[j];
                }
            }
        }
        let g = p.g.component_mul(&dvar);
        let mean_col = if n > 0 { (0..n).map(|j| h.column(j).amax()).sum::<f64>() / n as f64 } else { 1.0 };
        let c = (1.0 / mean_col.max(inf_norm(&g)).max(1e-4)).clamp(1e-4, 1e4);
        h *= c;
        let g = g * c;
        let l = p.l.component_mul(&d);
        let u = p.u.component_mul(&d);
        let is_eq = (0..m).map(|i| (p.u[i] - p.l[i]).abs() < 1e-10 * (1.0 + p.l[i].abs())).collect();
        Self { h, g, at: a.transpose(), a, l, u, dvar, d, c, is_eq }
    }

    fn rho_vec(&self, rho: f64) -> DVector<f64> {
        DVector::from_iterator(self.is_eq.len(), self.is_eq.iter().map(|&e| if e { rho * RHO_EQ_SCALE } else { rho }))
    }

    fn project(&self, v: &mut DVector<f64>) {
        for i in 0..v.len() {
            v[i] = v[i].clamp(self.l[i], self.u[i]);
        }
    }
}

fn factor(sc: &Scaled, sigma: f64, rho: &DVector<f64>) -> Result<Cholesky<f64, Dyn>, QpError> {
    let n = sc.h.nrows();
    let mut k = sc.h.clone();
    for i in 0..n {
        k[(i, i)] += sigma;
    }
    // K += A' diag(rho) A
    let mut ar = sc.a.clone();
    for i in 0..ar.nrows() {
        ar.row_mut(i).scale_mut(rho[i].sqrt());
    }
    k.gemm_tr(1.0, &ar, &ar, 1.0);
    Cholesky::new(k).ok_or(QpError::Factorization)
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings }
    }

    /// Solves `problem`, optionally warm-started from a previous `(x, y)`.
    pub fn solve(&mut self, problem: &QpProblem, warm: Option<(&DVector<f64>, &DVector<f64>)>) -> Result<QpSolution, QpError> {
        problem.validate()?;
        let st = self.settings;
        let n = problem.num_vars();
        let m = problem.num_constraints();
        let sc = Scaled::new(problem);

        let mut rho = st.rho;
        let mut rho_v = sc.rho_vec(rho);
        let mut chol = factor(&sc, st.sigma, &rho_v)?;

        // Iterates live in the scaled space.
        let (mut x, mut y) = match warm {
            Some((wx, wy)) if wx.len() == n && wy.len() == m => (wx.component_div(&sc.dvar), wy.component_div(&sc.d) * sc.c),
            _ => (DVector::zeros(n), DVector::zeros(m)),
        };
        let mut z = &sc.a * &x;
        sc.project(&mut z);

        let mut status = QpStatus::MaxIter;
        let mut iterations = 0;
        let mut rho_updated = false;
        let mut rhs = DVector::zeros(n);
        let mut y_prev = y.clone();

        for it in 1..=st.max_iter {
            iterations = it;
            // x-update
            let t = rho_v.component_mul(&z) - &y;
            rhs.copy_from(&x);
            rhs.scale_mut(st.sigma);
            rhs -= &sc.g;
            rhs.gemv(1.0, &sc.at, &t, 1.0);
            let x_tilde = chol.solve(&rhs);
            let z_tilde = &sc.a * &x_tilde;
            let x_new = &x_tilde * st.alpha + &x * (1.0 - st.alpha);
            let z_relax = &z_tilde * st.alpha + &z * (1.0 - st.alpha);
            let mut z_new = &z_relax + y.component_div(&rho_v);
            sc.project(&mut z_new);
            y_prev.copy_from(&y);
            y += rho_v.component_mul(&(&z_relax - &z_new));
            x = x_new;
            z = z_new;

            // Residuals on the unscaled problem.
            let xu = x.component_mul(&sc.dvar);
            let ax = &problem.a * &xu;
            let zu = z.component_div(&sc.d);
            let yu = y.component_mul(&sc.d) / sc.c;
            let hx = &problem.h * &xu;
            let aty = problem.a.tr_mul(&yu);
            let r_prim = inf_norm(&(&ax - &zu));
            let r_dual = inf_norm(&(&hx + &problem.g + &aty));
            let eps_prim = st.eps_abs + st.eps_rel * inf_norm(&ax).max(inf_norm(&zu));
            let eps_dual = st.eps_abs + st.eps_rel * inf_norm(&hx).max(inf_norm(&aty)).max(inf_norm(&problem.g));
            if r_prim <= eps_prim && r_dual <= eps_dual {
                status = QpStatus::Solved;
                break;
            }

            if st.polish && st.polish_interval > 0 && it % st.polish_interval == 0 {
                let trial = self.finish(problem, xu, yu, QpStatus::MaxIter, it);
                if let Some(p) = self.polish(problem, &sc, &trial) {
                    return Ok(p);
                }
            }

            if self.primal_infeasible(problem, &sc, &y, &y_prev) {
                status = QpStatus::PrimalInfeasible;
                break;
            }

            if !rho_updated && it == st.rho_update_iter {
                rho_updated = true;
                let p_norm = r_prim / (inf_norm(&ax).max(inf_norm(&zu)) + 1e-30);
                let d_norm = r_dual / (inf_norm(&hx).max(inf_norm(&aty)).max(inf_norm(&problem.g)) + 1e-30);
                let ratio = (p_norm / (d_norm + 1e-30)).sqrt().clamp(1e-2, 1e2);
                if !(0.1..=10.0).contains(&(p_norm / (d_norm + 1e-30))) {
                    rho = (rho * ratio).clamp(RHO_MIN, RHO_MAX);
                    rho_v = sc.rho_vec(rho);
                    chol = factor(&sc, st.sigma, &rho_v)?;
                }
            }
        }

        let y_unscaled = y.component_mul(&sc.d) / sc.c;
        let mut sol = self.finish(problem, x.component_mul(&sc.dvar), y_unscaled, status, iterations);
        if st.polish && status != QpStatus::PrimalInfeasible {
            if let Some(p) = self.polish(problem, &sc, &sol) {
                sol = p;
            }
        }
        Ok(sol)
    }

    fn finish(&self, p: &QpProblem, x: DVector<f64>, y: DVector<f64>, status: QpStatus, iterations: usize) -> QpSolution {
        let (primal_residual, dual_residual) = residuals(p, &x, &y);
        QpSolution {
            objective: p.objective(&x),
            x,
            y,
            status,
            primal_residual,
            dual_residual,
            iterations,
            polished: false,
        }
    }

    fn primal_infeasible(&self, p: &QpProblem, sc: &Scaled, y: &DVector<f64>, y_prev: &DVector<f64>) -> bool {
        let dy = (y - y_prev).component_mul(&sc.d) / sc.c;
        let norm = inf_norm(&dy);
        if norm < 1e-12 {
            return false;
        }
        let eps = self.settings.eps_prim_inf * norm;
        if inf_norm(&p.a.tr_mul(&dy)) > eps {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            if dy[i] > 0.0 {
                if p.u[i].is_infinite() {
                    if dy[i] > eps {
                        return false;
                    }
                    continue;
                }
                support += p.u[i] * dy[i];
            } else if dy[i] < 0.0 {
                if p.l[i].is_infinite() {
                    if -dy[i] > eps {
                        return false;
                    }
                    continue;
                }
                support += p.l[i] * dy[i];
            }
        }
        support < -eps
    }

    /// Solves the equality-constrained KKT system of the active set guessed
    /// from the ADMM iterate. Returns the polished solution when it is
    /// feasible, dual-sign consistent and no worse than the ADMM iterate.
    fn polish(&self, p: &QpProblem, sc: &Scaled, sol: &QpSolution) -> Option<QpSolution> {
        let n = p.num_vars();
        let m = p.num_constraints();
        let ax = &p.a * &sol.x;
        // Bound the activity threshold with the problem scale.
        let mut active: Vec<(usize, f64, i8)> = Vec::new(); // (row, rhs, side)
        for i in 0..m {
            if sc.is_eq[i] {
                active.push((i, p.l[i], 0));
                continue;
            }
            let y = sol.y[i];
            let scale = 1.0 + p.l[i].abs().max(p.u[i].abs()).min(1e12);
            let tol = 1e-7 * scale;
            if p.l[i].is_finite() && (ax[i] - p.l[i] < -y || (y < 0.0 && ax[i] - p.l[i] < tol)) {
                active.push((i, p.l[i], -1));
            } else if p.u[i].is_finite() && (p.u[i] - ax[i] < y || (y > 0.0 && p.u[i] - ax[i] < tol)) {
                active.push((i, p.u[i], 1));
            }
        }
        let k = active.len();
        if k > n {
            return None;
        }
        let dim = n + k;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        let mut rhs = DVector::zeros(dim);
        for j in 0..n {
            rhs[j] = -p.g[j];
        }
        for (r, &(row, b, _)) in active.iter().enumerate() {
            for j in 0..n {
                let v = p.a[(row, j)];
                kkt[(n + r, j)] = v;
                kkt[(j, n + r)] = v;
            }
            rhs[n + r] = b;
        }
        let delta = 1e-9;
        let mut reg = kkt.clone();
        for i in 0..n {
            reg[(i, i)] += delta;
        }
        for i in n..dim {
            reg[(i, i)] -= delta;
        }
        let lu = reg.lu();
        let mut sol_kkt = lu.solve(&rhs)?;
        for _ in 0..5 {
            let r = &rhs - &kkt * &sol_kkt;
            if inf_norm(&r) < 1e-14 {
                break;
            }
            sol_kkt += lu.solve(&r)?;
        }
        let x = sol_kkt.rows(0, n).into_owned();
        let mut y = DVector::zeros(m);
        for (r, &(row, _, side)) in active.iter().enumerate() {
            let v = sol_kkt[n + r];
            let tol = 1e-7 * (1.0 + v.abs());
            if (side < 0 && v > tol) || (side > 0 && v < -tol) {
                return None;
            }
            y[row] = v;
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        let (pr, dr) = residuals(p, &x, &y);
        let st = self.settings;
        let eps_p = st.eps_abs + st.eps_rel * inf_norm(&(&p.a * &x));
        let eps_d = st.eps_abs + st.eps_rel * inf_norm(&(&p.h * &x)).max(inf_norm(&p.g));
        let acceptable = pr <= eps_p && dr <= eps_d;
        let no_worse = pr <= sol.primal_residual.max(1e-12) && dr <= sol.dual_residual.max(1e-12);
        if !(acceptable && (no_worse || sol.status != QpStatus::Solved)) {
            return None;
        }
        Some(QpSolution {
            objective: p.objective(&x),
            x,
            y,
            status: QpStatus::Solved,
            primal_residual: pr,
            dual_residual: dr,
            iterations: sol.iterations,
            polished: true,
        })
    }
}

/// Unscaled KKT residuals of a primal/dual pair.
pub fn residuals(p: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> (f64, f64) {
    let ax = &p.a * x;
    let mut prim = 0.0_f64;
    for i in 0..ax.len() {
        let proj = ax[i].clamp(p.l[i], p.u[i]);
        prim = prim.max((ax[i] - proj).abs());
    }
    let dual = inf_norm(&(&p.h * x + &p.g + p.a.tr_mul(y)));
    (prim, dual)
}

/// Convenience wrapper: one-shot solve with the given settings.
pub fn solve_qp(problem: &QpProblem, settings: QpSettings) -> Result<QpSolution, QpError> {
    QpSolver::new(settings).solve(problem, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_box() -> QpProblem {
        // (x - 1)^2 = x^2 - 2x + 1 -> H = 2, g = -2
        QpProblem {
            h: DMatrix::from_element(1, 1, 2.0),
            g: DVector::from_element(1, -2.0),
            a: DMatrix::from_element(1, 1, 1.0),
            l: DVector::from_element(1, 0.0),
            u: DVector::from_element(1, 0.5),
        }
    }

    #[test]
    fn clamped_optimum() {
        let s = solve_qp(&scalar_box(), QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.x[0] - 0.5).abs() < 1e-8);
        assert!(s.y[0] > 0.0, "upper bound multiplier must be positive");
    }

    #[test]
    fn unconstrained_identity() {
        let c = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let p = QpProblem {
            h: DMatrix::identity(3, 3),
            g: -&c,
            a: DMatrix::zeros(0, 3),
            l: DVector::zeros(0),
            u: DVector::zeros(0),
        };
        let s = solve_qp(&p, QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((&s.x - &c).amax() < 1e-8);
    }

    #[test]
    fn equality_constraints_met() {
        // min x'x s.t. x0 + x1 = 1, x1 - x2 = 0.5
        let p = QpProblem {
            h: DMatrix::identity(3, 3) * 2.0,
            g: DVector::zeros(3),
            a: DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, -1.0]),
            l: DVector::from_vec(vec![1.0, 0.5]),
            u: DVector::from_vec(vec![1.0, 0.5]),
        };
        let s = solve_qp(&p, QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        let ax = &p.a * &s.x;
        assert!((ax[0] - 1.0).abs() < 1e-10 && (ax[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // x >= 1 and x <= 0 expressed as two rows.
        let p = QpProblem {
            h: DMatrix::from_element(1, 1, 1.0),
            g: DVector::zeros(1),
            a: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            l: DVector::from_vec(vec![1.0, f64::NEG_INFINITY]),
            u: DVector::from_vec(vec![f64::INFINITY, 0.0]),
        };
        let s = solve_qp(&p, QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn max_iter_reports_best_iterate() {
        let mut settings = QpSettings { max_iter: 2, polish: false, ..Default::default() };
        settings.eps_abs = 1e-14;
        settings.eps_rel = 0.0;
        let s = solve_qp(&scalar_box(), settings).unwrap();
        assert_eq!(s.status, QpStatus::MaxIter);
        assert_eq!(s.iterations, 2);
        assert!(s.x[0].is_finite());
    }

    #[test]
    fn rejects_invalid_problems() {
        let mut p = scalar_box();
        p.l[0] = 1.0;
        assert!(matches!(solve_qp(&p, QpSettings::default()), Err(QpError::InvalidProblem(_))));
        let mut p = scalar_box();
        p.h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        p.g = DVector::zeros(2);
        p.a = DMatrix::zeros(1, 2);
        assert!(matches!(solve_qp(&p, QpSettings::default()), Err(QpError::InvalidProblem(_))));
    }

    #[test]
    fn warm_start_converges_immediately() {
        let p = scalar_box();
        let mut solver = QpSolver::new(QpSettings::default());
        let first = solver.solve(&p, None).unwrap();
        let second = solver.solve(&p, Some((&first.x, &first.y))).unwrap();
        assert_eq!(second.status, QpStatus::Solved);
        assert!(second.iterations <= 10, "{} iterations", second.iterations);
    }
}
