//! Linearized Frenet-frame MPC over the kinematic bicycle.
//!
//! The QP is posed in error coordinates around the references:
//! `x_k = xr_k + c_k + e_k` and `u_k = ur_k + w_k`, where `c_k` carries the
//! affine remainder of the linearization so that the decision variables obey
//! `e_k = A_k e_{k-1} + B_k w_{k-1}` exactly.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predictor::CollisionInterval;
use crate::qp::{QpError, QpProblem, QpSettings, QpSolver, QpStatus};
use crate::seed::{FlatReferences, Side};
use crate::track::{wrap_angle, Raceline};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("fold-over at s = {s:.3}: 1 - kappa n = {denom:.3e}")]
    Linearization { s: f64, denom: f64 },
    #[error("corridor inverted at step {step}: [{lower:.3}, {upper:.3}]")]
    InfeasibleCorridor { step: usize, lower: f64, upper: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Diagonal weights on (s, n, theta).
    pub q1: [f64; 3],
    pub q2: [f64; 3],
    pub q3: [f64; 3],
    /// Diagonal weights on (v, delta).
    pub r: [f64; 2],
    pub v_min: f64,
    pub v_max: f64,
    pub delta_max: f64,
    /// Rate limits per second.
    pub dv_max: f64,
    pub ddelta_max: f64,
    pub wheelbase: f64,
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon: 20,
            dt: 0.05,
            q1: [0.0, 10.0, 0.0],
            q2: [0.0, 1.0, 0.0],
            q3: [0.0, 5.0, 0.0],
            r: [1.0, 10.0],
            v_min: 0.0,
            v_max: 8.0,
            delta_max: 0.4,
            dv_max: 6.0,
            ddelta_max: 3.0,
            wheelbase: 0.33,
            eps: 1e-5,
            max_iter: 4000,
        }
    }
}

impl MpcConfig {
    /// Messages start with the offending field name.
    pub fn validate(&self) -> Result<(), MpcError> {
        let lateral_only = |q: &[f64; 3]| q[0] == 0.0 && q[2] == 0.0 && q[1] >= 0.0;
        let checks = [
            (self.horizon > 0, "horizon", "must be positive"),
            (self.dt > 0.0, "dt", "must be positive"),
            (self.wheelbase > 0.0, "wheelbase", "must be positive"),
            (lateral_only(&self.q1), "q1", "may only weight the lateral error"),
            (lateral_only(&self.q2), "q2", "may only weight the lateral error"),
            (self.q3.iter().all(|w| *w >= 0.0), "q3", "must be non-negative"),
            (self.r.iter().all(|w| *w >= 0.0), "r", "must be non-negative"),
            (self.v_min <= self.v_max, "v_min", "must not exceed v_max"),
            (self.delta_max > 0.0, "delta_max", "must be positive"),
            (self.dv_max > 0.0, "dv_max", "must be positive"),
            (self.ddelta_max > 0.0, "ddelta_max", "must be positive"),
            (self.eps > 0.0, "eps", "must be positive"),
            (self.max_iter > 0, "max_iter", "must be positive"),
        ];
        match checks.iter().find(|c| !c.0) {
            Some((_, field, msg)) => Err(MpcError::InvalidInput(format!("{field} {msg}"))),
            None => Ok(()),
        }
    }
}

/// Frenet kinematic bicycle right-hand side.
pub fn frenet_dynamics(x: &[f64; 3], u: &[f64; 2], kappa: f64, wheelbase: f64) -> [f64; 3] {
    let [_, n, th] = *x;
    let [v, delta] = *u;
    let denom = 1.0 - kappa * n;
    let sdot = v * th.cos() / denom;
    [sdot, v * th.sin(), v * delta.tan() / wheelbase - kappa * sdot]
}

/// Forward-Euler Jacobians at a reference point.
pub fn linearize_dynamics(
    xr: &[f64; 3],
    ur: &[f64; 2],
    track: &Raceline,
    dt: f64,
    wheelbase: f64,
) -> Result<(Matrix3<f64>, Matrix3x2<f64>), MpcError> {
    let c = track.sample(xr[0]);
    let (kap, dk) = (c.kappa, c.dkappa_ds);
    let [_, n, th] = *xr;
    let [v, delta] = *ur;
    let d = 1.0 - kap * n;
    if d.abs() < 1e-6 {
        return Err(MpcError::Linearization { s: xr[0], denom: d });
    }
    let (st, ct) = th.sin_cos();
    let d2 = d * d;
    #[rustfmt::skip]
    let jx = Matrix3::new(
        v * ct * dk * n / d2,   v * ct * kap / d2,          -v * st / d,
        0.0,                    0.0,                        v * ct,
        -dk * v * ct / d2,      -kap * kap * v * ct / d2,   kap * v * st / d,
    );
    let cd = delta.cos();
    #[rustfmt::skip]
    let ju = Matrix3x2::new(
        ct / d,                                0.0,
        st,                                    0.0,
        delta.tan() / wheelbase - kap * ct / d, v / (wheelbase * cd * cd),
    );
    Ok((Matrix3::identity() + jx * dt, ju * dt))
}

/// Per-step lateral bounds on n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorridorConfig {
    /// Center-to-center lateral clearance from the opponent [m].
    pub margin: f64,
    /// Ego center distance kept from the track edges [m].
    pub boundary_margin: f64,
    /// Extra margin per predicted lateral standard deviation.
    pub sigma_scale: f64,
    /// Lateral speed at which a bound the ego currently violates closes in [m/s].
    pub recovery_rate: f64,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        CorridorConfig { margin: 0.6, boundary_margin: 0.15, sigma_scale: 0.0, recovery_rate: 1.0 }
    }
}

/// Track bounds outside the interval; inside, the opponent-side bound moves
/// to the predicted opponent offset minus the margin.
pub fn build_corridor(
    s_refs: &[f64],
    interval: &CollisionInterval,
    d_opp: &dyn Fn(f64) -> (f64, f64),
    track: &Raceline,
    side: Side,
    cfg: &CorridorConfig,
) -> Result<Corridor, MpcError> {
    let mut c = Corridor { lower: Vec::with_capacity(s_refs.len()), upper: Vec::with_capacity(s_refs.len()) };
    for (k, &s) in s_refs.iter().enumerate() {
        let t = track.sample(s);
        let mut lo = -(t.d_right - cfg.boundary_margin);
        let mut hi = t.d_left - cfg.boundary_margin;
        if interval.contains(s) {
            let (mean, std) = d_opp(s);
            let m = cfg.margin + cfg.sigma_scale * std;
            match side {
                Side::Left => lo = lo.max(mean + m),
                Side::Right => hi = hi.min(mean - m),
            }
        }
        if lo >= hi {
            return Err(MpcError::InfeasibleCorridor { step: k, lower: lo, upper: hi });
        }
        c.lower.push(lo);
        c.upper.push(hi);
    }
    Ok(c)
}

/// Loosens bounds violated by the coasting offset `n0 + (k + 1) drift` so
/// that step k only demands `(k - 1) step` of lateral progress toward them.
pub fn relax_corridor(c: &mut Corridor, n0: f64, drift: f64, step: f64) {
    for k in 0..c.lower.len() {
        let coast = n0 + (k + 1) as f64 * drift;
        let reach = (k as f64 - 1.0) * step;
        c.lower[k] = c.lower[k].min(coast + reach);
        c.upper[k] = c.upper[k].max(coast - reach);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    /// States x_1..x_N.
    pub x: Vec<[f64; 3]>,
    /// Inputs u_0..u_{N-1}.
    pub u: Vec<[f64; 2]>,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// max_k |e_k - A_k e_{k-1} - B_k w_{k-1}|.
    pub dynamics_residual: f64,
    pub objective: f64,
    pub iterations: usize,
    pub corridor_duals: Vec<f64>,
    pub solve_time: f64,
}

/// Assembled QP with the data needed to map its solution back.
#[derive(Debug, Clone)]
pub struct MpcQp {
    pub problem: QpProblem,
    pub constant: f64,
    pub a: Vec<Matrix3<f64>>,
    pub b: Vec<Matrix3x2<f64>>,
    pub e0: Vector3<f64>,
    pub shift: Vec<Vector3<f64>>,
}

/// Row offsets of the constraint groups.
fn row_layout(n: usize) -> [usize; 4] {
    [0, 3 * n, 4 * n, 6 * n]
}

struct CostBuilder {
    h: DMatrix<f64>,
    g: DVector<f64>,
    c: f64,
}

impl CostBuilder {
    /// Adds w (sum_j coef_j z_j - target)^2.
    fn add(&mut self, w: f64, terms: &[(usize, f64)], target: f64) {
        if w == 0.0 {
            return;
        }
        for &(i, a) in terms {
            self.g[i] -= 2.0 * w * a * target;
            for &(j, b) in terms {
                self.h[(i, j)] += 2.0 * w * a * b;
            }
        }
        self.c += w * target * target;
    }
}

pub fn build_qp(
    x0: &[f64; 3],
    u_prev: &[f64; 2],
    refs: &FlatReferences,
    corridor: &Corridor,
    track: &Raceline,
    cfg: &MpcConfig,
) -> Result<MpcQp, MpcError> {
    let n = cfg.horizon;
    if refs.x_ref.len() != n + 1 || refs.u_ref.len() != n || corridor.lower.len() != n || corridor.upper.len() != n {
        return Err(MpcError::InvalidInput("reference or corridor length does not match the horizon".into()));
    }
    let xr: Vec<Vector3<f64>> = refs.x_ref.iter().map(|x| Vector3::new(x[0], x[1], x[2])).collect();
    let nx = 3 * n;
    let nz = 5 * n;
    let mut a_mats = Vec::with_capacity(n);
    let mut b_mats = Vec::with_capacity(n);
    let mut shift = vec![Vector3::zeros(); n + 1];
    for k in 1..=n {
        let (a, b) = linearize_dynamics(&refs.x_ref[k - 1], &refs.u_ref[k - 1], track, cfg.dt, cfg.wheelbase)?;
        let kap = track.sample(refs.x_ref[k - 1][0]).kappa;
        let f = frenet_dynamics(&refs.x_ref[k - 1], &refs.u_ref[k - 1], kap, cfg.wheelbase);
        let mut r = xr[k - 1] + Vector3::from(f) * cfg.dt - xr[k];
        r[2] = wrap_angle(r[2]);
        shift[k] = a * shift[k - 1] + r;
        a_mats.push(a);
        b_mats.push(b);
    }
    let e0 = Vector3::new(x0[0] - xr[0][0], x0[1] - xr[0][1], wrap_angle(x0[2] - xr[0][2]));

    let ei = |k: usize, j: usize| 3 * (k - 1) + j;
    let wi = |k: usize, j: usize| nx + 2 * k + j;
    let mut cost = CostBuilder { h: DMatrix::zeros(nz, nz), g: DVector::zeros(nz), c: 0.0 };
    for k in 1..=n {
        for j in 0..3 {
            // x_k - xr_k = c_k + e_k
            cost.add(cfg.q1[j], &[(ei(k, j), 1.0)], -shift[k][j]);
            // x_k = xr_k + c_k + e_k
            cost.add(cfg.q2[j], &[(ei(k, j), 1.0)], -(xr[k][j] + shift[k][j]));
            // x_k - x_{k-1}
            let base = xr[k][j] + shift[k][j];
            if k == 1 {
                let mut prev = x0[j];
                if j == 2 {
                    prev = xr[k][2] + wrap_angle(x0[2] - xr[k][2]);
                }
                cost.add(cfg.q3[j], &[(ei(1, j), 1.0)], prev - base);
            } else {
                let prev = xr[k - 1][j] + shift[k - 1][j];
                cost.add(cfg.q3[j], &[(ei(k, j), 1.0), (ei(k - 1, j), -1.0)], prev - base);
            }
        }
    }
    for k in 0..n {
        for j in 0..2 {
            cost.add(cfg.r[j], &[(wi(k, j), 1.0)], 0.0);
        }
    }

    let [r_dyn, r_cor, r_inp, r_rate] = row_layout(n);
    let m = 8 * n;
    let mut a = DMatrix::zeros(m, nz);
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    for k in 1..=n {
        let (ak, bk) = (&a_mats[k - 1], &b_mats[k - 1]);
        for i in 0..3 {
            let row = r_dyn + 3 * (k - 1) + i;
            a[(row, ei(k, i))] = 1.0;
            for j in 0..2 {
                a[(row, wi(k - 1, j))] = -bk[(i, j)];
            }
            if k == 1 {
                let rhs = (ak * e0)[i];
                l[row] = rhs;
                u[row] = rhs;
            } else {
                for j in 0..3 {
                    a[(row, ei(k - 1, j))] = -ak[(i, j)];
                }
            }
        }
        let row = r_cor + k - 1;
        a[(row, ei(k, 1))] = 1.0;
        let off = xr[k][1] + shift[k][1];
        l[row] = corridor.lower[k - 1] - off;
        u[row] = corridor.upper[k - 1] - off;
    }
    let lo_in = [cfg.v_min, -cfg.delta_max];
    let hi_in = [cfg.v_max, cfg.delta_max];
    let rate = [cfg.dv_max * cfg.dt, cfg.ddelta_max * cfg.dt];
    for k in 0..n {
        for j in 0..2 {
            let ur = refs.u_ref[k][j];
            let row = r_inp + 2 * k + j;
            a[(row, wi(k, j))] = 1.0;
            l[row] = lo_in[j] - ur;
            u[row] = hi_in[j] - ur;

            let row = r_rate + 2 * k + j;
            a[(row, wi(k, j))] = 1.0;
            let prev = if k == 0 {
                u_prev[j].clamp(lo_in[j], hi_in[j])
            } else {
                a[(row, wi(k - 1, j))] = -1.0;
                refs.u_ref[k - 1][j]
            };
            l[row] = prev - ur - rate[j];
            u[row] = prev - ur + rate[j];
        }
    }
    Ok(MpcQp {
        problem: QpProblem { h: cost.h, g: cost.g, a, l, u },
        constant: cost.c,
        a: a_mats,
        b: b_mats,
        e0,
        shift,
    })
}

/// Shifts per-step blocks one step earlier, repeating the last block.
fn shift_blocks(v: &DVector<f64>, groups: &[(usize, usize, usize)]) -> DVector<f64> {
    let mut out = v.clone();
    for &(start, steps, width) in groups {
        for k in 0..steps {
            let src = (k + 1).min(steps - 1);
            for j in 0..width {
                out[start + k * width + j] = v[start + src * width + j];
            }
        }
    }
    out
}

/// MPC with warm starting across cycles.
#[derive(Debug, Clone)]
pub struct MpcSolver {
    pub cfg: MpcConfig,
    qp: QpSolver,
    warm: Option<(DVector<f64>, DVector<f64>)>,
}

impl MpcSolver {
    pub fn new(cfg: MpcConfig) -> Result<Self, MpcError> {
        cfg.validate()?;
        let settings = QpSettings { eps_abs: cfg.eps, eps_rel: cfg.eps, max_iter: cfg.max_iter, ..QpSettings::default() };
        Ok(MpcSolver { cfg, qp: QpSolver::new(settings), warm: None })
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn solve(
        &mut self,
        x0: &[f64; 3],
        u_prev: &[f64; 2],
        refs: &FlatReferences,
        corridor: &Corridor,
        track: &Raceline,
    ) -> Result<MpcSolution, MpcError> {
        let t0 = Instant::now();
        let n = self.cfg.horizon;
        let qp = build_qp(x0, u_prev, refs, corridor, track, &self.cfg)?;
        let warm = self.warm.as_ref().map(|(x, y)| {
            let [_, r_cor, r_inp, r_rate] = row_layout(n);
            let xs = shift_blocks(x, &[(0, n, 3), (3 * n, n, 2)]);
            let ys = shift_blocks(y, &[(0, n, 3), (r_cor, n, 1), (r_inp, n, 2), (r_rate, n, 2)]);
            (xs, ys)
        });
        let sol = self.qp.solve(&qp.problem, warm.as_ref().map(|(x, y)| (x, y)))?;
        if sol.status == QpStatus::Solved {
            self.warm = Some((sol.x.clone(), sol.y.clone()));
        } else {
            self.warm = None;
        }
        let mut out = recover(&qp, &sol.x, refs, n);
        out.status = sol.status;
        out.primal_residual = sol.primal_residual;
        out.dual_residual = sol.dual_residual;
        out.iterations = sol.iterations;
        let r_cor = row_layout(n)[1];
        out.corridor_duals = (0..n).map(|k| sol.y[r_cor + k]).collect();
        out.solve_time = t0.elapsed().as_secs_f64();
        Ok(out)
    }
}

/// Maps a QP solution to states and inputs. Inputs are taken as solved and
/// states come from propagating the error dynamics.
pub fn recover(qp: &MpcQp, z: &DVector<f64>, refs: &FlatReferences, n: usize) -> MpcSolution {
    let nx = 3 * n;
    let mut e_prev = qp.e0;
    let mut dyn_res: f64 = 0.0;
    let mut zz = z.clone();
    let mut x = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    for k in 1..=n {
        let w = nalgebra::Vector2::new(z[nx + 2 * (k - 1)], z[nx + 2 * (k - 1) + 1]);
        let e_solved = Vector3::new(z[3 * (k - 1)], z[3 * (k - 1) + 1], z[3 * (k - 1) + 2]);
        let e = qp.a[k - 1] * e_prev + qp.b[k - 1] * w;
        dyn_res = dyn_res.max((e_solved - e).amax());
        for j in 0..3 {
            zz[3 * (k - 1) + j] = e[j];
        }
        let xr = refs.x_ref[k];
        x.push([xr[0] + qp.shift[k][0] + e[0], xr[1] + qp.shift[k][1] + e[1], wrap_angle(xr[2] + qp.shift[k][2] + e[2])]);
        u.push([refs.u_ref[k - 1][0] + w[0], refs.u_ref[k - 1][1] + w[1]]);
        e_prev = e;
    }
    let _ = dyn_res;
    MpcSolution {
        x,
        u,
        status: QpStatus::Solved,
        primal_residual: 0.0,
        dual_residual: 0.0,
        dynamics_residual: dynamics_residual(qp, &zz, n),
        objective: qp.problem.objective(&zz) + qp.constant,
        iterations: 0,
        corridor_duals: Vec::new(),
        solve_time: 0.0,
    }
}

/// max_k |e_k - A_k e_{k-1} - B_k w_{k-1}| for a stacked decision vector.
pub fn dynamics_residual(qp: &MpcQp, z: &DVector<f64>, n: usize) -> f64 {
    let nx = 3 * n;
    let mut prev = qp.e0;
    let mut worst: f64 = 0.0;
    for k in 1..=n {
        let e = Vector3::new(z[3 * (k - 1)], z[3 * (k - 1) + 1], z[3 * (k - 1) + 2]);
        let w = nalgebra::Vector2::new(z[nx + 2 * (k - 1)], z[nx + 2 * (k - 1) + 1]);
        worst = worst.max((e - qp.a[k - 1] * prev - qp.b[k - 1] * w).amax());
        prev = e;
    }
    worst
}

/// Stage cost of a state/input trajectory, evaluated directly.
pub fn trajectory_cost(x0: &[f64; 3], x: &[[f64; 3]], u: &[[f64; 2]], refs: &FlatReferences, cfg: &MpcConfig) -> f64 {
    let mut f = 0.0;
    for k in 1..=x.len() {
        let xk = x[k - 1];
        let prev = if k == 1 { *x0 } else { x[k - 2] };
        for j in 0..3 {
            let diff = |a: f64, b: f64| if j == 2 { wrap_angle(a - b) } else { a - b };
            f += cfg.q1[j] * diff(xk[j], refs.x_ref[k][j]).powi(2);
            f += cfg.q2[j] * xk[j].powi(2);
            f += cfg.q3[j] * diff(xk[j], prev[j]).powi(2);
        }
        for j in 0..2 {
            f += cfg.r[j] * (u[k - 1][j] - refs.u_ref[k - 1][j]).powi(2);
        }
    }
    f
}
