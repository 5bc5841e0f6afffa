//! Seed trajectory: key points around the opponent, a rough evasion path,
//! quintic fits in the Frenet frame and flat references for the MPC.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predictor::CollisionInterval;
use crate::qp::{solve_qp, QpError, QpProblem, QpSettings, QpStatus};
use crate::track::{wrap_angle, Raceline};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeedError {
    #[error("no collision interval")]
    NoInterval,
    #[error("no side offers {margin} m clearance (left {left:.3}, right {right:.3})")]
    NoFeasibleGap { margin: f64, left: f64, right: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("fit failed: {0:?}")]
    FitStatus(QpStatus),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("speed {v:.4} below floor at t = {t:.3}")]
    DegenerateSpeed { t: f64, v: f64 },
    #[error("clearance not achievable after margin inflation")]
    Clearance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyPoint {
    pub s: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPointSet {
    pub points: [KeyPoint; 5],
    pub side: Side,
    /// Margin actually used [m].
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    /// Lateral center-to-center clearance from the opponent [m].
    pub margin: f64,
    /// Minimum distance from the ego center to the track edge [m].
    pub boundary_margin: f64,
    /// Lead-in and lead-out length in seconds of travel.
    pub lead_time: f64,
    /// Speed floor for the lead distance and time parameterization [m/s].
    pub v_floor: f64,
    /// Rough-path sample step [m].
    pub ds: f64,
    pub clearance_factor: f64,
    pub inflation: f64,
    pub max_inflations: usize,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig {
            margin: 0.7,
            boundary_margin: 0.15,
            lead_time: 1.0,
            v_floor: 1.0,
            ds: 0.1,
            clearance_factor: 0.8,
            inflation: 1.25,
            max_inflations: 3,
        }
    }
}

fn left_room(track: &Raceline, s: f64, bm: f64) -> f64 {
    track.sample(s).d_left - bm
}

fn right_room(track: &Raceline, s: f64, bm: f64) -> f64 {
    track.sample(s).d_right - bm
}

/// Side scores: room between the opponent and each usable track edge,
/// minimized over the three interval key points.
pub fn side_scores(interval: &CollisionInterval, d_opp: &dyn Fn(f64) -> f64, track: &Raceline, bm: f64) -> (f64, f64) {
    let mid = 0.5 * (interval.c_start + interval.c_end);
    let mut left = f64::INFINITY;
    let mut right = f64::INFINITY;
    for s in [interval.c_start, mid, interval.c_end] {
        let d = d_opp(s);
        left = left.min(left_room(track, s, bm) - d);
        right = right.min(d + right_room(track, s, bm));
    }
    (left, right)
}

/// Key points k1..k5 around the interval. `prefer` keeps a previously chosen
/// side while it stays feasible; otherwise the roomier side wins, left on ties.
pub fn choose_key_points(
    interval: &CollisionInterval,
    d_opp: &dyn Fn(f64) -> f64,
    track: &Raceline,
    ego_v: f64,
    margin: f64,
    cfg: &SeedConfig,
    prefer: Option<Side>,
) -> Result<KeyPointSet, SeedError> {
    if !interval.exists {
        return Err(SeedError::NoInterval);
    }
    let (left, right) = side_scores(interval, d_opp, track, cfg.boundary_margin);
    let side = match prefer {
        Some(Side::Left) if left >= margin => Side::Left,
        Some(Side::Right) if right >= margin => Side::Right,
        _ if left >= margin && left >= right => Side::Left,
        _ if right >= margin => Side::Right,
        _ => return Err(SeedError::NoFeasibleGap { margin, left, right }),
    };
    let lead = ego_v.max(cfg.v_floor) * cfg.lead_time;
    let (s2, s4) = (interval.c_start, interval.c_end);
    let s3 = 0.5 * (s2 + s4);
    let offset = |s: f64| {
        let d = d_opp(s) + side.sign() * margin;
        d.clamp(-right_room(track, s, cfg.boundary_margin), left_room(track, s, cfg.boundary_margin))
    };
    Ok(KeyPointSet {
        points: [
            KeyPoint { s: s2 - lead, d: 0.0 },
            KeyPoint { s: s2, d: offset(s2) },
            KeyPoint { s: s3, d: offset(s3) },
            KeyPoint { s: s4, d: offset(s4) },
            KeyPoint { s: s4 + lead, d: 0.0 },
        ],
        side,
        margin,
    })
}

/// Time-stamped samples of the piecewise-linear rough path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughPath {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub d: Vec<f64>,
    pub duration: f64,
    pub speed: f64,
}

/// Piecewise-linear d(s) through the key points.
pub fn rough_d(kps: &KeyPointSet, s: f64) -> f64 {
    let p = &kps.points;
    if s <= p[0].s {
        return p[0].d;
    }
    for w in p.windows(2) {
        if s <= w[1].s {
            let span = w[1].s - w[0].s;
            if span <= 0.0 {
                return w[1].d;
            }
            let f = (s - w[0].s) / span;
            return w[0].d + f * (w[1].d - w[0].d);
        }
    }
    p[4].d
}

/// Samples the rough path at a uniform step no larger than `ds`, timed by
/// constant speed `ego_v`.
pub fn interpolate_rough(kps: &KeyPointSet, ds: f64, ego_v: f64) -> Result<RoughPath, SeedError> {
    if !(ds > 0.0 && ego_v > 0.0) {
        return Err(SeedError::InvalidInput("ds and speed must be positive".into()));
    }
    let s0 = kps.points[0].s;
    let span = kps.points[4].s - s0;
    if !(span > 0.0) {
        return Err(SeedError::InvalidInput("key points must span a positive distance".into()));
    }
    let n = ((span / ds).ceil() as usize).max(6);
    let step = span / n as f64;
    let mut out = RoughPath { t: Vec::new(), s: Vec::new(), d: Vec::new(), duration: span / ego_v, speed: ego_v };
    for j in 0..=n {
        let s = if j == n { s0 + span } else { s0 + j as f64 * step };
        out.t.push((s - s0) / ego_v);
        out.s.push(s);
        out.d.push(rough_d(kps, s));
    }
    Ok(out)
}

/// Per-axis quintics in natural basis [1, t, ..., t^5].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuinticTraj {
    pub coeffs_s: [f64; 6],
    pub coeffs_d: [f64; 6],
    pub duration: f64,
}

/// Value and first three time derivatives of a polynomial.
pub fn poly_eval(c: &[f64; 6], t: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    for &ck in c.iter().rev() {
        out[0] = out[0] * t + ck;
    }
    for (k, &ck) in c.iter().enumerate().skip(1).rev() {
        out[1] = out[1] * t + k as f64 * ck;
    }
    for (k, &ck) in c.iter().enumerate().skip(2).rev() {
        out[2] = out[2] * t + (k * (k - 1)) as f64 * ck;
    }
    for (k, &ck) in c.iter().enumerate().skip(3).rev() {
        out[3] = out[3] * t + (k * (k - 1) * (k - 2)) as f64 * ck;
    }
    out
}

/// Frenet kinematics at one instant: (s, s', s'', d, d', d'').
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrenetKinematics {
    pub s: f64,
    pub ds: f64,
    pub dds: f64,
    pub d: f64,
    pub dd: f64,
    pub ddd: f64,
}

impl QuinticTraj {
    /// Inside [0, T] the polynomials; outside, straight continuation along the
    /// racing line at the endpoint speed with d = 0.
    pub fn eval(&self, t: f64) -> FrenetKinematics {
        let inside = |t: f64| {
            let s = poly_eval(&self.coeffs_s, t);
            let d = poly_eval(&self.coeffs_d, t);
            FrenetKinematics { s: s[0], ds: s[1], dds: s[2], d: d[0], dd: d[1], ddd: d[2] }
        };
        if t < 0.0 {
            let e = inside(0.0);
            FrenetKinematics { s: e.s + e.ds * t, ds: e.ds, dds: 0.0, d: 0.0, dd: 0.0, ddd: 0.0 }
        } else if t > self.duration {
            let e = inside(self.duration);
            FrenetKinematics { s: e.s + e.ds * (t - self.duration), ds: e.ds, dds: 0.0, d: 0.0, dd: 0.0, ddd: 0.0 }
        } else {
            inside(t)
        }
    }
}

/// Endpoint data for one axis: values and first derivatives at t=0 and t=T.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Endpoints {
    pub p0: f64,
    pub v0: f64,
    pub p1: f64,
    pub v1: f64,
}

pub fn trapezoid_weights(t: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut w = vec![0.0; n];
    for j in 0..n.saturating_sub(1) {
        let h = t[j + 1] - t[j];
        w[j] += 0.5 * h;
        w[j + 1] += 0.5 * h;
    }
    w
}

/// Weighted least-squares quintic with position and velocity pinned at both
/// ends, solved with the QP solver in normalized time.
pub fn fit_axis(t: &[f64], p: &[f64], duration: f64, ends: Endpoints) -> Result<[f64; 6], SeedError> {
    if t.len() != p.len() || t.len() < 6 {
        return Err(SeedError::InvalidInput("need at least 6 samples".into()));
    }
    if !(duration > 0.0) {
        return Err(SeedError::InvalidInput("duration must be positive".into()));
    }
    let w = trapezoid_weights(t);
    let mut h = DMatrix::zeros(6, 6);
    let mut g = DVector::zeros(6);
    for j in 0..t.len() {
        let tau = t[j] / duration;
        let b: [f64; 6] = std::array::from_fn(|k| tau.powi(k as i32));
        for r in 0..6 {
            g[r] -= 2.0 * w[j] * p[j] * b[r];
            for c in 0..6 {
                h[(r, c)] += 2.0 * w[j] * b[r] * b[c];
            }
        }
    }
    let mut a = DMatrix::zeros(4, 6);
    a[(0, 0)] = 1.0;
    a[(1, 1)] = 1.0;
    for k in 0..6 {
        a[(2, k)] = 1.0;
        a[(3, k)] = k as f64;
    }
    let rhs = DVector::from_vec(vec![ends.p0, ends.v0 * duration, ends.p1, ends.v1 * duration]);
    let problem = QpProblem { h, g, a, l: rhs.clone(), u: rhs };
    let settings = QpSettings { eps_abs: 1e-10, eps_rel: 1e-10, ..QpSettings::default() };
    let sol = solve_qp(&problem, settings)?;
    if sol.status != QpStatus::Solved {
        return Err(SeedError::FitStatus(sol.status));
    }
    Ok(std::array::from_fn(|k| sol.x[k] / duration.powi(k as i32)))
}

/// Fits both axes to the rough path; endpoint velocities are one-sided
/// differences of the samples.
pub fn fit_quintic(rough: &RoughPath) -> Result<QuinticTraj, SeedError> {
    let n = rough.t.len();
    if n < 6 {
        return Err(SeedError::InvalidInput("need at least 6 samples".into()));
    }
    let ends = |p: &[f64]| Endpoints {
        p0: p[0],
        v0: (p[1] - p[0]) / (rough.t[1] - rough.t[0]),
        p1: p[n - 1],
        v1: (p[n - 1] - p[n - 2]) / (rough.t[n - 1] - rough.t[n - 2]),
    };
    // The s axis is fitted relative to its start for conditioning.
    let s0 = rough.s[0];
    let srel: Vec<f64> = rough.s.iter().map(|s| s - s0).collect();
    let mut cs = fit_axis(&rough.t, &srel, rough.duration, ends(&srel))?;
    cs[0] += s0;
    let cd = fit_axis(&rough.t, &rough.d, rough.duration, ends(&rough.d))?;
    Ok(QuinticTraj { coeffs_s: cs, coeffs_d: cd, duration: rough.duration })
}

/// Position, heading and inputs of the kinematic bicycle following a Frenet
/// trajectory, from its derivatives through the curvilinear frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatPoint {
    pub v: f64,
    /// Heading relative to the centerline.
    pub theta: f64,
    /// Cartesian heading.
    pub psi: f64,
    pub a_t: f64,
    pub delta: f64,
}

pub fn flat_point(k: &FrenetKinematics, track: &Raceline, wheelbase: f64) -> FlatPoint {
    let c = track.sample(k.s);
    let kap = c.kappa;
    let one = 1.0 - kap * k.d;
    let vt = one * k.ds;
    let vn = k.dd;
    let at = (-c.dkappa_ds * k.ds * k.d - kap * k.dd) * k.ds + one * k.dds - kap * k.ds * k.dd;
    let an = one * kap * k.ds * k.ds + k.ddd;
    let v = vt.hypot(vn);
    let theta = vn.atan2(vt);
    let (a_t, delta) = if v > 0.0 {
        ((vt * at + vn * an) / v, (wheelbase * (vt * an - vn * at) / (v * v * v)).atan())
    } else {
        (0.0, 0.0)
    };
    FlatPoint { v, theta, psi: wrap_angle(c.psi + theta), a_t, delta }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatConfig {
    pub wheelbase: f64,
    pub v_min: f64,
    pub delta_max: f64,
}

/// MPC linearization references. `x_ref` holds N+1 states (s, n, theta) at
/// t0 + k dt, `u_ref` N inputs (v, delta) at t0 + k dt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatReferences {
    pub t: Vec<f64>,
    pub x_ref: Vec<[f64; 3]>,
    pub u_ref: Vec<[f64; 2]>,
    pub a_t: Vec<f64>,
    pub dt: f64,
    pub saturated: bool,
}

pub fn extract_flat_references(
    traj: &QuinticTraj,
    track: &Raceline,
    n: usize,
    dt: f64,
    t0: f64,
    cfg: &FlatConfig,
) -> Result<FlatReferences, SeedError> {
    if !(cfg.wheelbase > 0.0 && dt > 0.0) || n == 0 {
        return Err(SeedError::InvalidInput("wheelbase, dt and N must be positive".into()));
    }
    let mut r = FlatReferences {
        t: Vec::with_capacity(n + 1),
        x_ref: Vec::with_capacity(n + 1),
        u_ref: Vec::with_capacity(n),
        a_t: Vec::with_capacity(n),
        dt,
        saturated: false,
    };
    for k in 0..=n {
        let t = t0 + k as f64 * dt;
        let kin = traj.eval(t);
        let f = flat_point(&kin, track, cfg.wheelbase);
        if f.v < cfg.v_min {
            return Err(SeedError::DegenerateSpeed { t, v: f.v });
        }
        r.t.push(t);
        r.x_ref.push([kin.s, kin.d, f.theta]);
        if k < n {
            let mut delta = f.delta;
            if delta.abs() > cfg.delta_max {
                delta = delta.clamp(-cfg.delta_max, cfg.delta_max);
                r.saturated = true;
            }
            r.u_ref.push([f.v, delta]);
            r.a_t.push(f.a_t);
        }
    }
    Ok(r)
}

/// Key points, rough path and fit, with margin inflation when smoothing
/// erodes the clearance or pushes the path off the track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub key_points: KeyPointSet,
    pub rough: RoughPath,
    pub traj: QuinticTraj,
}

pub fn plan_seed(
    interval: &CollisionInterval,
    d_opp: &dyn Fn(f64) -> f64,
    track: &Raceline,
    ego_v: f64,
    cfg: &SeedConfig,
    prefer: Option<Side>,
) -> Result<SeedPlan, SeedError> {
    let speed = ego_v.max(cfg.v_floor);
    let mut margin = cfg.margin;
    for _ in 0..=cfg.max_inflations {
        let kps = choose_key_points(interval, d_opp, track, ego_v, margin, cfg, prefer)?;
        let rough = interpolate_rough(&kps, cfg.ds, speed)?;
        let traj = fit_quintic(&rough)?;
        if seed_is_clear(&traj, interval, d_opp, track, cfg) {
            return Ok(SeedPlan { key_points: kps, rough, traj });
        }
        margin *= cfg.inflation;
    }
    Err(SeedError::Clearance)
}

/// Clearance (inside the interval) and boundary checks on a fine time grid.
pub fn seed_is_clear(traj: &QuinticTraj, interval: &CollisionInterval, d_opp: &dyn Fn(f64) -> f64, track: &Raceline, cfg: &SeedConfig) -> bool {
    let steps = 200;
    for j in 0..=steps {
        let t = traj.duration * j as f64 / steps as f64;
        let k = traj.eval(t);
        let c = track.sample(k.s);
        if k.d > c.d_left - cfg.boundary_margin + 1e-9 || -k.d > c.d_right - cfg.boundary_margin + 1e-9 {
            return false;
        }
        if interval.contains(k.s) && (k.d - d_opp(k.s)).abs() < cfg.clearance_factor * cfg.margin {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::builders;

    fn interval(a: f64, b: f64) -> CollisionInterval {
        CollisionInterval { c_start: a, c_end: b, exists: true }
    }

    #[test]
    fn opponent_on_left_forces_right() {
        let track = builders::straight(60.0, 0.1, 1.2, 5.0);
        let kps = choose_key_points(&interval(20.0, 24.0), &|_| 0.8, &track, 4.0, 0.5, &SeedConfig { boundary_margin: 0.0, ..Default::default() }, None)
            .unwrap();
        assert_eq!(kps.side, Side::Right);
        for p in &kps.points[1..4] {
            assert!((p.d - 0.8).abs() >= 0.5 - 1e-12);
            assert!(p.d >= -1.2 && p.d <= 1.2);
        }
        assert_eq!(kps.points[0], KeyPoint { s: 16.0, d: 0.0 });
        assert_eq!(kps.points[4], KeyPoint { s: 28.0, d: 0.0 });
    }

    #[test]
    fn symmetric_tie_goes_left() {
        let track = builders::straight(60.0, 0.1, 1.2, 5.0);
        let kps = choose_key_points(&interval(20.0, 24.0), &|_| 0.0, &track, 4.0, 0.5, &SeedConfig::default(), None).unwrap();
        assert_eq!(kps.side, Side::Left);
    }

    #[test]
    fn narrow_track_has_no_gap() {
        let track = builders::straight(60.0, 0.1, 0.4, 5.0);
        let r = choose_key_points(&interval(20.0, 24.0), &|_| 0.0, &track, 4.0, 0.5, &SeedConfig { boundary_margin: 0.0, ..Default::default() }, None);
        assert!(matches!(r, Err(SeedError::NoFeasibleGap { .. })));
    }

    #[test]
    fn rough_path_properties() {
        let kps = KeyPointSet {
            points: [
                KeyPoint { s: 0.0, d: 0.0 },
                KeyPoint { s: 4.0, d: 0.6 },
                KeyPoint { s: 6.0, d: 0.6 },
                KeyPoint { s: 8.0, d: 0.5 },
                KeyPoint { s: 12.0, d: 0.0 },
            ],
            side: Side::Left,
            margin: 0.5,
        };
        assert!((rough_d(&kps, 2.0) - 0.3).abs() < 1e-15);
        let r = interpolate_rough(&kps, 0.1, 3.7).unwrap();
        let n = r.t.len() - 1;
        assert!((r.s[n] - r.s[0] - 3.7 * r.duration).abs() < 1e-9);
        assert!((r.t[n] - r.duration).abs() < 1e-12);
        let flat = KeyPointSet { points: kps.points.map(|p| KeyPoint { d: 0.0, ..p }), ..kps };
        assert!(interpolate_rough(&flat, 0.1, 3.7).unwrap().d.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn linear_input_is_reproduced() {
        let t: Vec<f64> = (0..=30).map(|i| i as f64 * 0.1).collect();
        let p: Vec<f64> = t.iter().map(|t| 1.5 - 0.7 * t).collect();
        let c = fit_axis(&t, &p, 3.0, Endpoints { p0: 1.5, v0: -0.7, p1: p[30], v1: -0.7 }).unwrap();
        assert!((c[0] - 1.5).abs() < 1e-9 && (c[1] + 0.7).abs() < 1e-9);
        assert!(c[2..].iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn straight_constant_speed_references_are_trivial() {
        let track = builders::straight(100.0, 0.1, 1.5, 5.0);
        let traj = QuinticTraj { coeffs_s: [2.0, 4.0, 0.0, 0.0, 0.0, 0.0], coeffs_d: [0.0; 6], duration: 5.0 };
        let cfg = FlatConfig { wheelbase: 0.33, v_min: 0.1, delta_max: 0.4 };
        let r = extract_flat_references(&traj, &track, 20, 0.05, 0.0, &cfg).unwrap();
        for k in 0..20 {
            assert_eq!(r.x_ref[k][2], 0.0);
            assert_eq!(r.u_ref[k][1], 0.0);
            assert_eq!(r.a_t[k], 0.0);
            assert!((r.u_ref[k][0] - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_steering_is_exact() {
        let (radius, wb) = (5.0, 0.33);
        let track = builders::circle(radius, 0.05, 1.0, 3.0);
        let traj = QuinticTraj { coeffs_s: [0.3, 2.5, 0.0, 0.0, 0.0, 0.0], coeffs_d: [0.0; 6], duration: 10.0 };
        let cfg = FlatConfig { wheelbase: wb, v_min: 0.1, delta_max: 1.0 };
        let r = extract_flat_references(&traj, &track, 40, 0.1, 0.0, &cfg).unwrap();
        for u in &r.u_ref {
            assert!((u[1] - (wb / radius).atan()).abs() < 1e-9);
        }
    }

    #[test]
    fn slow_reference_is_rejected() {
        let track = builders::straight(100.0, 0.1, 1.5, 5.0);
        let traj = QuinticTraj { coeffs_s: [2.0, 0.01, 0.0, 0.0, 0.0, 0.0], coeffs_d: [0.0; 6], duration: 5.0 };
        let cfg = FlatConfig { wheelbase: 0.33, v_min: 0.1, delta_max: 0.4 };
        assert!(matches!(extract_flat_references(&traj, &track, 5, 0.05, 0.0, &cfg), Err(SeedError::DegenerateSpeed { .. })));
    }
}
