//! Closed-loop kinematic race simulation.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{FitOptions, GpError, GpInit, RbfKernel, SgpModel};
use crate::planner::{EgoFrenet, OpponentView, PlanMode, Planner, PlannerConfig, StageTimings, WorldSnapshot};
use crate::predictor::{CollisionInterval, OpponentEstimate};
use crate::seed::Side;
use crate::selection::{Observation, ObservationBuffer, SelectionConfig};
use crate::track::{wrap_angle, FrenetPose, Raceline};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid episode configuration: {0}")]
    Config(String),
    #[error("planner setup failed: {0}")]
    Planner(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub length: f64,
    pub width: f64,
    pub wheelbase: f64,
    pub v_max: f64,
    pub delta_max: f64,
    /// Longitudinal acceleration limit [m/s^2].
    pub a_max: f64,
    /// Steering rate limit [rad/s].
    pub ddelta_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams { length: 0.5, width: 0.3, wheelbase: 0.33, v_max: 8.0, delta_max: 0.4, a_max: 6.0, ddelta_max: 3.0 }
    }
}

/// Rear-axle kinematic bicycle state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kinematic {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub v_cmd: f64,
    pub delta_cmd: f64,
}

/// Rate- and range-limits the commands, then integrates one RK4 step with
/// the resulting constant acceleration and steering angle.
pub fn step_vehicle(k: &Kinematic, u: ControlInput, dt: f64, p: &VehicleParams) -> Kinematic {
    let dmax = p.ddelta_max * dt;
    let delta = (k.delta + (u.delta_cmd - k.delta).clamp(-dmax, dmax)).clamp(-p.delta_max, p.delta_max);
    let v_cmd = u.v_cmd.clamp(0.0, p.v_max);
    let a = ((v_cmd - k.v) / dt).clamp(-p.a_max, p.a_max);
    let tan_d = delta.tan();
    let f = |s: [f64; 4]| [s[3] * s[2].cos(), s[3] * s[2].sin(), s[3] * tan_d / p.wheelbase, a];
    let s0 = [k.x, k.y, k.psi, k.v];
    let add = |s: [f64; 4], d: [f64; 4], h: f64| [s[0] + h * d[0], s[1] + h * d[1], s[2] + h * d[2], s[3] + h * d[3]];
    let k1 = f(s0);
    let k2 = f(add(s0, k1, 0.5 * dt));
    let k3 = f(add(s0, k2, 0.5 * dt));
    let k4 = f(add(s0, k3, dt));
    let mut s = s0;
    for i in 0..4 {
        s[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Kinematic { x: s[0], y: s[1], psi: wrap_angle(s[2]), v: s[3].clamp(0.0, p.v_max), delta }
}

/// Ornstein-Uhlenbeck process with stationary standard deviation `std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuNoise {
    pub value: f64,
    pub std: f64,
    pub tau: f64,
}

impl OuNoise {
    pub fn step(&mut self, rng: &mut ChaCha8Rng, dt: f64) -> f64 {
        if self.std > 0.0 {
            let decay = (-dt / self.tau).exp();
            let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
            self.value = self.value * decay + self.std * (1.0 - decay * decay).sqrt() * z;
        }
        self.value
    }
}

/// Pure-pursuit steering toward the point `lookahead` ahead on the line
/// offset by `lateral`.
pub fn pure_pursuit(k: &Kinematic, s: f64, lateral: f64, track: &Raceline, p: &VehicleParams) -> f64 {
    let la = (0.5 * k.v).max(0.5);
    let c = track.sample(s + la);
    let (sin, cos) = c.psi.sin_cos();
    let (tx, ty) = (c.x - lateral * sin, c.y + lateral * cos);
    let (dx, dy) = (tx - k.x, ty - k.y);
    let ld = dx.hypot(dy).max(1e-6);
    let alpha = wrap_angle(dy.atan2(dx) - k.psi);
    (2.0 * p.wheelbase * alpha.sin() / ld).atan()
}

/// Opponent command: pure pursuit on the racing line shifted by the OU
/// offset, at the scaled reference speed.
pub fn opponent_policy(k: &Kinematic, s: f64, track: &Raceline, s_max: f64, noise: &mut OuNoise, rng: &mut ChaCha8Rng, dt: f64, p: &VehicleParams) -> ControlInput {
    let lateral = noise.step(rng, dt);
    ControlInput { v_cmd: s_max * track.sample(s).v_ref, delta_cmd: pure_pursuit(k, s, lateral, track, p) }
}

/// Oriented rectangle centered on the body, from the rear-axle pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub cx: f64,
    pub cy: f64,
    pub psi: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Footprint {
    pub fn of(k: &Kinematic, p: &VehicleParams, inflate: f64) -> Self {
        let (sin, cos) = k.psi.sin_cos();
        let off = 0.5 * p.wheelbase;
        Footprint { cx: k.x + off * cos, cy: k.y + off * sin, psi: k.psi, half_length: 0.5 * p.length + inflate, half_width: 0.5 * p.width + inflate }
    }

    fn axes(&self) -> [(f64, f64); 2] {
        let (sin, cos) = self.psi.sin_cos();
        [(cos, sin), (-sin, cos)]
    }

    fn radius(&self, ax: (f64, f64)) -> f64 {
        let [a, b] = self.axes();
        self.half_length * (a.0 * ax.0 + a.1 * ax.1).abs() + self.half_width * (b.0 * ax.0 + b.1 * ax.1).abs()
    }
}

/// Separating-axis overlap test.
pub fn footprints_overlap(a: &Footprint, b: &Footprint) -> bool {
    let (dx, dy) = (b.cx - a.cx, b.cy - a.cy);
    a.axes().into_iter().chain(b.axes()).all(|ax| (dx * ax.0 + dy * ax.1).abs() <= a.radius(ax) + b.radius(ax))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Opponent speed as a fraction of the reference speed.
    pub speed_scaler: f64,
    pub dt: f64,
    pub max_time: f64,
    /// Stationary std of the opponent's lateral offset [m].
    pub opponent_noise: f64,
    pub opponent_noise_tau: f64,
    pub seed: u64,
    pub s_c: f64,
    pub planner_hz: f64,
    /// Initial opponent lead over the ego [m].
    pub start_gap: f64,
    /// Initial ego arc length [m].
    pub start_s: f64,
    pub obs_noise: f64,
    pub speed_obs_noise: f64,
    pub opponent: bool,
    pub overtake_enabled: bool,
    /// Time of the first model fit [s].
    pub bootstrap_time: f64,
    pub sgp_m: usize,
    pub fit_iters: usize,
    /// Lateral distance to the racing line that counts as rejoined [m].
    pub rejoin_tol: f64,
    /// Collision-check inflation per side [m].
    pub crash_inflation: f64,
    /// Trailing distance: `trail_gap_sc * s_c + trail_headway * v` [m].
    pub trail_gap_sc: f64,
    pub trail_headway: f64,
    pub vehicle: VehicleParams,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            speed_scaler: 0.5,
            dt: 0.01,
            max_time: 60.0,
            opponent_noise: 0.05,
            opponent_noise_tau: 1.0,
            seed: 0,
            s_c: 0.75,
            planner_hz: 20.0,
            start_gap: 2.25,
            start_s: 0.0,
            obs_noise: 0.03,
            speed_obs_noise: 0.05,
            opponent: true,
            overtake_enabled: true,
            bootstrap_time: 2.0,
            sgp_m: 40,
            fit_iters: 200,
            rejoin_tol: 0.1,
            crash_inflation: 0.02,
            trail_gap_sc: 3.0,
            trail_headway: 0.5,
            vehicle: VehicleParams::default(),
        }
    }
}

impl EpisodeConfig {
    /// Messages start with the offending field name.
    pub fn validate(&self) -> Result<(), SimError> {
        let v = &self.vehicle;
        let ratio = 1.0 / (self.planner_hz * self.dt);
        let checks = [
            ((0.0..=1.0).contains(&self.speed_scaler), "speed_scaler", "must lie in [0, 1]"),
            (self.dt > 0.0, "dt", "must be positive"),
            (self.max_time > 0.0, "max_time", "must be positive"),
            (self.planner_hz > 0.0, "planner_hz", "must be positive"),
            ((ratio - ratio.round()).abs() <= 1e-9 && ratio.round() >= 1.0, "planner_hz", "period must be a whole number of simulation steps"),
            (self.opponent_noise >= 0.0, "opponent_noise", "must be non-negative"),
            (self.opponent_noise_tau > 0.0, "opponent_noise_tau", "must be positive"),
            (self.obs_noise >= 0.0, "obs_noise", "must be non-negative"),
            (self.speed_obs_noise >= 0.0, "speed_obs_noise", "must be non-negative"),
            (self.s_c > 0.0, "s_c", "must be positive"),
            (self.start_gap.is_finite() && self.start_s.is_finite(), "start_gap", "start_gap and start_s must be finite"),
            (self.bootstrap_time >= 0.0, "bootstrap_time", "must be non-negative"),
            (self.sgp_m > 0, "sgp_m", "must be positive"),
            (self.fit_iters > 0, "fit_iters", "must be positive"),
            (self.rejoin_tol > 0.0, "rejoin_tol", "must be positive"),
            (self.crash_inflation >= 0.0, "crash_inflation", "must be non-negative"),
            (self.trail_gap_sc >= 0.0 && self.trail_headway >= 0.0, "trail_gap_sc", "trail_gap_sc and trail_headway must be non-negative"),
            (v.length > 0.0, "vehicle.length", "must be positive"),
            (v.width > 0.0, "vehicle.width", "must be positive"),
            (v.wheelbase > 0.0, "vehicle.wheelbase", "must be positive"),
            (v.v_max > 0.0, "vehicle.v_max", "must be positive"),
            (v.delta_max > 0.0, "vehicle.delta_max", "must be positive"),
            (v.a_max > 0.0, "vehicle.a_max", "must be positive"),
            (v.ddelta_max > 0.0, "vehicle.ddelta_max", "must be positive"),
        ];
        match checks.iter().find(|c| !c.0) {
            Some((_, field, msg)) => Err(SimError::Config(format!("{field} {msg}"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Overtake,
    Crash,
    Timeout,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Overtake => "overtake",
            Outcome::Crash => "crash",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub speed_scaler: f64,
    pub outcome: Outcome,
    /// Maneuver path length [m].
    pub path_length: Option<f64>,
    /// Maneuver duration [s].
    pub duration: Option<f64>,
    /// Mean |da|/dt over the maneuver [m/s^3].
    pub jerk_avg: Option<f64>,
    /// Mean |d delta|/dt over the maneuver [rad/s].
    pub steer_rate_avg: Option<f64>,
    pub bound_violation: bool,
    pub sim_time: f64,
    pub ego_laps: Vec<f64>,
    pub max_train_size: usize,
    pub fits: usize,
    /// Wall time of every planner cycle that ran the predictor [ms].
    pub cycle_ms: Vec<f64>,
}

impl EpisodeResult {
    pub fn compute_mean_ms(&self) -> Option<f64> {
        if self.cycle_ms.is_empty() {
            return None;
        }
        Some(self.cycle_ms.iter().sum::<f64>() / self.cycle_ms.len() as f64)
    }

    pub fn compute_std_ms(&self) -> Option<f64> {
        let m = self.compute_mean_ms()?;
        Some((self.cycle_ms.iter().map(|c| (c - m).powi(2)).sum::<f64>() / self.cycle_ms.len() as f64).sqrt())
    }
}

/// N_ot / (N_ot + N_c); timeouts excluded. `None` when undefined.
pub fn compute_success_rate(results: &[EpisodeResult]) -> Option<f64> {
    let ot = results.iter().filter(|r| r.outcome == Outcome::Overtake).count();
    let c = results.iter().filter(|r| r.outcome == Outcome::Crash).count();
    if ot + c == 0 {
        None
    } else {
        Some(ot as f64 / (ot + c) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseLog {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub delta: f64,
    pub s: f64,
    pub n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSummary {
    pub iterations: usize,
    pub objective: f64,
    pub dynamics_residual: f64,
    pub primal_residual: f64,
    pub u0: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        t: f64,
        ego: PoseLog,
        opp: Option<PoseLog>,
        maneuver: bool,
    },
    Plan {
        t: f64,
        mode: PlanMode,
        timings: StageTimings,
        interval: CollisionInterval,
        side: Option<Side>,
        corridor: Option<(Vec<f64>, Vec<f64>)>,
        seed: Option<([f64; 6], [f64; 6], f64)>,
        mpc: Option<MpcSummary>,
        fallback: Option<String>,
    },
    Fit {
        t: f64,
        lap: u32,
        n_lateral: usize,
        n_speed: usize,
        inducing: usize,
        wall_ms: f64,
        fallback: bool,
    },
    End {
        t: f64,
        outcome: Outcome,
    },
}

struct Car {
    k: Kinematic,
    s: f64,
    /// Unwrapped progress.
    s_total: f64,
    n: f64,
    theta: f64,
}

impl Car {
    fn place(track: &Raceline, s: f64, v: f64) -> Result<Self, SimError> {
        let c = track.frenet_to_cartesian(FrenetPose { s, n: 0.0, theta: 0.0 }).map_err(|e| SimError::Config(e.to_string()))?;
        Ok(Car { k: Kinematic { x: c.x, y: c.y, psi: c.psi, v, delta: 0.0 }, s: track.wrap_s(s), s_total: s, n: 0.0, theta: 0.0 })
    }

    fn advance(&mut self, k: Kinematic, track: &Raceline) {
        self.k = k;
        if let Ok(f) = track.cartesian_to_frenet(k.x, k.y, k.psi, self.s) {
            self.s_total += track.signed_gap(self.s, f.s);
            self.s = f.s;
            self.n = f.n;
            self.theta = f.theta;
        }
    }

    fn log(&self) -> PoseLog {
        PoseLog { x: self.k.x, y: self.k.y, psi: self.k.psi, v: self.k.v, delta: self.k.delta, s: self.s_total, n: self.n }
    }
}

/// Fits both opponent models, falling back to fixed hyperparameters when
/// the data cannot support hyperparameter optimization.
fn fit_estimate(
    lat: &ObservationBuffer,
    spd: &ObservationBuffer,
    prev: Option<&OpponentEstimate>,
    cfg: &EpisodeConfig,
    lap: u32,
    track_length: f64,
) -> Option<(OpponentEstimate, bool)> {
    let mut fallback = false;
    let mut one = |buf: &ObservationBuffer, prev: Option<&SgpModel>, var: f64| -> Option<SgpModel> {
        let (x, y) = (buf.xs(), buf.ys());
        if x.is_empty() {
            return None;
        }
        let init = match prev {
            Some(m) => GpInit {
                lengthscale: Some(m.kernel().lengthscale),
                signal_variance: Some(m.kernel().signal_variance),
                noise_variance: Some(m.noise_variance()),
                inducing: None,
            },
            None => GpInit::default(),
        };
        let opts = FitOptions { iters: cfg.fit_iters, init, seed: cfg.seed, ..FitOptions::default() };
        match SgpModel::fit(&x, &y, cfg.sgp_m, &opts) {
            Ok(m) => Some(m),
            Err(GpError::Fit(_)) | Err(GpError::InvalidInput(_)) | Err(GpError::Degenerate) => {
                fallback = true;
                let mut z = x.clone();
                z.sort_by(f64::total_cmp);
                z.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
                z.truncate(cfg.sgp_m);
                SgpModel::from_parts(&x, &y, &z, RbfKernel::new(2.0, var), var).ok()
            }
            Err(_) => None,
        }
    };
    let d = one(lat, prev.map(|e| &e.sgp_d), 0.01)?;
    let v = one(spd, prev.map(|e| &e.sgp_v), 0.01)?;
    Some((OpponentEstimate { sgp_d: d, sgp_v: v, last_update_lap: lap, track_length }, fallback))
}

/// Runs one episode. The log is appended to when given.
pub fn run_episode(cfg: &EpisodeConfig, track: &Raceline, planner_cfg: &PlannerConfig, mut log: Option<&mut Vec<LogRecord>>) -> Result<EpisodeResult, SimError> {
    cfg.validate()?;
    if !track.is_closed() {
        return Err(SimError::Config("episodes need a closed track".into()));
    }
    let mut pcfg = planner_cfg.clone();
    pcfg.predictor.s_c = cfg.s_c;
    pcfg.mpc.wheelbase = cfg.vehicle.wheelbase;
    let mut planner = Planner::new(pcfg).map_err(|e| SimError::Planner(e.to_string()))?;
    let vp = cfg.vehicle;
    let len = track.total_length();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gauss = |rng: &mut ChaCha8Rng, std: f64| if std > 0.0 { Normal::new(0.0, std).unwrap().sample(rng) } else { 0.0 };

    let v0 = cfg.speed_scaler * track.sample(cfg.start_s + cfg.start_gap).v_ref;
    let ego_v0 = if cfg.opponent { v0 } else { track.sample(cfg.start_s).v_ref };
    let mut ego = Car::place(track, cfg.start_s, ego_v0)?;
    let mut opp = if cfg.opponent { Some(Car::place(track, cfg.start_s + cfg.start_gap, v0)?) } else { None };
    let mut ou = OuNoise { value: 0.0, std: cfg.opponent_noise, tau: cfg.opponent_noise_tau };

    let sel = |lo: f64, hi: f64| SelectionConfig::for_track(len, track.mean_spacing(), lo, hi);
    let half = track.waypoints().iter().map(|w| w.d_left.max(w.d_right)).fold(0.0, f64::max);
    let mut buf_d = ObservationBuffer::new(sel(-half, half));
    let mut buf_v = ObservationBuffer::new(sel(0.0, vp.v_max));
    let (mut inc_d, mut inc_v): (Vec<Observation>, Vec<Observation>) = (Vec::new(), Vec::new());
    let mut est: Option<OpponentEstimate> = None;
    let mut fitted_lap: Option<u32> = None;
    let mut fits = 0;
    let mut max_train = 0;

    let plan_every = (1.0 / (cfg.planner_hz * cfg.dt)).round() as usize;
    let steps = (cfg.max_time / cfg.dt).round() as usize;
    let mut cmd = ControlInput { v_cmd: ego.k.v, delta_cmd: 0.0 };
    let mut mode = PlanMode::Racing;
    let mut maneuver_start: Option<f64> = None;
    let (mut path, mut jerk_sum, mut steer_sum, mut mstep) = (0.0, 0.0, 0.0, 0usize);
    let mut prev_a: Option<f64> = None;
    let mut cycle_ms = Vec::new();
    let mut ego_laps = Vec::new();
    let mut lap_start = 0.0;
    let mut outcome = Outcome::Timeout;
    let mut bound_violation = false;
    let mut t = 0.0;

    let check = |ego: &Car, opp: &Option<Car>| -> (bool, bool) {
        let c = track.sample(ego.s);
        let out = ego.n > c.d_left || -ego.n > c.d_right;
        let hit = opp.as_ref().is_some_and(|o| footprints_overlap(&Footprint::of(&ego.k, &vp, cfg.crash_inflation), &Footprint::of(&o.k, &vp, cfg.crash_inflation)));
        (out, hit)
    };

    for step in 0..=steps {
        t = step as f64 * cfg.dt;
        let (out, hit) = check(&ego, &opp);
        if out || hit {
            bound_violation = out;
            outcome = Outcome::Crash;
            break;
        }
        if let Some(o) = &opp {
            if maneuver_start.is_some() && ego.s_total - o.s_total >= cfg.s_c && ego.n.abs() <= cfg.rejoin_tol {
                outcome = Outcome::Overtake;
                break;
            }
        }
        if step == steps {
            break;
        }

        if step % plan_every == 0 {
            let mut view = None;
            if let Some(o) = &opp {
                let lap = (o.s_total / len).floor().max(0.0) as u32;
                let s_obs = track.wrap_s(o.s + gauss(&mut rng, cfg.obs_noise));
                let n_obs = o.n + gauss(&mut rng, cfg.obs_noise);
                let v_obs = (o.k.v + gauss(&mut rng, cfg.speed_obs_noise)).max(0.0);
                inc_d.push(Observation { x: s_obs, y: n_obs, t, lap });
                inc_v.push(Observation { x: s_obs, y: v_obs, t, lap });
                view = Some(OpponentView { gap: track.signed_gap(ego.s, s_obs), v: v_obs });

                let due = match fitted_lap {
                    None => t >= cfg.bootstrap_time,
                    Some(l) => lap > l,
                };
                if due && !inc_d.is_empty() {
                    let w0 = Instant::now();
                    buf_d.select(&inc_d, est.as_ref().map(|e| &e.sgp_d));
                    buf_v.select(&inc_v, est.as_ref().map(|e| &e.sgp_v));
                    inc_d.clear();
                    inc_v.clear();
                    max_train = max_train.max(buf_d.train.len()).max(buf_v.train.len());
                    if let Some((e, fb)) = fit_estimate(&buf_d, &buf_v, est.as_ref(), cfg, lap, len) {
                        fits += 1;
                        if let Some(l) = log.as_deref_mut() {
                            l.push(LogRecord::Fit {
                                t,
                                lap,
                                n_lateral: buf_d.train.len(),
                                n_speed: buf_v.train.len(),
                                inducing: e.sgp_d.inducing().len(),
                                wall_ms: w0.elapsed().as_secs_f64() * 1e3,
                                fallback: fb,
                            });
                        }
                        est = Some(e);
                    }
                    fitted_lap = Some(lap);
                }
            }

            let gap_des = |v: f64| cfg.trail_gap_sc * cfg.s_c + cfg.trail_headway * v;
            if cfg.overtake_enabled && est.is_some() {
                let world = WorldSnapshot {
                    ego: EgoFrenet { s: ego.s_total, n: ego.n, theta: ego.theta, v: ego.k.v },
                    u_prev: [ego.k.v, ego.k.delta],
                    opponent: view,
                    estimate: est.as_ref(),
                };
                let out = planner.plan_cycle(&world, track);
                if out.active {
                    cycle_ms.push(out.timings.total * 1e3);
                }
                mode = out.mode;
                if mode == PlanMode::Overtake && maneuver_start.is_none() {
                    maneuver_start = Some(t);
                }
                if let Some(u) = out.command {
                    cmd = ControlInput { v_cmd: u[0], delta_cmd: u[1] };
                }
                if let Some(l) = log.as_deref_mut() {
                    l.push(LogRecord::Plan {
                        t,
                        mode: out.mode,
                        timings: out.timings,
                        interval: out.interval,
                        side: out.side,
                        corridor: out.corridor.as_ref().map(|c| (c.lower.clone(), c.upper.clone())),
                        seed: out.seed.as_ref().map(|q| (q.coeffs_s, q.coeffs_d, q.duration)),
                        mpc: out.mpc.as_ref().map(|m| MpcSummary {
                            iterations: m.iterations,
                            objective: m.objective,
                            dynamics_residual: m.dynamics_residual,
                            primal_residual: m.primal_residual,
                            u0: m.u[0],
                        }),
                        fallback: out.fallback_reason.clone(),
                    });
                }
            } else {
                mode = match view {
                    Some(v) if v.gap > -cfg.s_c && v.gap < gap_des(v.v) + 2.0 => PlanMode::Trailing,
                    _ => PlanMode::Racing,
                };
            }
            if mode != PlanMode::Overtake {
                let v_ref = track.sample(ego.s).v_ref;
                let v_cmd = match (mode, view) {
                    (PlanMode::Trailing, Some(o)) => (o.v + (o.gap - gap_des(o.v))).clamp(0.0, v_ref),
                    _ => v_ref,
                };
                cmd = ControlInput { v_cmd, delta_cmd: 0.0 };
            }
        }
        if mode != PlanMode::Overtake {
            cmd.delta_cmd = pure_pursuit(&ego.k, ego.s, 0.0, track, &vp);
        }

        if let Some(o) = opp.as_mut() {
            let u = opponent_policy(&o.k, o.s, track, cfg.speed_scaler, &mut ou, &mut rng, cfg.dt, &vp);
            let k = step_vehicle(&o.k, u, cfg.dt, &vp);
            o.advance(k, track);
        }
        let before = ego.k;
        let k = step_vehicle(&ego.k, cmd, cfg.dt, &vp);
        let lap_before = (ego.s_total / len).floor();
        ego.advance(k, track);
        if (ego.s_total / len).floor() > lap_before {
            ego_laps.push(t + cfg.dt - lap_start);
            lap_start = t + cfg.dt;
        }
        if maneuver_start.is_some() {
            path += (k.x - before.x).hypot(k.y - before.y);
            let a = (k.v - before.v) / cfg.dt;
            if let Some(pa) = prev_a {
                jerk_sum += (a - pa).abs() / cfg.dt;
            }
            prev_a = Some(a);
            steer_sum += (k.delta - before.delta).abs() / cfg.dt;
            mstep += 1;
        }
        if let Some(l) = log.as_deref_mut() {
            l.push(LogRecord::Step { t: t + cfg.dt, ego: ego.log(), opp: opp.as_ref().map(|o| o.log()), maneuver: maneuver_start.is_some() });
        }
    }
    if let Some(l) = log.as_deref_mut() {
        l.push(LogRecord::End { t, outcome });
    }

    let done = outcome == Outcome::Overtake;
    let start = maneuver_start.unwrap_or(t);
    Ok(EpisodeResult {
        seed: cfg.seed,
        speed_scaler: cfg.speed_scaler,
        outcome,
        path_length: done.then_some(path),
        duration: done.then_some(t - start),
        jerk_avg: (done && mstep > 1).then(|| jerk_sum / (mstep - 1) as f64),
        steer_rate_avg: (done && mstep > 0).then(|| steer_sum / mstep as f64),
        bound_violation,
        sim_time: t,
        ego_laps,
        max_train_size: max_train,
        fits,
        cycle_ms,
    })
}
