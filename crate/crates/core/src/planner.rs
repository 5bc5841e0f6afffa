//! One planning cycle: predictor, seed trajectory and MPC, with fallbacks.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::mpc::{build_corridor, relax_corridor, Corridor, CorridorConfig, MpcConfig, MpcError, MpcSolution, MpcSolver};
use crate::predictor::{find_collision_interval, forward_simulate, CollisionInterval, EgoLongitudinal, OpponentEstimate, PredictorConfig};
use crate::qp::QpStatus;
use crate::seed::{extract_flat_references, plan_seed, FlatConfig, FlatReferences, QuinticTraj, SeedConfig, Side};
use crate::track::Raceline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub predictor: PredictorConfig,
    pub seed: SeedConfig,
    pub corridor: CorridorConfig,
    pub mpc: MpcConfig,
    /// Opponents further ahead than this are ignored [m].
    pub detection_range: f64,
    /// Seed speed surplus over the opponent [m/s].
    pub pass_speed_margin: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            predictor: PredictorConfig::default(),
            seed: SeedConfig::default(),
            corridor: CorridorConfig::default(),
            mpc: MpcConfig::default(),
            detection_range: 15.0,
            pass_speed_margin: 1.5,
        }
    }
}

impl PlannerConfig {
    /// Messages start with the dotted path of the offending field.
    pub fn validate(&self) -> Result<(), String> {
        if let Err(MpcError::InvalidInput(m)) = self.mpc.validate() {
            return Err(format!("mpc.{m}"));
        }
        let (p, s, c) = (&self.predictor, &self.seed, &self.corridor);
        let checks = [
            (p.dt > 0.0, "predictor.dt", "must be positive"),
            (p.horizon > 0, "predictor.horizon", "must be positive"),
            (p.s_c > 0.0, "predictor.s_c", "must be positive"),
            (p.v_max > 0.0, "predictor.v_max", "must be positive"),
            (s.margin > 0.0, "seed.margin", "must be positive"),
            (s.boundary_margin >= 0.0, "seed.boundary_margin", "must be non-negative"),
            (s.lead_time > 0.0, "seed.lead_time", "must be positive"),
            (s.v_floor > 0.0, "seed.v_floor", "must be positive"),
            (s.ds > 0.0, "seed.ds", "must be positive"),
            (s.clearance_factor > 0.0 && s.clearance_factor <= 1.0, "seed.clearance_factor", "must lie in (0, 1]"),
            (s.inflation >= 1.0, "seed.inflation", "must be at least 1"),
            (c.margin >= 0.0, "corridor.margin", "must be non-negative"),
            (c.boundary_margin >= 0.0, "corridor.boundary_margin", "must be non-negative"),
            (c.sigma_scale >= 0.0, "corridor.sigma_scale", "must be non-negative"),
            (c.recovery_rate > 0.0, "corridor.recovery_rate", "must be positive"),
            (self.detection_range > 0.0, "detection_range", "must be positive"),
            (self.pass_speed_margin >= 0.0, "pass_speed_margin", "must be non-negative"),
        ];
        match checks.iter().find(|c| !c.0) {
            Some((_, field, msg)) => Err(format!("{field} {msg}")),
            None => Ok(()),
        }
    }
}

/// Ego state in Frenet coordinates with unwrapped arc length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoFrenet {
    pub s: f64,
    pub n: f64,
    pub theta: f64,
    pub v: f64,
}

/// Perceived opponent relative to the ego.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpponentView {
    /// Opponent arc length minus ego arc length [m].
    pub gap: f64,
    pub v: f64,
}

pub struct WorldSnapshot<'a> {
    pub ego: EgoFrenet,
    /// Last applied (v, delta).
    pub u_prev: [f64; 2],
    pub opponent: Option<OpponentView>,
    pub estimate: Option<&'a OpponentEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Follow the racing line.
    Racing,
    /// Follow the MPC solution.
    Overtake,
    /// Follow the racing line behind the opponent.
    Trailing,
}

/// Wall time per stage [s].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub predict: f64,
    pub seed: f64,
    pub mpc: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanOutput {
    pub mode: PlanMode,
    pub interval: CollisionInterval,
    pub side: Option<Side>,
    pub seed: Option<QuinticTraj>,
    pub refs: Option<FlatReferences>,
    pub corridor: Option<Corridor>,
    pub mpc: Option<MpcSolution>,
    /// Input to apply until the next cycle, when following a plan.
    pub command: Option<[f64; 2]>,
    pub timings: StageTimings,
    /// Whether the predictor ran this cycle.
    pub active: bool,
    pub fallback_reason: Option<String>,
}

impl PlanOutput {
    fn racing(timings: StageTimings, active: bool) -> Self {
        PlanOutput {
            mode: PlanMode::Racing,
            interval: CollisionInterval::NONE,
            side: None,
            seed: None,
            refs: None,
            corridor: None,
            mpc: None,
            command: None,
            timings,
            active,
            fallback_reason: None,
        }
    }
}

/// Time at which the seed reaches arc length `s`.
fn time_at(traj: &QuinticTraj, s: f64) -> f64 {
    let e = traj.eval(0.0);
    let mut t = (s - e.s) / e.ds.max(1e-6);
    for _ in 0..30 {
        let k = traj.eval(t);
        let step = (k.s - s) / k.ds.max(1e-6);
        t -= step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    t
}

pub struct Planner {
    pub cfg: PlannerConfig,
    mpc: MpcSolver,
    side: Option<Side>,
    /// Last solved input sequence and the cycles elapsed since.
    previous: Option<(Vec<[f64; 2]>, usize)>,
}

impl Planner {
    pub fn new(cfg: PlannerConfig) -> Result<Self, MpcError> {
        let mpc = MpcSolver::new(cfg.mpc.clone())?;
        Ok(Planner { cfg, mpc, side: None, previous: None })
    }

    pub fn plan_cycle(&mut self, world: &WorldSnapshot, track: &Raceline) -> PlanOutput {
        let start = Instant::now();
        let mut tm = StageTimings::default();
        let (Some(opp), Some(est)) = (world.opponent, world.estimate) else {
            self.idle();
            tm.total = start.elapsed().as_secs_f64();
            return PlanOutput::racing(tm, false);
        };
        if opp.gap > self.cfg.detection_range || opp.gap < -self.cfg.predictor.s_c {
            self.idle();
            tm.total = start.elapsed().as_secs_f64();
            return PlanOutput::racing(tm, false);
        }
        let ego = world.ego;

        let v_ref = track.sample(ego.s).v_ref;
        let v_plan = ego.v.max((opp.v + self.cfg.pass_speed_margin).min(v_ref)).min(self.cfg.mpc.v_max);

        let t = Instant::now();
        let rollout = forward_simulate(EgoLongitudinal { s: ego.s, v: v_plan, a: 0.0 }, opp.gap, est, &self.cfg.predictor);
        let interval = find_collision_interval(&rollout, self.cfg.predictor.s_c);
        tm.predict = t.elapsed().as_secs_f64();
        if !interval.exists {
            self.idle();
            tm.total = start.elapsed().as_secs_f64();
            return PlanOutput::racing(tm, true);
        }

        let mut out = PlanOutput::racing(tm, true);
        out.interval = interval;
        let t = Instant::now();
        let d_mean = |s: f64| est.lateral(s).mean;
        let seeded = plan_seed(&interval, &d_mean, track, v_plan, &self.cfg.seed, self.side).map_err(|e| e.to_string()).and_then(|plan| {
            let t0 = time_at(&plan.traj, ego.s);
            let fc = FlatConfig { wheelbase: self.cfg.mpc.wheelbase, v_min: 0.05, delta_max: self.cfg.mpc.delta_max };
            extract_flat_references(&plan.traj, track, self.cfg.mpc.horizon, self.cfg.mpc.dt, t0, &fc)
                .map(|r| (plan, r))
                .map_err(|e| e.to_string())
        });
        out.timings.seed = t.elapsed().as_secs_f64();
        let (plan, refs) = match seeded {
            Ok(v) => v,
            Err(e) => return self.trail(out, start, e),
        };
        out.side = Some(plan.key_points.side);
        out.seed = Some(plan.traj.clone());

        let t = Instant::now();
        let s_refs: Vec<f64> = refs.x_ref[1..].iter().map(|x| x[0]).collect();
        let d_post = |s: f64| {
            let p = est.lateral(s);
            (p.mean, p.std())
        };
        let step = self.cfg.corridor.recovery_rate * self.cfg.mpc.dt;
        let solved = build_corridor(&s_refs, &interval, &d_post, track, plan.key_points.side, &self.cfg.corridor).and_then(|mut c| {
            relax_corridor(&mut c, ego.n, self.cfg.mpc.dt * ego.v * ego.theta.sin(), step);
            let x0 = [ego.s, ego.n, ego.theta];
            self.mpc.solve(&x0, &world.u_prev, &refs, &c, track).map(|m| (c, m))
        });
        out.timings.mpc = t.elapsed().as_secs_f64();
        out.refs = Some(refs);
        match solved {
            Ok((c, m)) if m.status == QpStatus::Solved => {
                out.corridor = Some(c);
                out.command = Some(m.u[0]);
                self.previous = Some((m.u.clone(), 0));
                out.mpc = Some(m);
                out.mode = PlanMode::Overtake;
                self.side = Some(plan.key_points.side);
                out.timings.total = start.elapsed().as_secs_f64();
                out
            }
            Ok((c, m)) => {
                out.corridor = Some(c);
                let reason = format!("mpc status {:?}", m.status);
                self.mpc.reset();
                self.reuse_or_trail(out, start, reason, plan.key_points.side)
            }
            Err(e) => self.reuse_or_trail(out, start, e.to_string(), plan.key_points.side),
        }
    }

    /// Follows the previous solution shifted by the elapsed cycles while it
    /// lasts; trails otherwise.
    fn reuse_or_trail(&mut self, mut out: PlanOutput, start: Instant, reason: String, side: Side) -> PlanOutput {
        if let Some((u, age)) = self.previous.as_mut() {
            *age += 1;
            if *age < u.len() && self.side == Some(side) {
                out.command = Some(u[*age]);
                out.mode = PlanMode::Overtake;
                out.fallback_reason = Some(format!("{reason}; previous plan"));
                out.timings.total = start.elapsed().as_secs_f64();
                return out;
            }
        }
        self.trail(out, start, reason)
    }

    fn idle(&mut self) {
        self.side = None;
        self.previous = None;
        self.mpc.reset();
    }

    fn trail(&mut self, mut out: PlanOutput, start: Instant, reason: String) -> PlanOutput {
        self.idle();
        out.mode = PlanMode::Trailing;
        out.fallback_reason = Some(reason);
        out.timings.total = start.elapsed().as_secs_f64();
        out
    }
}
