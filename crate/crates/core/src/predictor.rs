//! Opponent forecasting: forward simulation and collision interval.

use serde::{Deserialize, Serialize};

use crate::gp::{FitOptions, GpError, Posterior, SgpModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub dt: f64,
    pub horizon: usize,
    /// Collision threshold [m].
    pub s_c: f64,
    pub v_max: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig { dt: 0.05, horizon: 80, s_c: 0.75, v_max: 8.0 }
    }
}

/// Lateral (s -> d) and speed (s -> v) opponent models.
#[derive(Debug, Clone)]
pub struct OpponentEstimate {
    pub sgp_d: SgpModel,
    pub sgp_v: SgpModel,
    pub last_update_lap: u32,
    pub track_length: f64,
}

impl OpponentEstimate {
    pub fn fit(
        xd: &[f64],
        yd: &[f64],
        xv: &[f64],
        yv: &[f64],
        m: usize,
        opts: &FitOptions,
        lap: u32,
        track_length: f64,
    ) -> Result<Self, GpError> {
        Ok(OpponentEstimate {
            sgp_d: SgpModel::fit(xd, yd, m, opts)?,
            sgp_v: SgpModel::fit(xv, yv, m, opts)?,
            last_update_lap: lap,
            track_length,
        })
    }

    fn wrap(&self, s: f64) -> f64 {
        if self.track_length > 0.0 {
            s.rem_euclid(self.track_length)
        } else {
            s
        }
    }

    pub fn speed(&self, s: f64) -> f64 {
        self.sgp_v.predict(self.wrap(s)).mean
    }

    /// Posterior of the lateral model at `s`.
    pub fn lateral(&self, s: f64) -> Posterior {
        self.sgp_d.predict(self.wrap(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoLongitudinal {
    pub s: f64,
    pub v: f64,
    pub a: f64,
}

/// Paired rollouts on unwrapped arc length, `horizon + 1` entries each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub ego_s: Vec<f64>,
    pub ego_v: Vec<f64>,
    pub opp_s: Vec<f64>,
    pub opp_v: Vec<f64>,
}

impl Rollout {
    pub fn gap(&self, k: usize) -> f64 {
        self.opp_s[k] - self.ego_s[k]
    }
}

/// Steps both vehicles forward. `opp_gap` is the opponent's arc-length lead
/// over the ego at k = 0; `speed` maps unwrapped opponent arc length to speed.
pub fn forward_simulate_with<F: Fn(f64) -> f64>(ego: EgoLongitudinal, opp_gap: f64, speed: F, cfg: &PredictorConfig) -> Rollout {
    let n = cfg.horizon + 1;
    let dt = cfg.dt;
    let mut r = Rollout {
        ego_s: Vec::with_capacity(n),
        ego_v: Vec::with_capacity(n),
        opp_s: Vec::with_capacity(n),
        opp_v: Vec::with_capacity(n),
    };
    let (mut se, mut ve) = (ego.s, ego.v.clamp(0.0, cfg.v_max));
    let mut so = ego.s + opp_gap;
    let mut vo = speed(so).clamp(0.0, cfg.v_max);
    r.ego_s.push(se);
    r.ego_v.push(ve);
    r.opp_s.push(so);
    r.opp_v.push(vo);
    for _ in 1..n {
        se += ve * dt + 0.5 * ego.a * dt * dt;
        ve = (ve + ego.a * dt).clamp(0.0, cfg.v_max);
        so += vo * dt;
        vo = speed(so).clamp(0.0, cfg.v_max);
        r.ego_s.push(se);
        r.ego_v.push(ve);
        r.opp_s.push(so);
        r.opp_v.push(vo);
    }
    r
}

pub fn forward_simulate(ego: EgoLongitudinal, opp_gap: f64, est: &OpponentEstimate, cfg: &PredictorConfig) -> Rollout {
    forward_simulate_with(ego, opp_gap, |s| est.speed(s), cfg)
}

/// Arc-length span (ego positions, unwrapped) where the gap is below `s_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionInterval {
    pub c_start: f64,
    pub c_end: f64,
    pub exists: bool,
}

impl CollisionInterval {
    pub const NONE: CollisionInterval = CollisionInterval { c_start: 0.0, c_end: 0.0, exists: false };

    /// Closed-interval membership.
    pub fn contains(&self, s: f64) -> bool {
        self.exists && s >= self.c_start && s <= self.c_end
    }
}

pub fn find_collision_interval(r: &Rollout, s_c: f64) -> CollisionInterval {
    let n = r.ego_s.len();
    let Some(k0) = (0..n).find(|&k| r.gap(k).abs() < s_c) else {
        return CollisionInterval::NONE;
    };
    let c_start = r.ego_s[k0];
    let c_end = match (k0 + 1..n).find(|&k| r.gap(k).abs() >= s_c) {
        Some(k) => r.ego_s[k],
        None => r.ego_s[n - 1],
    };
    if c_end <= c_start {
        return CollisionInterval::NONE;
    }
    CollisionInterval { c_start, c_end, exists: true }
}
