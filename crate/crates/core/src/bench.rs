//! Synthetic opponent data and prediction benchmarks.
//!
//! The synthetic opponent drives the reference speed profile scaled by
//! `speed_scaler`, with lateral profile `d(s) = amplitude sin(2 pi s / L)`.
//! Each lap is observed at `rate_hz` with Gaussian noise, a fraction of
//! gross outliers, and one occluded window of `occlusion` * L in which
//! nothing is observed.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::gp::{DenseGp, FitOptions, GpError, GpInit, RbfKernel, SgpModel};
use crate::selection::{range_filter, spatial_time_filter, Observation, ObservationBuffer, SelectionConfig};
use crate::track::Raceline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub laps: u32,
    pub speed_scaler: f64,
    pub rate_hz: f64,
    pub amplitude: f64,
    pub lateral_noise: f64,
    pub speed_noise: f64,
    pub outlier_prob: f64,
    /// Outliers are displaced by U(0.5, outlier_scale) m with random sign.
    pub outlier_scale: f64,
    /// Occluded fraction of every lap.
    pub occlusion: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            laps: 3,
            speed_scaler: 0.5,
            rate_hz: 20.0,
            amplitude: 0.3,
            lateral_noise: 0.05,
            speed_noise: 0.1,
            outlier_prob: 0.05,
            outlier_scale: 2.0,
            occlusion: 0.2,
            seed: 0,
        }
    }
}

/// Observations of one lap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapData {
    pub lateral: Vec<Observation>,
    pub speed: Vec<Observation>,
}

pub fn true_lateral(s: f64, amplitude: f64, track_length: f64) -> f64 {
    amplitude * (2.0 * PI * s / track_length).sin()
}

pub fn synthetic_laps(track: &Raceline, cfg: &SyntheticConfig) -> Vec<LapData> {
    let len = track.total_length();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gauss = |rng: &mut ChaCha8Rng, std: f64| if std > 0.0 { Normal::new(0.0, std).unwrap().sample(rng) } else { 0.0 };
    let dt = 1.0 / cfg.rate_hz;
    let v_floor = 0.1;
    let mut t = 0.0;
    let mut laps = Vec::new();
    for lap in 0..cfg.laps {
        let occ_start = rng.random_range(0.0..len);
        let occluded = |s: f64| (s - occ_start).rem_euclid(len) < cfg.occlusion * len;
        let mut data = LapData { lateral: Vec::new(), speed: Vec::new() };
        let mut s = 0.0;
        while s < len {
            let v = (cfg.speed_scaler * track.sample(s).v_ref).max(v_floor);
            if !occluded(s) {
                let mut d = true_lateral(s, cfg.amplitude, len) + gauss(&mut rng, cfg.lateral_noise);
                if rng.random::<f64>() < cfg.outlier_prob {
                    let mag = rng.random_range(0.5..cfg.outlier_scale.max(0.5 + 1e-9));
                    d += if rng.random::<bool>() { mag } else { -mag };
                }
                data.lateral.push(Observation { x: s, y: d, t, lap });
                data.speed.push(Observation { x: s, y: v + gauss(&mut rng, cfg.speed_noise), t, lap });
            }
            s += v * dt;
            t += dt;
        }
        laps.push(data);
    }
    laps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionComparison {
    pub curated_rmse: f64,
    pub latest_rmse: f64,
    pub curated_size: usize,
    pub latest_size: usize,
}

impl SelectionComparison {
    pub fn ratio(&self) -> f64 {
        self.curated_rmse / self.latest_rmse
    }
}

fn grid(len: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| (i as f64 + 0.5) * len / points as f64).collect()
}

fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    (pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64).sqrt()
}

/// Curated sparse GP (selection after every lap, refit each time) against a
/// dense GP on the range-filtered latest lap, both scored on the true
/// lateral profile over `points` evenly spaced arc lengths.
pub fn compare_selection(track: &Raceline, cfg: &SyntheticConfig, m: usize, fit_iters: usize, points: usize) -> Result<SelectionComparison, GpError> {
    let len = track.total_length();
    let laps = synthetic_laps(track, cfg);
    let half = track.waypoints().iter().map(|w| w.d_left.max(w.d_right)).fold(0.0, f64::max);
    let sel = SelectionConfig::for_track(len, track.mean_spacing(), -half, half);
    let opts = FitOptions { iters: fit_iters, seed: cfg.seed, ..FitOptions::default() };
    let mut buf = ObservationBuffer::new(sel.clone());
    let mut model: Option<SgpModel> = None;
    for lap in &laps {
        buf.select(&lap.lateral, model.as_ref());
        let init = model.as_ref().map_or(GpInit::default(), |p| GpInit {
            lengthscale: Some(p.kernel().lengthscale),
            signal_variance: Some(p.kernel().signal_variance),
            noise_variance: Some(p.noise_variance()),
            inducing: None,
        });
        model = Some(SgpModel::fit(&buf.xs(), &buf.ys(), m, &FitOptions { init, ..opts.clone() })?);
    }
    let model = model.ok_or_else(|| GpError::InvalidInput("no laps".into()))?;
    let last = laps.last().unwrap();
    let latest = range_filter(&spatial_time_filter(&last.lateral, len, sel.delta_s), sel.y_min, sel.y_max);
    let (lx, ly): (Vec<f64>, Vec<f64>) = latest.iter().map(|o| (o.x, o.y)).unzip();
    let dense = DenseGp::fit(&lx, &ly, &opts)?;

    let xs = grid(len, points);
    let truth: Vec<f64> = xs.iter().map(|&s| true_lateral(s, cfg.amplitude, len)).collect();
    let cur: Vec<f64> = model.predict_batch(&xs).iter().map(|p| p.mean).collect();
    let lat: Vec<f64> = dense.predict_batch(&xs).iter().map(|p| p.mean).collect();
    Ok(SelectionComparison { curated_rmse: rmse(&cur, &truth), latest_rmse: rmse(&lat, &truth), curated_size: buf.train.len(), latest_size: lx.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub model: String,
    /// Inducing points; `None` for the dense GP.
    pub m: Option<usize>,
    pub n: usize,
    pub fit_ms: f64,
    pub predict_ms: f64,
    pub rmse: f64,
}

/// Fits a dense GP and one sparse GP per entry of `ms` on the same data with
/// the same iteration budget, then times one batch prediction over
/// `points` arc lengths. For `m == n` the sparse model reuses the dense
/// hyperparameters with the inducing inputs at the data, so the two
/// predictors coincide.
pub fn timing_bench(x: &[f64], y: &[f64], truth: &dyn Fn(f64) -> f64, span: f64, ms: &[usize], iters: usize, points: usize, seed: u64) -> Result<Vec<TimingRow>, GpError> {
    let opts = FitOptions { iters, seed, ..FitOptions::default() };
    let xs = grid(span, points);
    let t_true: Vec<f64> = xs.iter().map(|&s| truth(s)).collect();
    let mut rows = Vec::new();

    let t = Instant::now();
    let dense = DenseGp::fit(x, y, &opts)?;
    let fit_ms = t.elapsed().as_secs_f64() * 1e3;
    let t = Instant::now();
    let pred = dense.predict_batch(&xs);
    let predict_ms = t.elapsed().as_secs_f64() * 1e3;
    let mean: Vec<f64> = pred.iter().map(|p| p.mean).collect();
    rows.push(TimingRow { model: "dense".into(), m: None, n: x.len(), fit_ms, predict_ms, rmse: rmse(&mean, &t_true) });

    for &m in ms {
        let t = Instant::now();
        let sgp = if m == x.len() {
            let k = dense.kernel();
            SgpModel::from_parts(x, y, x, RbfKernel::new(k.lengthscale, k.signal_variance), dense.noise_variance())?
        } else {
            SgpModel::fit(x, y, m, &opts)?
        };
        let fit_ms = t.elapsed().as_secs_f64() * 1e3;
        let t = Instant::now();
        let pred = sgp.predict_batch(&xs);
        let predict_ms = t.elapsed().as_secs_f64() * 1e3;
        let mean: Vec<f64> = pred.iter().map(|p| p.mean).collect();
        rows.push(TimingRow { model: "sgp".into(), m: Some(m), n: x.len(), fit_ms, predict_ms, rmse: rmse(&mean, &t_true) });
    }
    Ok(rows)
}

/// Every `k`-th range-filtered lateral observation across all laps, `n` in total.
pub fn bench_points(track: &Raceline, laps: &[LapData], n: usize) -> (Vec<f64>, Vec<f64>) {
    let half = track.waypoints().iter().map(|w| w.d_left.max(w.d_right)).fold(0.0, f64::max);
    let all: Vec<Observation> = laps.iter().flat_map(|l| range_filter(&l.lateral, -half, half)).collect();
    let n = n.min(all.len());
    (0..n).map(|i| all[i * all.len() / n]).map(|o| (o.x, o.y)).unzip()
}
