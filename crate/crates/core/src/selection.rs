//! Inducing-guided curation of opponent observations.

use serde::{Deserialize, Serialize};

use crate::cluster;
use crate::gp::SgpModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Arc length [m].
    pub x: f64,
    /// Target value (lateral offset or speed).
    pub y: f64,
    /// Timestamp [s].
    pub t: f64,
    pub lap: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub n_target: usize,
    pub delta_s: f64,
    pub track_length: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub lloyd_iters: usize,
    pub lloyd_tol: f64,
}

impl SelectionConfig {
    /// Bin width of twice the mean waypoint spacing.
    pub fn for_track(track_length: f64, mean_spacing: f64, y_min: f64, y_max: f64) -> Self {
        SelectionConfig {
            n_target: 400,
            delta_s: 2.0 * mean_spacing,
            track_length,
            y_min,
            y_max,
            lloyd_iters: 50,
            lloyd_tol: 1e-6,
        }
    }
}

fn bin(x: f64, track_length: f64, delta_s: f64) -> i64 {
    let s = if track_length > 0.0 { x.rem_euclid(track_length) } else { x };
    (s / delta_s).floor() as i64
}

/// Keeps the latest observation per (lap, spatial bin), ordered by (lap, bin).
/// Equal timestamps go to the later list position.
pub fn spatial_time_filter(incoming: &[Observation], track_length: f64, delta_s: f64) -> Vec<Observation> {
    let mut keyed: Vec<((u32, i64), usize)> =
        incoming.iter().enumerate().map(|(i, o)| ((o.lap, bin(o.x, track_length, delta_s)), i)).collect();
    keyed.sort_by_key(|&(k, i)| (k, i));
    let mut out: Vec<Observation> = Vec::new();
    let mut last_key = None;
    for (k, i) in keyed {
        let o = incoming[i];
        if last_key == Some(k) {
            let cur = out.last_mut().unwrap();
            if o.t >= cur.t {
                *cur = o;
            }
        } else {
            out.push(o);
            last_key = Some(k);
        }
    }
    out
}

pub fn range_filter(obs: &[Observation], y_min: f64, y_max: f64) -> Vec<Observation> {
    obs.iter().copied().filter(|o| o.y >= y_min && o.y <= y_max).collect()
}

/// Drops points outside mean +/- 1.96 std, once the train set exceeds two
/// thirds of the cap.
pub fn confidence_filter(obs: &[Observation], model: &SgpModel, n_train: usize, n_target: usize) -> Vec<Observation> {
    if 3 * n_train <= 2 * n_target {
        return obs.to_vec();
    }
    obs.iter()
        .copied()
        .filter(|o| {
            let p = model.predict(o.x);
            let half = 1.96 * p.std();
            o.y >= p.mean - half && o.y <= p.mean + half
        })
        .collect()
}

/// Keeps candidates whose predictive distance exceeds the train-set average.
pub fn admit_informative(filtered: &[Observation], model: &SgpModel, train: &[Observation]) -> Vec<Observation> {
    if train.is_empty() {
        return filtered.to_vec();
    }
    let avg = train.iter().map(|o| model.predictive_distance(o.x)).sum::<f64>() / train.len() as f64;
    filtered.iter().copied().filter(|o| model.predictive_distance(o.x) > avg).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub kept: Vec<Observation>,
    pub assignment: Vec<usize>,
    pub distance: Vec<f64>,
    pub cluster_mean: Vec<f64>,
    /// Indices into `merged` removed by the below-mean phase.
    pub below_mean_dropped: Vec<usize>,
    /// Indices into `merged` removed by the proportional quota.
    pub quota_dropped: Vec<usize>,
}

/// K-means pruning seeded by the inducing inputs. Returns `merged` unchanged
/// when it is below the cap. Output keeps the input order.
pub fn kmeans_prune_report(merged: &[Observation], model: &SgpModel, cfg: &SelectionConfig) -> PruneReport {
    let n = merged.len();
    let distance: Vec<f64> = merged.iter().map(|o| model.predictive_distance(o.x)).collect();
    if n < cfg.n_target {
        return PruneReport {
            kept: merged.to_vec(),
            assignment: Vec::new(),
            distance,
            cluster_mean: Vec::new(),
            below_mean_dropped: Vec::new(),
            quota_dropped: Vec::new(),
        };
    }
    let xs: Vec<f64> = merged.iter().map(|o| o.x).collect();
    let (centroids, assignment) = cluster::lloyd(&xs, model.inducing(), cfg.lloyd_iters, cfg.lloyd_tol);
    let k = centroids.len();
    let mut sum = vec![0.0; k];
    let mut size = vec![0usize; k];
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for i in 0..n {
        let c = assignment[i];
        sum[c] += distance[i];
        size[c] += 1;
        lo[c] = lo[c].min(distance[i]);
        hi[c] = hi[c].max(distance[i]);
    }
    // Clamping keeps exact ties from being split by summation round-off.
    let cluster_mean: Vec<f64> =
        (0..k).map(|c| if size[c] > 0 { (sum[c] / size[c] as f64).clamp(lo[c], hi[c]) } else { f64::NAN }).collect();

    let mut alive = vec![true; n];
    let mut below_mean_dropped = Vec::new();
    for i in 0..n {
        if distance[i] < cluster_mean[assignment[i]] {
            alive[i] = false;
            below_mean_dropped.push(i);
        }
    }
    let mut quota_dropped = Vec::new();
    if alive.iter().filter(|a| **a).count() > cfg.n_target {
        for c in 0..k {
            if size[c] == 0 {
                continue;
            }
            let quota = cfg.n_target * size[c] / n;
            let mut members: Vec<usize> = (0..n).filter(|&i| alive[i] && assignment[i] == c).collect();
            members.sort_by(|&a, &b| distance[b].total_cmp(&distance[a]).then(a.cmp(&b)));
            for &i in members.iter().skip(quota) {
                alive[i] = false;
                quota_dropped.push(i);
            }
        }
        quota_dropped.sort_unstable();
    }
    let kept = (0..n).filter(|&i| alive[i]).map(|i| merged[i]).collect();
    PruneReport { kept, assignment, distance, cluster_mean, below_mean_dropped, quota_dropped }
}

pub fn kmeans_prune(merged: &[Observation], model: &SgpModel, cfg: &SelectionConfig) -> Vec<Observation> {
    kmeans_prune_report(merged, model, cfg).kept
}

/// One curation cycle. Without a model the filters that need one pass
/// through and the cap keeps the most recent observations.
pub fn select(train: &[Observation], incoming: &[Observation], model: Option<&SgpModel>, cfg: &SelectionConfig) -> Vec<Observation> {
    if incoming.is_empty() {
        return train.to_vec();
    }
    let binned = spatial_time_filter(incoming, cfg.track_length, cfg.delta_s);
    let ranged = range_filter(&binned, cfg.y_min, cfg.y_max);
    let admitted = match model {
        Some(m) => {
            let conf = confidence_filter(&ranged, m, train.len(), cfg.n_target);
            admit_informative(&conf, m, train)
        }
        None => ranged,
    };
    let mut merged = train.to_vec();
    merged.extend(admitted);
    match model {
        Some(m) => kmeans_prune(&merged, m, cfg),
        None => {
            if merged.len() > cfg.n_target {
                let mut idx: Vec<usize> = (0..merged.len()).collect();
                idx.sort_by(|&a, &b| merged[b].t.total_cmp(&merged[a].t).then(b.cmp(&a)));
                idx.truncate(cfg.n_target);
                idx.sort_unstable();
                idx.into_iter().map(|i| merged[i]).collect()
            } else {
                merged
            }
        }
    }
}

/// Curated training set with its cap and filter settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationBuffer {
    pub config: SelectionConfig,
    pub train: Vec<Observation>,
}

impl ObservationBuffer {
    pub fn new(config: SelectionConfig) -> Self {
        ObservationBuffer { config, train: Vec::new() }
    }

    pub fn select(&mut self, incoming: &[Observation], model: Option<&SgpModel>) {
        self.train = select(&self.train, incoming, model, &self.config);
    }

    pub fn xs(&self) -> Vec<f64> {
        self.train.iter().map(|o| o.x).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.train.iter().map(|o| o.y).collect()
    }
}
