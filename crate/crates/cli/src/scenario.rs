//! Scenario files: TOML with every section optional except `track`.

use std::path::{Path, PathBuf};

use fsdp::bench::SyntheticConfig;
use fsdp::planner::PlannerConfig;
use fsdp::sim::EpisodeConfig;
use fsdp::track::Raceline;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Inducing-point counts for the timing table.
    pub m: Vec<usize>,
    /// Training points for the timing table.
    pub n: usize,
    pub iters: usize,
    /// Prediction grid size.
    pub points: usize,
    /// Synthetic seeds for the selection comparison.
    pub selection_seeds: u64,
    /// Inducing points of the curated model.
    pub selection_m: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { m: vec![10, 20, 40, 80], n: 400, iters: 200, points: 200, selection_seeds: 10, selection_m: 40 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub track: PathBuf,
    #[serde(default = "default_episodes")]
    pub episodes: u64,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Speed scalers for `sweep`.
    #[serde(default)]
    pub smax: Vec<f64>,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
}

fn default_episodes() -> u64 {
    1
}

/// A validated scenario with its track loaded and paths resolved.
pub struct Scenario {
    pub file: ScenarioFile,
    pub track: Raceline,
    #[allow(dead_code)]
    pub track_path: PathBuf,
    pub out_dir: Option<PathBuf>,
}

/// Error positioned in the scenario text.
#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: usize,
    pub column: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.column {
            Some(c) => write!(f, "{}:{}:{}: {}", self.path.display(), self.line, c, self.message),
            None => write!(f, "{}:{}: {}", self.path.display(), self.line, self.message),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(key: &str) -> String {
    key.split('.').map(|p| p.trim().trim_matches('"')).collect::<Vec<_>>().join(".")
}

/// Line of the key with dotted path `key`, falling back to its longest
/// present ancestor, then to line 1.
pub fn locate(text: &str, key: &str) -> usize {
    let mut table = String::new();
    let mut found: Vec<(String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.starts_with('[') {
            table = unquote(line.trim_start_matches('[').trim_end_matches(']'));
            found.push((table.clone(), i + 1));
        } else if let Some(eq) = line.find('=') {
            let k = unquote(&line[..eq]);
            let full = if table.is_empty() { k } else { format!("{table}.{k}") };
            found.push((full, i + 1));
        }
    }
    let mut probe = key.to_string();
    loop {
        if let Some((_, l)) = found.iter().find(|(k, _)| *k == probe) {
            return *l;
        }
        match probe.rfind('.') {
            Some(i) => probe.truncate(i),
            None => return 1,
        }
    }
}

/// First whitespace-delimited token of a validation message, taken as the
/// dotted field path.
fn field_of(msg: &str) -> &str {
    msg.split_whitespace().next().unwrap_or("")
}

pub fn load(path: &Path) -> Result<Scenario, ConfigError> {
    let err = |line: usize, column: Option<usize>, message: String| ConfigError { path: path.to_path_buf(), line, column, message };
    let text = std::fs::read_to_string(path).map_err(|e| err(1, None, format!("cannot read scenario: {e}")))?;
    let file: ScenarioFile = toml::from_str(&text).map_err(|e| {
        let (line, col) = e.span().map_or((1, 1), |s| line_col(&text, s.start));
        err(line, Some(col), e.message().trim().to_string())
    })?;
    let at = |key: &str, msg: String| err(locate(&text, key), None, msg);

    if let Err(e) = file.episode.validate() {
        let msg = e.to_string();
        let detail = msg.trim_start_matches("invalid episode configuration: ");
        return Err(at(&format!("episode.{}", field_of(detail)), format!("episode.{detail}")));
    }
    if let Err(m) = file.planner.validate() {
        return Err(at(&format!("planner.{}", field_of(&m)), format!("planner.{m}")));
    }
    if file.episodes == 0 {
        return Err(at("episodes", "episodes must be positive".into()));
    }
    if let Some(v) = file.smax.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(at("smax", format!("smax entry {v} outside [0, 1]")));
    }
    let b = &file.bench;
    if b.n < 2 || b.iters == 0 || b.points == 0 || b.selection_seeds == 0 || b.selection_m == 0 {
        return Err(at("bench", "bench n must be at least 2 and iters, points, selection_seeds, selection_m positive".into()));
    }
    if let Some(m) = b.m.iter().find(|m| **m == 0 || **m > b.n) {
        return Err(at("bench.m", format!("bench.m entry {m} outside [1, n = {}]", b.n)));
    }
    let s = &file.synthetic;
    if !(s.rate_hz > 0.0) || !(0.0..=1.0).contains(&s.speed_scaler) || !(0.0..1.0).contains(&s.occlusion) || !(0.0..=1.0).contains(&s.outlier_prob) {
        return Err(at("synthetic", "synthetic rate_hz must be positive, speed_scaler and outlier_prob in [0, 1], occlusion in [0, 1)".into()));
    }

    let base = path.parent().unwrap_or(Path::new("."));
    let track_path = base.join(&file.track);
    if !track_path.is_file() {
        return Err(at("track", format!("track file {} does not exist", track_path.display())));
    }
    let track = Raceline::load(&track_path).map_err(|e| at("track", format!("track {}: {e}", track_path.display())))?;
    if !track.is_closed() {
        return Err(at("track", format!("track {} is not closed", track_path.display())));
    }
    let out_dir = file.out_dir.as_ref().map(|d| base.join(d));
    Ok(Scenario { file, track, track_path, out_dir })
}
