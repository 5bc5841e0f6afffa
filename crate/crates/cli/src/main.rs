mod scenario;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fsdp::bench::{bench_points, compare_selection, synthetic_laps, timing_bench, true_lateral, SyntheticConfig};
use fsdp::sim::{compute_success_rate, run_episode, EpisodeConfig, EpisodeResult, LogRecord, Outcome};
use rayon::prelude::*;

use scenario::Scenario;

#[derive(Parser)]
#[command(name = "fsdp", version, about = "Overtaking planner simulation and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; overrides FSDP_OUT_DIR and the scenario.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of episodes (run, sweep) or selection seeds (predict-bench).
    #[arg(long)]
    seeds: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded episodes and write the log, metrics and aggregate tables.
    Run {
        #[command(flatten)]
        common: Common,
        /// Opponent speed scaler for every episode.
        #[arg(long)]
        smax: Option<f64>,
    },
    /// Success rate per opponent speed scaler.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated speed scalers; defaults to the scenario list.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        smax: Option<Vec<f64>>,
    },
    /// Dense vs sparse GP timing and curated vs latest-lap accuracy.
    PredictBench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated inducing-point counts.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        m: Option<Vec<usize>>,
    },
    /// Parse and validate a scenario without running it.
    ValidateConfig {
        #[arg(long)]
        scenario: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

fn io(e: std::io::Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    scenario::load(path).map_err(|e| Failure::Config(e.to_string()))
}

fn out_dir(common: &Common, sc: &Scenario) -> Result<PathBuf, Failure> {
    let dir = common
        .out
        .clone()
        .or_else(|| std::env::var_os("FSDP_OUT_DIR").map(PathBuf::from))
        .or_else(|| sc.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(io)?;
    Ok(dir)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.6}"))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn episodes(sc: &Scenario, n: u64, smax: f64, keep_logs: bool) -> Result<Vec<(EpisodeResult, Vec<LogRecord>)>, Failure> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let cfg = EpisodeConfig { seed: sc.file.seed_base + i, speed_scaler: smax, ..sc.file.episode.clone() };
            let mut log = Vec::new();
            let r = run_episode(&cfg, &sc.track, &sc.file.planner, keep_logs.then_some(&mut log)).map_err(|e| Failure::Runtime(format!("episode seed {}: {e}", cfg.seed)))?;
            Ok((r, log))
        })
        .collect()
}

const METRICS_HEADER: &str = "seed,speed_scaler,outcome,path_length_m,duration_s,jerk_avg_mps3,steer_rate_avg_radps,bound_violation,sim_time_s,fits,max_train_size\n";

fn metrics_csv(results: &[EpisodeResult]) -> String {
    let mut s = String::from(METRICS_HEADER);
    for r in results {
        let _ = writeln!(
            s,
            "{},{:.6},{},{},{},{},{},{},{:.6},{},{}",
            r.seed,
            r.speed_scaler,
            r.outcome.as_str(),
            opt(r.path_length),
            opt(r.duration),
            opt(r.jerk_avg),
            opt(r.steer_rate_avg),
            r.bound_violation,
            r.sim_time,
            r.fits,
            r.max_train_size
        );
    }
    s
}

fn aggregate_csv(results: &[EpisodeResult]) -> String {
    let count = |o: Outcome| results.iter().filter(|r| r.outcome == o).count();
    let field = |f: fn(&EpisodeResult) -> Option<f64>| mean(&results.iter().filter_map(f).collect::<Vec<_>>());
    let mut cycles: Vec<f64> = results.iter().flat_map(|r| r.cycle_ms.iter().copied()).collect();
    cycles.sort_by(f64::total_cmp);
    let mu = mean(&cycles);
    let sd = mu.map(|m| (cycles.iter().map(|c| (c - m).powi(2)).sum::<f64>() / cycles.len() as f64).sqrt());
    let p95 = (!cycles.is_empty()).then(|| cycles[((0.95 * cycles.len() as f64).ceil() as usize).clamp(1, cycles.len()) - 1]);
    format!(
        "episodes,overtakes,crashes,timeouts,success_rate,path_length_mean_m,duration_mean_s,jerk_avg_mean_mps3,steer_rate_avg_mean_radps,compute_mean_ms,compute_std_ms,compute_p95_ms\n{},{},{},{},{},{},{},{},{},{},{},{}\n",
        results.len(),
        count(Outcome::Overtake),
        count(Outcome::Crash),
        count(Outcome::Timeout),
        opt(compute_success_rate(results)),
        opt(field(|r| r.path_length)),
        opt(field(|r| r.duration)),
        opt(field(|r| r.jerk_avg)),
        opt(field(|r| r.steer_rate_avg)),
        opt(mu),
        opt(sd),
        opt(p95),
    )
}

fn cmd_run(common: Common, smax: Option<f64>) -> Result<(), Failure> {
    let sc = load(&common.scenario)?;
    if let Some(v) = smax.filter(|v| !(0.0..=1.0).contains(v)) {
        return Err(Failure::Config(format!("--smax {v} outside [0, 1]")));
    }
    let dir = out_dir(&common, &sc)?;
    let n = common.seeds.unwrap_or(sc.file.episodes);
    if n == 0 {
        return Err(Failure::Config("--seeds must be positive".into()));
    }
    let runs = episodes(&sc, n, smax.unwrap_or(sc.file.episode.speed_scaler), true)?;
    let mut log = String::new();
    for (r, records) in &runs {
        for rec in records {
            let mut v = serde_json::to_value(rec).map_err(|e| Failure::Runtime(e.to_string()))?;
            v.as_object_mut().unwrap().insert("seed".into(), r.seed.into());
            log.push_str(&v.to_string());
            log.push('\n');
        }
    }
    let results: Vec<EpisodeResult> = runs.into_iter().map(|(r, _)| r).collect();
    std::fs::write(dir.join("log.jsonl"), log).map_err(io)?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&results)).map_err(io)?;
    let agg = aggregate_csv(&results);
    std::fs::write(dir.join("aggregate.csv"), &agg).map_err(io)?;
    print!("{agg}");
    Ok(())
}

fn cmd_sweep(common: Common, smax: Option<Vec<f64>>) -> Result<(), Failure> {
    let sc = load(&common.scenario)?;
    let list = smax.unwrap_or_else(|| sc.file.smax.clone());
    if list.is_empty() {
        return Err(Failure::Config("empty speed-scaler list: pass --smax or set smax in the scenario".into()));
    }
    if let Some(v) = list.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Failure::Config(format!("--smax entry {v} outside [0, 1]")));
    }
    let dir = out_dir(&common, &sc)?;
    let n = common.seeds.unwrap_or(sc.file.episodes);
    if n == 0 {
        return Err(Failure::Config("--seeds must be positive".into()));
    }
    let mut table = String::from("speed_scaler,episodes,overtakes,crashes,timeouts,success_rate\n");
    for &v in &list {
        let results: Vec<EpisodeResult> = episodes(&sc, n, v, false)?.into_iter().map(|(r, _)| r).collect();
        let count = |o: Outcome| results.iter().filter(|r| r.outcome == o).count();
        let _ = writeln!(
            table,
            "{v:.6},{},{},{},{},{}",
            results.len(),
            count(Outcome::Overtake),
            count(Outcome::Crash),
            count(Outcome::Timeout),
            opt(compute_success_rate(&results))
        );
    }
    std::fs::write(dir.join("sweep.csv"), &table).map_err(io)?;
    print!("{table}");
    Ok(())
}

fn cmd_predict_bench(common: Common, m: Option<Vec<usize>>) -> Result<(), Failure> {
    let sc = load(&common.scenario)?;
    let b = &sc.file.bench;
    let syn = &sc.file.synthetic;
    if syn.laps < 3 {
        return Err(Failure::Config(format!("predict-bench needs at least 3 laps of opponent data, scenario has {}", syn.laps)));
    }
    let ms = m.unwrap_or_else(|| b.m.clone());
    if let Some(v) = ms.iter().find(|v| **v == 0 || **v > b.n) {
        return Err(Failure::Config(format!("--m entry {v} outside [1, n = {}]", b.n)));
    }
    let dir = out_dir(&common, &sc)?;
    let len = sc.track.total_length();
    let laps = synthetic_laps(&sc.track, syn);

    let mut obs = String::from("lap,t_s,s_m,d_m,v_mps\n");
    for lap in &laps {
        for (d, v) in lap.lateral.iter().zip(&lap.speed) {
            let _ = writeln!(obs, "{},{:.6},{:.6},{:.6},{:.6}", d.lap, d.t, d.x, d.y, v.y);
        }
    }
    std::fs::write(dir.join("observations.csv"), obs).map_err(io)?;

    let (x, y) = bench_points(&sc.track, &laps, b.n);
    if x.len() < b.n {
        return Err(Failure::Config(format!("only {} usable observations for n = {}", x.len(), b.n)));
    }
    let amp = syn.amplitude;
    let rows = timing_bench(&x, &y, &|s| true_lateral(s, amp, len), len, &ms, b.iters, b.points, syn.seed).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut timing = String::from("model,m,n,fit_ms,predict_ms,rmse_m\n");
    for r in &rows {
        let _ = writeln!(timing, "{},{},{},{:.3},{:.4},{:.6}", r.model, r.m.map_or(String::new(), |m| m.to_string()), r.n, r.fit_ms, r.predict_ms, r.rmse);
    }
    std::fs::write(dir.join("bench_timing.csv"), &timing).map_err(io)?;
    print!("{timing}");

    let seeds = common.seeds.unwrap_or(b.selection_seeds);
    let cmp: Vec<_> = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let cfg = SyntheticConfig { seed: syn.seed + i, ..syn.clone() };
            compare_selection(&sc.track, &cfg, b.selection_m, b.iters, b.points).map(|c| (cfg.seed, c))
        })
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut sel = String::from("seed,curated_rmse_m,latest_rmse_m,ratio,curated_size,latest_size\n");
    for (s, c) in &cmp {
        let _ = writeln!(sel, "{s},{:.6},{:.6},{:.6},{},{}", c.curated_rmse, c.latest_rmse, c.ratio(), c.curated_size, c.latest_size);
    }
    let cur: f64 = cmp.iter().map(|(_, c)| c.curated_rmse).sum();
    let lat: f64 = cmp.iter().map(|(_, c)| c.latest_rmse).sum();
    let _ = writeln!(sel, "all,{:.6},{:.6},{:.6},,", cur / seeds as f64, lat / seeds as f64, cur / lat);
    std::fs::write(dir.join("bench_selection.csv"), &sel).map_err(io)?;
    print!("{sel}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run { common, smax } => cmd_run(common, smax),
        Command::Sweep { common, smax } => cmd_sweep(common, smax),
        Command::PredictBench { common, m } => cmd_predict_bench(common, m),
        Command::ValidateConfig { scenario } => load(&scenario).map(|_| println!("ok: {}", scenario.display())),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(m) | Failure::Runtime(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
