//! Command-line driver: single runs, batch benchmarks, guidance and filter
//! tuning, trajectory generation and statistics.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use intercept_core::bench::{
    aggregate, batch_scenarios, run_batch, table_to_csv, to_json, tune_filter, tune_guidance, FilterTuneSpec,
    GuidanceTuneSpec,
};
use intercept_core::simworld::{random_start, run_scenario, FeedMode, InterceptorState, Method, RunReport, Scenario};
use intercept_core::trajlab::{self, RandomSpec, Trajectory};
use intercept_core::Error;
use serde::Serialize;

use config::{default_axes, Config};

const SEED_ENV: &str = "INTERCEPT_LAB_SEED";

#[derive(Parser, Debug)]
#[command(name = "intercept-lab", version, about = "Interception guidance and estimation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one engagement and write its report.
    Run(RunArgs),
    /// Run methods × trajectories × random starts and write the aggregate table.
    Batch(BatchArgs),
    /// Grid-search guidance gains on a trajectory set.
    TuneGuidance(TuneGuidanceArgs),
    /// Tune filter noise parameters on recorded detection logs.
    TuneFilter(TuneFilterArgs),
    /// Generate a random or figure-eight trajectory file.
    GenTraj(GenTrajArgs),
    /// Print speed and acceleration statistics of trajectory files.
    TrajStats(TrajStatsArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Seed; falls back to the config, then to INTERCEPT_LAB_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,

    /// Guidance sees the true target state instead of the estimate.
    #[arg(long)]
    truth_feed: bool,

    /// Write full-precision numbers instead of 6 significant digits.
    #[arg(long)]
    raw: bool,

    /// Record per-cycle guidance compute times.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML experiment config.
    config: PathBuf,

    /// One of pp, pn, lpn, gpn, gpn1, gpn2, epn, mpc; defaults to the config's method.
    #[arg(long)]
    method: Option<String>,

    /// Trajectory file, overriding the config.
    #[arg(long)]
    trajectory: Option<PathBuf>,

    /// Keep detections in the report for later filter tuning.
    #[arg(long)]
    record_detections: bool,

    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct BatchArgs {
    /// TOML experiment config.
    config: Option<PathBuf>,

    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',', default_value = "lpn,epn")]
    methods: Vec<String>,

    /// Glob of trajectory files.
    #[arg(long)]
    trajectories: String,

    /// Random starts per trajectory.
    #[arg(long, default_value_t = 5)]
    starts: usize,

    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,

    /// Skip writing per-run reports.
    #[arg(long)]
    no_runs: bool,

    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct TuneGuidanceArgs {
    /// TOML experiment config; its `tune_guidance` table overrides the default grid.
    config: Option<PathBuf>,

    #[arg(long, default_value = "epn")]
    method: String,

    #[arg(long)]
    trajectories: String,

    #[arg(long, default_value_t = 5)]
    starts: usize,

    /// Points per axis of the default grid.
    #[arg(long, default_value_t = 20)]
    points: usize,

    #[arg(long)]
    jobs: Option<usize>,

    /// Output directory for the best parameters and the grid audit table.
    #[arg(long)]
    out: PathBuf,

    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct TuneFilterArgs {
    /// TOML experiment config; its `tune_filter` table sets the initial point.
    config: Option<PathBuf>,

    /// Glob of run reports recorded with --record-detections.
    #[arg(long)]
    logs: String,

    /// Iteration budget, overriding the config.
    #[arg(long)]
    max_iter: Option<usize>,

    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long)]
    raw: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TrajKind {
    Random,
    Lemniscate,
}

#[derive(Args, Debug)]
struct GenTrajArgs {
    #[arg(long, value_enum)]
    kind: TrajKind,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long, default_value_t = 100.0, allow_negative_numbers = true)]
    duration: f64,

    #[arg(long, default_value_t = 0.02, allow_negative_numbers = true)]
    dt: f64,

    /// Figure-eight extent across (m).
    #[arg(long, default_value_t = 16.0, allow_negative_numbers = true)]
    width: f64,

    /// Figure-eight extent along (m).
    #[arg(long, default_value_t = 40.0, allow_negative_numbers = true)]
    length: f64,

    /// Figure-eight speed (m/s).
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    speed: f64,

    /// Random trajectory mean speed (m/s).
    #[arg(long, allow_negative_numbers = true)]
    mean_speed: Option<f64>,

    #[arg(long, allow_negative_numbers = true)]
    max_speed: Option<f64>,

    #[arg(long, allow_negative_numbers = true)]
    max_accel: Option<f64>,

    /// Arena extents x,y,z (m).
    #[arg(long, value_delimiter = ',', num_args = 3, allow_negative_numbers = true)]
    arena: Option<Vec<f64>>,

    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrajStatsArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn simulation(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    /// Configuration and input problems are usage errors; numerical
    /// failures are simulation errors.
    fn from_core(e: Error) -> Self {
        match e {
            Error::Parameter(_) | Error::Scenario(_) | Error::Parse { .. } | Error::Generation(_) | Error::Io(_) => {
                Self::usage(e.to_string())
            }
            _ => Self::simulation(e.to_string()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Batch(a) => cmd_batch(a),
        Command::TuneGuidance(a) => cmd_tune_guidance(a),
        Command::TuneFilter(a) => cmd_tune_filter(a),
        Command::GenTraj(a) => cmd_gen_traj(a),
        Command::TrajStats(a) => cmd_traj_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn resolve_seed(flag: Option<u64>, cfg: &Config) -> CliResult<u64> {
    if let Some(s) = flag.or(cfg.seed) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Failure::usage(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))?;
            }
            std::fs::write(p, text).map_err(|e| Failure::usage(format!("cannot write {}: {e}", p.display())))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn json<T: Serialize>(value: &T, raw: bool) -> CliResult<String> {
    to_json(value, raw).map_err(|e| Failure::internal(e.to_string()))
}

fn load_trajectory(path: &Path) -> CliResult<Trajectory> {
    if !path.exists() {
        return Err(Failure::usage(format!("trajectory file not found: {}", path.display())));
    }
    trajlab::load(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn trajectory_set(pattern: &str) -> CliResult<Vec<(String, Arc<Trajectory>)>> {
    let paths = glob::glob(pattern).map_err(|e| Failure::usage(format!("invalid glob '{pattern}': {e}")))?;
    let mut files: Vec<PathBuf> = paths.filter_map(|p| p.ok()).filter(|p| p.is_file()).collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::usage(format!("no trajectory files match '{pattern}'")));
    }
    files
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((name, Arc::new(load_trajectory(p)?)))
        })
        .collect()
}

fn apply_common(cfg: &mut Config, common: &Common) {
    if common.truth_feed {
        cfg.run.feed = FeedMode::Truth;
    }
    cfg.run.record_timing |= common.timing;
}

fn check_starts(starts: usize) -> CliResult<()> {
    if starts == 0 {
        return Err(Failure::usage("--starts must be at least 1"));
    }
    Ok(())
}

fn jobs(flag: Option<usize>) -> CliResult<usize> {
    match flag {
        Some(0) => Err(Failure::usage("--jobs must be at least 1")),
        Some(j) => Ok(j),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn summary(r: &RunReport) -> String {
    let first = r.events.first().map_or_else(|| "none".to_string(), |e| format!("{:.2} s at {:.3} m", e.time, e.accuracy));
    format!("{} on {}: {} interceptions, first {}", r.scenario.method, r.scenario.trajectory, r.events.len(), first)
}

fn cmd_run(a: RunArgs) -> CliResult<()> {
    let mut cfg = Config::load(&a.config)?;
    apply_common(&mut cfg, &a.common);
    cfg.run.record_detections |= a.record_detections;
    let seed = resolve_seed(a.common.seed, &cfg)?;
    let name = a.method.clone().or_else(|| cfg.method.clone()).unwrap_or_else(|| "epn".into());
    let method = cfg.method(&name)?;
    let path = a
        .trajectory
        .clone()
        .or_else(|| cfg.trajectory.clone())
        .ok_or_else(|| Failure::usage("no trajectory given (config `trajectory` or --trajectory)"))?;
    let tr = Arc::new(load_trajectory(&path)?);
    let start = match cfg.start() {
        Some((p, heading)) => InterceptorState::at_rest(p, heading),
        None => random_start(&tr, seed),
    };
    let traj_name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    let mut sc = Scenario::with_config(traj_name, tr, start, method, &cfg.run);
    sc.label = name;
    sc.seed = seed;
    sc.validate().map_err(Failure::from_core)?;
    let report = run_scenario(&sc).map_err(|e| Failure::simulation(e.to_string()))?;
    eprintln!("{}", summary(&report));
    write_output(a.out.as_deref(), &json(&report, a.common.raw)?)
}

fn cmd_batch(a: BatchArgs) -> CliResult<()> {
    check_starts(a.starts)?;
    let jobs = jobs(a.jobs)?;
    let mut cfg = Config::load_opt(a.config.as_deref())?;
    apply_common(&mut cfg, &a.common);
    let seed = resolve_seed(a.common.seed, &cfg)?;
    let methods = a.methods.iter().map(|m| Ok((m.clone(), cfg.method(m)?))).collect::<CliResult<Vec<(String, Method)>>>()?;
    let trajectories = trajectory_set(&a.trajectories)?;
    let scenarios = batch_scenarios(&cfg.run, &methods, &trajectories, a.starts, seed);
    for sc in &scenarios {
        sc.validate().map_err(Failure::from_core)?;
    }
    log::info!("running {} scenarios on {jobs} workers", scenarios.len());
    let reports = run_batch(&scenarios, jobs).map_err(|e| Failure::simulation(e.to_string()))?;
    let table = aggregate(&reports);
    write_output(Some(&a.out.join("table.json")), &json(&table, a.common.raw)?)?;
    let csv = table_to_csv(&table, a.common.raw).map_err(|e| Failure::internal(e.to_string()))?;
    write_output(Some(&a.out.join("table.csv")), &csv)?;
    if !a.no_runs {
        let per_traj = a.starts;
        for (i, r) in reports.iter().enumerate() {
            let file = format!("{}__{}__{}.json", r.scenario.method, r.scenario.trajectory, i % per_traj);
            write_output(Some(&a.out.join("runs").join(file)), &json(r, a.common.raw)?)?;
        }
    }
    print!("{csv}");
    Ok(())
}

fn cmd_tune_guidance(a: TuneGuidanceArgs) -> CliResult<()> {
    check_starts(a.starts)?;
    let jobs = jobs(a.jobs)?;
    let mut cfg = Config::load_opt(a.config.as_deref())?;
    apply_common(&mut cfg, &a.common);
    let seed = resolve_seed(a.common.seed, &cfg)?;
    let base = match cfg.method(&a.method)? {
        Method::Guidance(g) => g,
        Method::Mpc(_) => return Err(Failure::usage("tune-guidance applies to guidance laws, not mpc")),
    };
    let axes = match &cfg.tune_guidance {
        Some(grid) if !grid.axes.is_empty() => grid.axes.iter().map(|ax| ax.to_axis()).collect::<CliResult<Vec<_>>>()?,
        _ => {
            if a.points == 0 {
                return Err(Failure::usage("--points must be at least 1"));
            }
            default_axes(&base, a.points)
        }
    };
    let trajectories = trajectory_set(&a.trajectories)?;
    let scenarios = batch_scenarios(&cfg.run, &[(a.method.clone(), Method::Guidance(base))], &trajectories, a.starts, seed);
    for sc in &scenarios {
        sc.validate().map_err(Failure::from_core)?;
    }
    let spec = GuidanceTuneSpec { base, axes };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Failure::internal(e.to_string()))?;
    let tuning = pool.install(|| tune_guidance(&spec, &scenarios)).map_err(Failure::from_core)?;
    write_output(Some(&a.out.join("best.json")), &json(&tuning.best, a.common.raw)?)?;
    write_output(Some(&a.out.join("grid.csv")), &tuning.grid.to_csv())?;
    let best = tuning.grid.best_point();
    println!(
        "best {}: {} -> {:.1}% trajectories intercepted, {:.3} interceptions per trajectory",
        a.method,
        tuning.grid.names.iter().zip(&best.values).map(|(n, v)| format!("{n}={v:.6}")).collect::<Vec<_>>().join(" "),
        best.primary,
        best.secondary
    );
    Ok(())
}

fn cmd_tune_filter(a: TuneFilterArgs) -> CliResult<()> {
    let cfg = Config::load_opt(a.config.as_deref())?;
    let mut spec: FilterTuneSpec = cfg.tune_filter.clone().unwrap_or_else(|| FilterTuneSpec {
        filter: cfg.run.filter,
        sensor: cfg.run.sensor,
        ..FilterTuneSpec::default()
    });
    if let Some(n) = a.max_iter {
        spec.settings.max_iter = n;
    }
    let paths = glob::glob(&a.logs).map_err(|e| Failure::usage(format!("invalid glob '{}': {e}", a.logs)))?;
    let mut files: Vec<PathBuf> = paths.filter_map(|p| p.ok()).filter(|p| p.is_file()).collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::usage(format!("no report files match '{}'", a.logs)));
    }
    let mut logs = Vec::new();
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| Failure::usage(format!("cannot read {}: {e}", f.display())))?;
        let report: RunReport =
            serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{} is not a run report: {e}", f.display())))?;
        logs.push(report.detections);
    }
    if logs.iter().all(Vec::is_empty) {
        return Err(Failure::usage("reports contain no detections; record them with `run --record-detections`"));
    }
    let tuning = tune_filter(&spec, &logs).map_err(|e| Failure::simulation(e.to_string()))?;
    eprintln!("e_x {:.6} -> {:.6} after {} iterations", tuning.initial_objective, tuning.objective, tuning.iterations);
    write_output(a.out.as_deref(), &json(&tuning, a.raw)?)
}

fn cmd_gen_traj(a: GenTrajArgs) -> CliResult<()> {
    let positive = [("duration", a.duration), ("dt", a.dt)];
    if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Failure::usage(format!("--{name} must be positive, got {v}")));
    }
    let tr = match a.kind {
        TrajKind::Lemniscate => {
            let dims = [("width", a.width), ("length", a.length), ("speed", a.speed)];
            if let Some((name, v)) = dims.iter().find(|(_, v)| !(*v > 0.0)) {
                return Err(Failure::usage(format!("--{name} must be positive, got {v}")));
            }
            trajlab::gen_lemniscate(a.width, a.length, a.speed, a.duration, a.dt)
        }
        TrajKind::Random => {
            let mut spec = RandomSpec { duration: a.duration, dt: a.dt, ..RandomSpec::default() };
            spec.mean_speed = a.mean_speed.unwrap_or(spec.mean_speed);
            spec.max_speed = a.max_speed.unwrap_or(spec.max_speed);
            spec.max_accel = a.max_accel.unwrap_or(spec.max_accel);
            if let Some(e) = &a.arena {
                spec.arena = intercept_core::numcore::Vec3::new(e[0], e[1], e[2]);
            }
            if spec.mean_speed < 0.0 || spec.max_speed < 0.0 || spec.max_accel <= 0.0 {
                return Err(Failure::usage("speeds must be nonnegative and --max-accel positive"));
            }
            let seed = resolve_seed(a.seed, &Config::default())?;
            trajlab::gen_random(seed, &spec)
        }
    }
    .map_err(Failure::from_core)?;
    trajlab::save(&a.out, &tr).map_err(Failure::from_core)?;
    println!("{}", json(&trajlab::stats(&tr), false)?);
    Ok(())
}

#[derive(Serialize)]
struct FileStats {
    file: String,
    #[serde(flatten)]
    stats: trajlab::TrajStats,
}

fn cmd_traj_stats(a: TrajStatsArgs) -> CliResult<()> {
    let all = a
        .files
        .iter()
        .map(|f| Ok(FileStats { file: f.display().to_string(), stats: trajlab::stats(&load_trajectory(f)?) }))
        .collect::<CliResult<Vec<_>>>()?;
    println!("{}", json(&all, false)?);
    Ok(())
}
