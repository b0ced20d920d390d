//! Experiment runner: loads a config, validates it, runs one experiment on a worker pool and
//! writes a CSV table plus a JSON manifest.
//!
//! Exit codes: 0 when every gate check passes, 2 when the run finished but a check failed,
//! 1 on any error, including an invalid config.

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod outcome;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::Parser;

pub use config::{load, validate, ExperimentConfig};
pub use experiments::Experiment;
pub use manifest::Manifest;
pub use outcome::{Check, Outcome, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_GATE: i32 = 2;

/// Runs `exp` on a dedicated pool of `workers` threads.
pub fn execute(cfg: &ExperimentConfig, exp: Experiment, workers: usize) -> anyhow::Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    pool.install(|| experiments::dispatch(cfg, exp))
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: Outcome,
    pub csv: String,
    pub manifest: Manifest,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.outcome.passed() {
            EXIT_OK
        } else {
            EXIT_GATE
        }
    }
}

/// Executes `exp` and writes `<out_dir>/<csv>` and `<out_dir>/<manifest>`.
pub fn run(cfg: &ExperimentConfig, exp: Experiment, workers: usize, out_dir: &Path) -> anyhow::Result<RunReport> {
    let start = Instant::now();
    let outcome = execute(cfg, exp, workers)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let csv = outcome.table.to_csv()?;
    let csv_name = cfg.output.csv.clone().unwrap_or_else(|| format!("{exp}.csv"));
    let manifest_name = cfg.output.manifest.clone().unwrap_or_else(|| format!("{exp}.json"));
    let manifest = Manifest {
        schema: manifest::SCHEMA,
        experiment: exp.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        git_describe: manifest::git_describe(),
        seed: cfg.seed,
        workers,
        wall_time_s,
        config_hash: manifest::config_hash(cfg),
        result_hash: manifest::sha256_hex(csv.as_bytes()),
        csv: csv_name.clone(),
        passed: outcome.passed(),
        checks: outcome.checks.clone(),
        summary: outcome.summary.clone(),
        config: cfg.clone(),
    };
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let csv_path = out_dir.join(&csv_name);
    let manifest_path = out_dir.join(&manifest_name);
    std::fs::write(&csv_path, &csv).with_context(|| format!("writing {}", csv_path.display()))?;
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&manifest_path, json + "\n").with_context(|| format!("writing {}", manifest_path.display()))?;
    Ok(RunReport { outcome, csv, manifest, csv_path, manifest_path })
}

#[derive(Debug, Parser)]
#[command(name = "trigbound", version, about = "Run one trigbound experiment and record its results")]
struct Args {
    /// TOML config, or a JSON manifest whose embedded config is rerun.
    #[arg(long)]
    config: PathBuf,
    /// Experiment name; defaults to the one named in the config or manifest.
    #[arg(long)]
    experiment: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; defaults to the config's `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Parses `args` (including the program name), runs, and returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli_run(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn cli_run(args: Args) -> anyhow::Result<i32> {
    let loaded = load(&args.config)?;
    let mut cfg = loaded.config;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let violations = validate(&cfg);
    if !violations.is_empty() {
        eprintln!("invalid config {}:", args.config.display());
        for v in &violations {
            eprintln!("  {v}");
        }
        return Ok(EXIT_ERROR);
    }
    let name = args
        .experiment
        .or(loaded.experiment)
        .context("no experiment given; pass --experiment or set `experiment` in the config")?;
    let exp: Experiment = name.parse()?;
    let workers = args.workers.unwrap_or_else(default_workers);
    let out_dir = args.out.unwrap_or_else(|| cfg.output.dir.clone());
    let report = run(&cfg, exp, workers, &out_dir)?;
    for c in &report.outcome.checks {
        println!("{c}");
    }
    println!("csv: {}", report.csv_path.display());
    println!("manifest: {}", report.manifest_path.display());
    if report.exit_code() == EXIT_GATE {
        eprintln!("{exp}: {} gate check(s) failed", report.outcome.failed_checks().count());
    }
    Ok(report.exit_code())
}
