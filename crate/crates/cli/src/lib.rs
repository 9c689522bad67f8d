//! `fedpqos` command line: train learners, run constant benchmarks, sweep
//! everything on shared seeds, merge reports and inspect configurations.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime error,
//! 3 failed sweep check.

pub mod report;
pub mod sweep;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use fedpqos_core::agents::{operation_count, parameter_count};
use fedpqos_core::harness::run_into;
use fedpqos_core::{parse_config, AgentFamily, AgentParams, Error, ExperimentConfig, Preset, RunSummary, NUM_ACTIONS};

use crate::sweep::Row;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fedpqos", version, about = "Federated RL control of LiDAR compression over a simulated uplink")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override one key, e.g. `agents.family=ddqn` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Base profile: `desk` (100 x 600 steps) or `paper` (1000 x 2400).
    #[arg(long, global = true)]
    pub preset: Option<String>,

    /// Parallel runs for `benchmark --action all` and `sweep`.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the configured learner family.
    Train,
    /// Run one constant configuration, or all nine.
    Benchmark {
        /// Action index 0..8 or `all`.
        #[arg(long, default_value = "all", value_parser = parse_action)]
        action: ActionArg,
    },
    /// Every learner and every constant on shared seeds, with the comparison
    /// table and plot data.
    Sweep {
        /// Number of consecutive seeds starting at the master seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Evaluate the ordering checks and exit with 3 if any fails.
        #[arg(long)]
        check: bool,
    },
    /// Merge the summaries of completed runs.
    Report {
        /// Run directories, or directories containing them.
        dirs: Vec<PathBuf>,
    },
    /// Print the resolved configuration, the action table and model sizes.
    Inspect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionArg {
    One(usize),
    All,
}

fn parse_action(s: &str) -> Result<ActionArg, String> {
    if s == "all" {
        return Ok(ActionArg::All);
    }
    match s.parse::<usize>() {
        Ok(a) if a < NUM_ACTIONS => Ok(ActionArg::One(a)),
        _ => Err(format!("expected 0..{} or `all`", NUM_ACTIONS - 1)),
    }
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }

    fn runtime(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } | Error::Usage(_) | Error::Schema { .. } => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Preset, then file, then `--set` overrides, then `--seed` and `--out`.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let preset = cli
        .preset
        .as_deref()
        .map(str::parse::<Preset>)
        .transpose()
        .map_err(CliError::config)?;
    let mut c = parse_config(cli.config.as_deref(), preset, &cli.set).map_err(CliError::config)?;
    if let Some(seed) = cli.seed {
        c.experiment.seed = seed;
    }
    if let Some(out) = &cli.out {
        c.output.dir = out.clone();
    }
    Ok(c)
}

pub fn run(cli: &Cli) -> Result<i32, CliError> {
    let config = resolve_config(cli)?;
    let workers = match cli.workers {
        Some(0) => return Err(CliError::config("--workers must be at least 1")),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        })?;
    pool.install(|| match &cli.command {
        Command::Train => cmd_train(&config),
        Command::Benchmark { action } => cmd_benchmark(&config, *action),
        Command::Sweep { seeds, check } => cmd_sweep(&config, *seeds, *check),
        Command::Report { dirs } => cmd_report(&config, dirs),
        Command::Inspect => {
            print!("{}", inspect(&config).map_err(CliError::runtime)?);
            Ok(EXIT_OK)
        }
    })
}

fn summary_line(s: &RunSummary) -> String {
    format!(
        "{:<10} final_reward {:.4}  regret {:.2}  app_delay {:.2} ms  mAP {:.3}  step {:.2} us",
        s.agent, s.final_reward, s.regret, s.mean_app_delay_ms, s.mean_map, s.step_time_us
    )
}

fn cmd_train(config: &ExperimentConfig) -> Result<i32, CliError> {
    let dir = config.output.dir.join(config.agents.family.key());
    let s = run_into(config, &dir, None, None).map_err(CliError::runtime)?;
    println!("{}", summary_line(&s));
    println!("wrote {}", dir.display());
    Ok(EXIT_OK)
}

fn cmd_benchmark(config: &ExperimentConfig, action: ActionArg) -> Result<i32, CliError> {
    let actions: Vec<usize> = match action {
        ActionArg::One(a) => vec![a],
        ActionArg::All => (0..NUM_ACTIONS).collect(),
    };
    let dir = &config.output.dir;
    let runs = sweep::run_benchmarks(config, &actions, Some(dir)).map_err(CliError::runtime)?;
    for s in &runs {
        println!("{}", summary_line(s));
    }
    println!("wrote {} run(s) under {}", runs.len(), dir.display());
    Ok(EXIT_OK)
}

/// Fixed-width text rendering of comparison rows.
pub fn format_rows(rows: &[Row]) -> String {
    let mut out = format!(
        "{:<11} {:>5} {:>17} {:>19} {:>15} {:>7} {:>10} {:>8} {:>12}\n",
        "agent", "runs", "final reward", "regret", "APP delay ms", "mAP", "params", "ops", "step us"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<11} {:>5} {:>8.4} ± {:<6.4} {:>9.2} ± {:<7.2} {:>7.2} ± {:<5.2} {:>7.3} {:>10} {:>8} {:>12.2}",
            r.agent,
            r.runs,
            r.final_reward_mean,
            r.final_reward_std,
            r.regret_mean,
            r.regret_std,
            r.app_delay_ms_mean,
            r.app_delay_ms_std,
            r.map_mean,
            r.parameters,
            r.operations,
            r.step_time_us_mean
        );
    }
    out
}

fn cmd_sweep(config: &ExperimentConfig, n_seeds: u64, check: bool) -> Result<i32, CliError> {
    if n_seeds == 0 {
        return Err(CliError::config("--seeds must be at least 1"));
    }
    let seeds: Vec<u64> = (0..n_seeds).map(|k| config.experiment.seed + k).collect();
    let dir = &config.output.dir;
    let result = sweep::run_sweep(config, &seeds, Some(dir)).map_err(CliError::runtime)?;
    sweep::write_sweep_outputs(&result, dir).map_err(CliError::runtime)?;
    print!("{}", format_rows(&result.rows()));
    println!("wrote {}", dir.display());
    if !check {
        return Ok(EXIT_OK);
    }
    let checks = sweep::check_sweep(&result);
    for c in &checks {
        println!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(if checks.iter().all(|c| c.passed) { EXIT_OK } else { EXIT_CHECK })
}

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";

fn cmd_report(config: &ExperimentConfig, dirs: &[PathBuf]) -> Result<i32, CliError> {
    if dirs.is_empty() {
        return Err(CliError::config("report needs at least one run directory"));
    }
    let collected = report::collect_summaries(dirs);
    for w in &collected.warnings {
        eprintln!("warning: {w}");
    }
    if collected.summaries.is_empty() {
        return Err(CliError {
            code: EXIT_RUNTIME,
            message: "no readable run summaries".into(),
        });
    }
    let summaries: Vec<RunSummary> = collected.summaries.into_iter().map(|(_, s)| s).collect();
    let rows = report::report_rows(&summaries);
    let out = &config.output.dir;
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::runtime(Error::Io { path: out.clone(), source: e }))?;
    sweep::write_rows_csv(&rows, &out.join(REPORT_CSV), true).map_err(CliError::runtime)?;
    sweep::write_rows_json(&rows, &out.join(REPORT_JSON)).map_err(CliError::runtime)?;
    print!("{}", format_rows(&rows));
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}

/// Resolved configuration, digest, action table and model sizes as text.
pub fn inspect(config: &ExperimentConfig) -> fedpqos_core::Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "# digest {}", config.digest());
    out.push_str(&config.to_toml_string()?);
    let _ = writeln!(out, "\n# actions\nid,label,compression_ms,map");
    for c in config.load_table()?.configs() {
        let _ = writeln!(out, "{},{},{},{}", c.id, c.label(), c.compression_time_ms, c.map_score);
    }
    let _ = writeln!(out, "\n# models\nfamily,parameters,operations");
    for f in AgentFamily::ALL {
        let p = AgentParams {
            family: f,
            ..config.agents.clone()
        };
        let _ = writeln!(out, "{},{},{}", f.key(), parameter_count(f, &p), operation_count(f, &p));
    }
    Ok(out)
}
