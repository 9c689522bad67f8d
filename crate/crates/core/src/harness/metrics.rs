//! Per-step metrics rows, run summaries and their files.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::RoundRecord;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ROUNDS_FILE: &str = "federation.csv";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub episode: u64,
    pub step: u64,
    pub vehicle: usize,
    pub action: usize,
    pub reward: f64,
    pub app_delay_ms: f64,
    pub prr_app: f64,
    pub epsilon: f64,
    pub cum_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Family key for learners, configuration label for constant benchmarks.
    pub agent: String,
    /// Mean reward over the last `final_fraction` of training episodes.
    pub final_reward: f64,
    /// Vehicle-mean reward of each of the first training steps.
    pub first100_rewards: Vec<f64>,
    /// Per-episode mean reward of the last training episodes.
    pub last_episodes_rewards: Vec<f64>,
    /// Cumulative shortfall against the best constant configuration.
    pub regret: f64,
    pub parameters: usize,
    pub operations: usize,
    pub step_time_us: f64,
    pub n_vehicles: usize,
    pub episodes: u64,
    pub steps: u64,
    pub seed: u64,
    pub config_digest: String,
    pub episode_rewards: Vec<f64>,
    pub mean_reward: f64,
    pub mean_app_delay_ms: f64,
    pub mean_map: f64,
    pub mean_prr_app: f64,
    pub mean_frame_bytes: f64,
    pub mean_compression_time_ms: f64,
    pub action_counts: Vec<u64>,
    pub federation_rounds: u64,
    pub oracle_action: Option<usize>,
    pub eval_rewards: Vec<f64>,
}

/// Streaming writer for the per-step CSV.
pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
    path: PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(file));
        inner.write_record(HEADER)?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, r: &MetricsRecord) -> Result<()> {
        self.inner.serialize(r)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

const HEADER: [&str; 9] = [
    "episode",
    "step",
    "vehicle",
    "action",
    "reward",
    "app_delay_ms",
    "prr_app",
    "epsilon",
    "cum_regret",
];

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_rounds(rounds: &[RoundRecord], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["round", "global_step", "sum_Ni", "payload_l2_norm"])?;
    for r in rounds {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Err(Error::Schema {
            row: 0,
            message: format!("unexpected metrics header {header:?}"),
        });
    }
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

/// Writes `metrics.csv` and `summary.json` into `dir`, replacing old files.
pub fn export_metrics(records: &[MetricsRecord], summary: &RunSummary, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = MetricsWriter::create(&dir.join(METRICS_FILE))?;
    for r in records {
        w.write(r)?;
    }
    w.finish()?;
    write_summary(summary, &dir.join(SUMMARY_FILE))
}
