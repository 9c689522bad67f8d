//! LiDAR compression configurations (the action space) and the payload size model.
//!
//! Each configuration pairs a compression level `c` with a quantization depth
//! `q`. The embedded default table carries the measured encoder time and the
//! detection quality (mAP) obtained on decompressed frames.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of selectable configurations.
pub const NUM_ACTIONS: usize = 9;

/// Raw LiDAR point size: three 32-bit coordinates.
pub const RAW_POINT_BYTES: u64 = 12;

const DEFAULT_TABLE_CSV: &str = "\
c,q,time_ms,map
0,8,5.17,0.257
0,9,5.22,0.580
0,10,5.50,0.686
5,8,5.34,0.257
5,9,6.97,0.572
5,10,8.52,0.683
10,8,8.21,0.257
10,9,9.62,0.574
10,10,11.58,0.683
";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub id: usize,
    pub level: u32,
    pub quant_bits: u32,
    pub compression_time_ms: f64,
    pub map_score: f64,
}

impl CompressionConfig {
    /// Encoder time in seconds.
    pub fn compression_time(&self) -> f64 {
        self.compression_time_ms / 1000.0
    }

    /// Short label in `q-cc` form, e.g. `10-05`.
    pub fn label(&self) -> String {
        format!("{}-{:02}", self.quant_bits, self.level)
    }
}

impl fmt::Display for CompressionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Deserialize)]
struct TableRow {
    c: u32,
    q: u32,
    time_ms: f64,
    map: f64,
}

/// The nine-entry action table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionTable {
    configs: Vec<CompressionConfig>,
}

impl Default for CompressionTable {
    fn default() -> Self {
        load_compression_table(DEFAULT_TABLE_CSV.as_bytes()).expect("embedded table is valid")
    }
}

impl CompressionTable {
    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        load_compression_table(file)
    }

    pub fn configs(&self) -> &[CompressionConfig] {
        &self.configs
    }

    pub fn get(&self, id: usize) -> Option<&CompressionConfig> {
        self.configs.get(id)
    }

    pub fn by_label(&self, label: &str) -> Option<&CompressionConfig> {
        self.configs.iter().find(|c| c.label() == label)
    }

    pub fn max_map(&self) -> f64 {
        self.configs.iter().map(|c| c.map_score).fold(f64::MIN, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("c,q,time_ms,map\n");
        for c in &self.configs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                c.level, c.quant_bits, c.compression_time_ms, c.map_score
            ));
        }
        out
    }
}

/// Parses a `c,q,time_ms,map` table. Rows are indexed in file order.
pub fn load_compression_table<R: std::io::Read>(source: R) -> Result<CompressionTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut configs = Vec::with_capacity(NUM_ACTIONS);
    for (i, row) in reader.deserialize::<TableRow>().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Schema {
            row: row_no,
            message: e.to_string(),
        })?;
        if !(row.time_ms > 0.0) || !row.time_ms.is_finite() {
            return Err(Error::Schema {
                row: row_no,
                message: format!("compression time must be positive, got {}", row.time_ms),
            });
        }
        if !(0.0..=1.0).contains(&row.map) {
            return Err(Error::Schema {
                row: row_no,
                message: format!("mAP must lie in [0, 1], got {}", row.map),
            });
        }
        if configs
            .iter()
            .any(|c: &CompressionConfig| c.level == row.c && c.quant_bits == row.q)
        {
            return Err(Error::Schema {
                row: row_no,
                message: format!("duplicate configuration c={} q={}", row.c, row.q),
            });
        }
        configs.push(CompressionConfig {
            id: i,
            level: row.c,
            quant_bits: row.q,
            compression_time_ms: row.time_ms,
            map_score: row.map,
        });
    }
    if configs.len() != NUM_ACTIONS {
        return Err(Error::Schema {
            row: configs.len(),
            message: format!("expected {NUM_ACTIONS} rows, found {}", configs.len()),
        });
    }
    Ok(CompressionTable { configs })
}

/// Entropy factor per compression level: the fraction of the quantized
/// payload that survives encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeModel {
    pub levels: Vec<u32>,
    pub entropy_factors: Vec<f64>,
}

impl Default for SizeModel {
    fn default() -> Self {
        // A single factor for every level: the level trades encoder time for
        // nothing the size model can see, so q alone drives the payload.
        Self {
            levels: vec![0, 5, 10],
            entropy_factors: vec![0.55, 0.55, 0.55],
        }
    }
}

impl SizeModel {
    pub fn entropy_factor(&self, level: u32) -> Result<f64> {
        self.levels
            .iter()
            .position(|&l| l == level)
            .and_then(|i| self.entropy_factors.get(i).copied())
            .ok_or_else(|| {
                Error::config(
                    "compression.size_model",
                    format!("no entropy factor for compression level {level}"),
                )
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.len() != self.entropy_factors.len() {
            return Err(Error::config(
                "compression.size_model",
                "levels and entropy_factors differ in length",
            ));
        }
        if let Some(f) = self.entropy_factors.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
            return Err(Error::config(
                "compression.size_model.entropy_factors",
                format!("factors must be positive, got {f}"),
            ));
        }
        Ok(())
    }
}

/// Bytes on the wire for one compressed frame: `ceil(points * 3 * q / 8 * eta(c))`.
pub fn compressed_frame_size(
    config: &CompressionConfig,
    points: u64,
    size_model: &SizeModel,
) -> Result<u64> {
    if points == 0 {
        return Err(Error::Usage("frame must contain at least one point".into()));
    }
    let eta = size_model.entropy_factor(config.level)?;
    let quantized_bytes = (points * 3 * u64::from(config.quant_bits)) as f64 / 8.0;
    Ok((quantized_bytes * eta).ceil() as u64)
}
