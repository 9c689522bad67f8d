//! The 18-feature observation built from one window's link statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::WindowStats;

pub const NUM_FEATURES: usize = 18;
/// Features plus the homogeneous bias coordinate.
pub const HOMOGENEOUS_LEN: usize = NUM_FEATURES + 1;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "avg_sinr_db",
    "avg_mcs_symbols",
    "avg_subcarriers",
    "rlc_delay_avg",
    "rlc_delay_min",
    "rlc_delay_max",
    "rlc_delay_std",
    "pdcp_delay_avg",
    "pdcp_delay_min",
    "pdcp_delay_max",
    "pdcp_delay_std",
    "app_delay_avg",
    "app_delay_min",
    "app_delay_max",
    "app_delay_std",
    "prr_rlc",
    "prr_pdcp",
    "prr_app",
];

/// Observation in the documented feature order, already scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub features: [f64; NUM_FEATURES],
}

impl StateVector {
    pub fn new(features: [f64; NUM_FEATURES]) -> Self {
        Self { features }
    }

    pub fn zeros() -> Self {
        Self::new([0.0; NUM_FEATURES])
    }

    /// Features with a trailing constant 1.
    pub fn homogeneous(&self) -> [f64; HOMOGENEOUS_LEN] {
        let mut out = [1.0; HOMOGENEOUS_LEN];
        out[..NUM_FEATURES].copy_from_slice(&self.features);
        out
    }
}

/// Raw statistics in feature order, before scaling.
pub fn raw_features(stats: &WindowStats) -> [f64; NUM_FEATURES] {
    let l = |s: &crate::link::LayerStats| [s.avg, s.min, s.max, s.std];
    let mut f = [0.0; NUM_FEATURES];
    f[0] = stats.avg_sinr;
    f[1] = stats.avg_mcs_symbols;
    f[2] = stats.avg_subcarriers;
    f[3..7].copy_from_slice(&l(&stats.rlc));
    f[7..11].copy_from_slice(&l(&stats.pdcp));
    f[11..15].copy_from_slice(&l(&stats.app));
    f[15] = stats.prr_rlc;
    f[16] = stats.prr_pdcp;
    f[17] = stats.prr_app;
    f
}

/// Fixed per-feature affine map `(x - offset) / scale`, shared by every
/// vehicle so that averaged linear weights act on one feature basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureScaling {
    pub offsets: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Default for FeatureScaling {
    fn default() -> Self {
        let mut offsets = vec![0.0; NUM_FEATURES];
        let mut scales = vec![1.0; NUM_FEATURES];
        offsets[0] = 10.0;
        scales[0] = 15.0;
        scales[1] = 256.0;
        scales[2] = 416.0;
        for s in &mut scales[3..15] {
            *s = 0.1;
        }
        Self { offsets, scales }
    }
}

impl FeatureScaling {
    pub fn identity() -> Self {
        Self {
            offsets: vec![0.0; NUM_FEATURES],
            scales: vec![1.0; NUM_FEATURES],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.offsets.len() != NUM_FEATURES || self.scales.len() != NUM_FEATURES {
            return Err(Error::config(
                "scaling",
                format!("offsets and scales need {NUM_FEATURES} entries each"),
            ));
        }
        if let Some(i) = self.scales.iter().position(|s| *s == 0.0 || !s.is_finite()) {
            return Err(Error::config(
                format!("scaling.scales[{i}]"),
                "scale must be finite and non-zero",
            ));
        }
        Ok(())
    }
}

pub fn build_state_vector(stats: &WindowStats, scaling: &FeatureScaling) -> Result<StateVector> {
    let raw = raw_features(stats);
    let mut features = [0.0; NUM_FEATURES];
    for (i, x) in raw.iter().enumerate() {
        let v = (x - scaling.offsets[i]) / scaling.scales[i];
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "feature {} ({}) is not finite: {v}",
                i, FEATURE_NAMES[i]
            )));
        }
        features[i] = v;
    }
    Ok(StateVector { features })
}
