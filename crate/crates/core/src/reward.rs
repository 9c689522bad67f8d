//! QoS/QoE reward: the configuration's mAP while the end-to-end delay stays
//! under the latency budget, the (scaled) negated delay otherwise.

use serde::{Deserialize, Serialize};

use crate::compression::CompressionConfig;
use crate::link::WindowStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// Multiplier on the delay (in seconds) of the penalty branch.
    pub penalty_scale: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { penalty_scale: 1.0 }
    }
}

/// `map_score` if `app_delay < d_kpi`, otherwise `-app_delay`. Delays in seconds.
pub fn compute_reward(app_delay: f64, action: &CompressionConfig, d_kpi: f64) -> f64 {
    compute_scaled_reward(app_delay, action, d_kpi, 1.0)
}

pub fn compute_scaled_reward(app_delay: f64, action: &CompressionConfig, d_kpi: f64, penalty_scale: f64) -> f64 {
    if app_delay < d_kpi {
        action.map_score
    } else {
        -penalty_scale * app_delay
    }
}

/// Delay that represents a window in the reward: mean APP delay of the
/// delivered frames, or the whole window length if nothing arrived.
pub fn representative_delay(stats: &WindowStats, decision_interval: f64) -> f64 {
    stats.mean_app_delay().unwrap_or(decision_interval)
}
