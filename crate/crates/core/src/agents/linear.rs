//! Action-value table of the bandit and the linear approximator.

use serde::{Deserialize, Serialize};

use crate::compression::NUM_ACTIONS;
use crate::error::{Error, Result};
use crate::state::HOMOGENEOUS_LEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionValueTable {
    pub values: Vec<f64>,
    pub step_counts: Vec<u64>,
}

impl Default for ActionValueTable {
    fn default() -> Self {
        Self {
            values: vec![0.0; NUM_ACTIONS],
            step_counts: vec![0; NUM_ACTIONS],
        }
    }
}

/// `Q(a) <- Q(a) + lambda (R - Q(a))`; other actions untouched.
pub fn mab_update(table: &mut ActionValueTable, action: usize, reward: f64, lambda: f64) {
    table.values[action] += lambda * (reward - table.values[action]);
    table.step_counts[action] += 1;
}

/// Row-major `|A| x 19` weights acting on homogeneous states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearWeights {
    pub weights: Vec<f64>,
}

impl Default for LinearWeights {
    fn default() -> Self {
        Self {
            weights: vec![0.0; NUM_ACTIONS * HOMOGENEOUS_LEN],
        }
    }
}

impl LinearWeights {
    pub fn row(&self, action: usize) -> &[f64] {
        &self.weights[action * HOMOGENEOUS_LEN..(action + 1) * HOMOGENEOUS_LEN]
    }

    pub fn row_mut(&mut self, action: usize) -> &mut [f64] {
        &mut self.weights[action * HOMOGENEOUS_LEN..(action + 1) * HOMOGENEOUS_LEN]
    }
}

/// `s . w_a` for a homogeneous state.
pub fn linear_q_value(weights: &LinearWeights, state: &[f64], action: usize) -> Result<f64> {
    if state.len() != HOMOGENEOUS_LEN {
        return Err(Error::Numeric(format!(
            "linear model expects {HOMOGENEOUS_LEN} state entries, got {}",
            state.len()
        )));
    }
    if action >= NUM_ACTIONS {
        return Err(Error::Numeric(format!("action {action} out of range")));
    }
    Ok(weights.row(action).iter().zip(state).map(|(w, s)| w * s).sum())
}

/// `w_a <- w_a + alpha delta s`; other rows untouched.
pub fn linear_weight_update(weights: &mut LinearWeights, state: &[f64], action: usize, delta: f64, alpha: f64) {
    let step = alpha * delta;
    for (w, s) in weights.row_mut(action).iter_mut().zip(state) {
        *w += step * s;
    }
}

/// `delta = R - R_bar + q(s', a') - q(s, a)`.
pub fn td_error_sarsa(reward: f64, avg_reward: f64, q_next: f64, q_curr: f64) -> f64 {
    reward - avg_reward + q_next - q_curr
}

/// `delta = R - R_bar + max_a q(s', a) - q(s, a)`.
pub fn td_error_qlearning(reward: f64, avg_reward: f64, q_values_next: &[f64], q_curr: f64) -> f64 {
    let best = q_values_next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    reward - avg_reward + best - q_curr
}

/// `R_bar <- R_bar + beta delta`.
pub fn avg_reward_update(avg_reward: f64, delta: f64, beta: f64) -> f64 {
    avg_reward + beta * delta
}
