//! Step-weighted federated averaging of the agents' action-value models.
//!
//! Each round collects `(payload_i, N^i)` from every agent, forms
//! `sum N^i payload_i / sum N^i` and broadcasts the result. Weights are
//! computed from the integer counts, and the weighted terms are summed
//! pairwise in ascending `agent_id` order, so the aggregate is independent
//! of the arrival order and of a common scaling of the counts.

use serde::{Deserialize, Serialize};

use crate::agents::Agent;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalUpdate {
    pub agent_id: usize,
    pub payload: Vec<f64>,
    pub step_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub payload: Vec<f64>,
    pub round_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationParams {
    pub enabled: bool,
    /// Round period in environment steps; 0 means once at the end of every episode.
    pub period_steps: u64,
    /// Whether networks also average their batch-norm running statistics.
    pub average_running_stats: bool,
}

impl Default for FederationParams {
    fn default() -> Self {
        Self {
            enabled: true,
            period_steps: 0,
            average_running_stats: true,
        }
    }
}

/// One line of the round log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub global_step: u64,
    #[serde(rename = "sum_Ni")]
    pub sum_ni: u64,
    pub payload_l2_norm: f64,
}

/// Snapshots the agent's model and resets its `N^i`.
pub fn collect_update(agent: &mut Agent, with_running_stats: bool) -> LocalUpdate {
    LocalUpdate {
        agent_id: agent.id,
        payload: agent.payload(with_running_stats),
        step_count: agent.take_step_count(),
    }
}

fn pairwise_sum(terms: &[f64]) -> f64 {
    match terms.len() {
        0 => 0.0,
        1 => terms[0],
        n => pairwise_sum(&terms[..n / 2]) + pairwise_sum(&terms[n / 2..]),
    }
}

/// Weighted mean of the payloads, or `None` when every `N^i` is zero.
pub fn aggregate(updates: &[LocalUpdate], round_index: u64) -> Result<Option<GlobalModel>> {
    let Some(first) = updates.first() else {
        return Err(Error::Protocol("aggregation needs at least one update".into()));
    };
    let len = first.payload.len();
    if let Some(u) = updates.iter().find(|u| u.payload.len() != len) {
        return Err(Error::Protocol(format!(
            "agent {} sent {} values, expected {len}",
            u.agent_id,
            u.payload.len()
        )));
    }
    let mut ordered: Vec<&LocalUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.agent_id);
    if ordered.windows(2).any(|w| w[0].agent_id == w[1].agent_id) {
        return Err(Error::Protocol("duplicate agent id in one round".into()));
    }
    let total: u128 = ordered.iter().map(|u| u128::from(u.step_count)).sum();
    if total == 0 {
        return Ok(None);
    }
    let contributors: Vec<&LocalUpdate> = ordered.into_iter().filter(|u| u.step_count > 0).collect();
    let weights: Vec<f64> = contributors
        .iter()
        .map(|u| u.step_count as f64 / total as f64)
        .collect();
    let mut terms = vec![0.0; contributors.len()];
    let mut payload = Vec::with_capacity(len);
    for k in 0..len {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, u) in contributors.iter().enumerate() {
            let x = u.payload[k];
            terms[i] = weights[i] * x;
            lo = lo.min(x);
            hi = hi.max(x);
        }
        // Rounding can push the sum a hair outside the hull of the inputs.
        payload.push(pairwise_sum(&terms).clamp(lo, hi));
    }
    if payload.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("aggregated model is not finite".into()));
    }
    Ok(Some(GlobalModel { payload, round_index }))
}

/// Replaces the agent's model with the global one. `R_bar`, epsilon, the
/// optimizer moments, the replay buffer and the DDQN target stay local.
pub fn apply_global(agent: &mut Agent, global: &GlobalModel, with_running_stats: bool) -> Result<()> {
    agent.load_payload(&global.payload, with_running_stats)
}

/// Round driver keeping the last broadcast and the round log.
#[derive(Debug, Clone)]
pub struct Federation {
    params: FederationParams,
    rounds: u64,
    global: Option<GlobalModel>,
    log: Vec<RoundRecord>,
}

impl Federation {
    pub fn new(params: FederationParams) -> Self {
        Self {
            params,
            rounds: 0,
            global: None,
            log: Vec::new(),
        }
    }

    pub fn params(&self) -> &FederationParams {
        &self.params
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn global(&self) -> Option<&GlobalModel> {
        self.global.as_ref()
    }

    pub fn log(&self) -> &[RoundRecord] {
        &self.log
    }

    /// Whether a round is due after `step_in_episode` steps of the episode
    /// (counted from 1) and `global_step` steps overall.
    pub fn is_due(&self, global_step: u64, step_in_episode: u64, steps_per_episode: u64) -> bool {
        if !self.params.enabled {
            return false;
        }
        match self.params.period_steps {
            0 => step_in_episode == steps_per_episode,
            p => global_step % p == 0,
        }
    }

    /// Collect, aggregate and broadcast. A round in which no agent trained
    /// keeps every model and the previous global as they are.
    pub fn round(&mut self, agents: &mut [Agent], global_step: u64) -> Result<RoundRecord> {
        let with_stats = self.params.average_running_stats;
        let updates: Vec<LocalUpdate> = agents.iter_mut().map(|a| collect_update(a, with_stats)).collect();
        let sum_ni = updates.iter().map(|u| u.step_count).sum();
        self.rounds += 1;
        let round = self.rounds;
        if let Some(global) = aggregate(&updates, round)? {
            for agent in agents.iter_mut() {
                apply_global(agent, &global, with_stats)?;
            }
            self.global = Some(global);
        }
        let norm = self
            .global
            .as_ref()
            .map_or(0.0, |g| g.payload.iter().map(|x| x * x).sum::<f64>().sqrt());
        let record = RoundRecord {
            round,
            global_step,
            sum_ni,
            payload_l2_norm: norm,
        };
        self.log.push(record);
        Ok(record)
    }
}
