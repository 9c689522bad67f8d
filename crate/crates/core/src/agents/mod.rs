//! The five learners behind one select/learn interface.
//!
//! Every learner uses the differential (average-reward) TD form with a
//! local estimate `R_bar` of the average reward.

mod linear;
mod mlp;
mod replay;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compression::NUM_ACTIONS;
use crate::error::{Error, Result};
use crate::rng;
use crate::state::{StateVector, HOMOGENEOUS_LEN, NUM_FEATURES};

pub use linear::{
    avg_reward_update, linear_q_value, linear_weight_update, mab_update, td_error_qlearning, td_error_sarsa,
    ActionValueTable, LinearWeights,
};
pub use mlp::{adam_step, AdamHyper, AdamState, BatchCache, ForwardCache, LayerLayout, Mlp, Mode};
pub use replay::{Experience, ReplayBuffer};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentFamily {
    #[serde(rename = "mab")]
    Mab,
    #[serde(rename = "sarsa")]
    Sarsa,
    #[serde(rename = "qlearning")]
    QLearning,
    #[serde(rename = "dsarsa")]
    DeepSarsa,
    #[serde(rename = "ddqn")]
    Ddqn,
}

impl AgentFamily {
    pub const ALL: [AgentFamily; 5] = [
        AgentFamily::Mab,
        AgentFamily::Sarsa,
        AgentFamily::QLearning,
        AgentFamily::DeepSarsa,
        AgentFamily::Ddqn,
    ];

    pub fn key(self) -> &'static str {
        match self {
            AgentFamily::Mab => "mab",
            AgentFamily::Sarsa => "sarsa",
            AgentFamily::QLearning => "qlearning",
            AgentFamily::DeepSarsa => "dsarsa",
            AgentFamily::Ddqn => "ddqn",
        }
    }

    /// Display name used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            AgentFamily::Mab => "MAB",
            AgentFamily::Sarsa => "SARSA",
            AgentFamily::QLearning => "Q-Learning",
            AgentFamily::DeepSarsa => "DSARSA",
            AgentFamily::Ddqn => "DDQN",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(self, AgentFamily::DeepSarsa | AgentFamily::Ddqn)
    }

    pub fn is_linear(self) -> bool {
        matches!(self, AgentFamily::Sarsa | AgentFamily::QLearning)
    }
}

impl fmt::Display for AgentFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for AgentFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentFamily::ALL
            .into_iter()
            .find(|f| f.key() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::config(
                    "agents.family",
                    format!("unknown family `{s}` (expected mab, sarsa, qlearning, dsarsa or ddqn)"),
                )
            })
    }
}

/// Learner hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentParams {
    pub family: AgentFamily,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Bandit step size.
    pub lambda: f64,
    /// Linear learners' step size.
    pub alpha: f64,
    /// Average-reward step size.
    pub beta: f64,
    /// Discount of the episodic return; the differential updates do not use it.
    pub gamma: f64,
    pub adam_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub hidden: Vec<usize>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync: u64,
    /// DDQN trains on a replay batch every this many environment steps.
    pub train_every: u64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            family: AgentFamily::Sarsa,
            eps_start: 0.1,
            eps_end: 0.0001,
            lambda: 0.05,
            alpha: 0.01,
            beta: 0.01,
            gamma: 0.99,
            adam_lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            hidden: vec![64, 128, 64, 16],
            bn_momentum: 0.99,
            bn_eps: 1e-5,
            replay_capacity: 10_000,
            batch_size: 32,
            target_sync: 500,
            train_every: 4,
        }
    }
}

impl AgentParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.eps_end && self.eps_end <= self.eps_start && self.eps_start <= 1.0) {
            return Err(Error::config("agents.eps_start", "need 0 <= eps_end <= eps_start <= 1"));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::config("agents.lambda", "must lie in (0, 1]"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::config("agents.beta", "must lie in (0, 1)"));
        }
        for (key, v) in [("agents.alpha", self.alpha), ("agents.adam_lr", self.adam_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("agents.gamma", "must lie in [0, 1]"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("agents.hidden", "needs at least one positive layer width"));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::config("agents.batch_size", "need 0 < batch_size <= replay_capacity"));
        }
        if self.target_sync == 0 || self.train_every == 0 {
            return Err(Error::config("agents.target_sync", "target_sync and train_every must be positive"));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![NUM_FEATURES];
        sizes.extend(&self.hidden);
        sizes.push(NUM_ACTIONS);
        sizes
    }

    fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.adam_lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Linear decay from `eps_start` at step 0 to `eps_end` at step `total - 1`.
pub fn epsilon_schedule(global_step: u64, total_steps: u64, eps_start: f64, eps_end: f64) -> f64 {
    let span = total_steps.saturating_sub(1).max(1) as f64;
    let frac = (global_step as f64 / span).min(1.0);
    (eps_start + (eps_end - eps_start) * frac).max(eps_end)
}

/// With probability `epsilon` a uniform action, otherwise an argmax with
/// ties broken uniformly.
pub fn epsilon_greedy<R: Rng + ?Sized>(values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < epsilon {
        return rng.random_range(0..values.len());
    }
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..values.len()).filter(|&a| values[a] == best).collect();
    match tied.len() {
        0 => rng.random_range(0..values.len()),
        1 => tied[0],
        n => tied[rng.random_range(0..n)],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data")]
pub enum AgentModel {
    Table(ActionValueTable),
    Linear(LinearWeights),
    Mlp(Mlp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdqnState {
    pub replay: ReplayBuffer,
    pub target: Mlp,
    pub steps_since_sync: u64,
    pub rng: ChaCha8Rng,
}

/// One `(s, a, R, s', a')` step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateVector,
    pub action: usize,
    pub reward: f64,
    pub next_state: StateVector,
    pub next_action: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: usize,
    family: AgentFamily,
    params: AgentParams,
    model: AgentModel,
    avg_reward: f64,
    epsilon: f64,
    steps_since_federation: u64,
    total_updates: u64,
    rng: ChaCha8Rng,
    adam: Option<AdamState>,
    ddqn: Option<DdqnState>,
}

impl Agent {
    /// Fresh learner. Network weights come from a stream shared by every
    /// agent of the run so that all vehicles start from one global model.
    pub fn new(params: &AgentParams, id: usize, master_seed: u64) -> Result<Self> {
        params.validate()?;
        let family = params.family;
        let model = match family {
            AgentFamily::Mab => AgentModel::Table(ActionValueTable::default()),
            AgentFamily::Sarsa | AgentFamily::QLearning => AgentModel::Linear(LinearWeights::default()),
            AgentFamily::DeepSarsa | AgentFamily::Ddqn => {
                let mut init = rng::stream(master_seed, rng::INIT, 0);
                AgentModel::Mlp(Mlp::new(&params.layer_sizes(), params.bn_momentum, params.bn_eps, &mut init)?)
            }
        };
        let adam = match &model {
            AgentModel::Mlp(m) => Some(AdamState::new(m.parameter_count())),
            _ => None,
        };
        let ddqn = match (&model, family) {
            (AgentModel::Mlp(m), AgentFamily::Ddqn) => Some(DdqnState {
                replay: ReplayBuffer::new(params.replay_capacity),
                target: m.clone(),
                steps_since_sync: 0,
                rng: rng::stream(master_seed, rng::REPLAY, id as u64),
            }),
            _ => None,
        };
        Ok(Self {
            id,
            family,
            params: params.clone(),
            model,
            avg_reward: 0.0,
            epsilon: params.eps_start,
            steps_since_federation: 0,
            total_updates: 0,
            rng: rng::stream(master_seed, rng::EXPLORE, id as u64),
            adam,
            ddqn,
        })
    }

    pub fn family(&self) -> AgentFamily {
        self.family
    }

    pub fn params(&self) -> &AgentParams {
        &self.params
    }

    pub fn model(&self) -> &AgentModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut AgentModel {
        &mut self.model
    }

    pub fn avg_reward(&self) -> f64 {
        self.avg_reward
    }

    pub fn set_avg_reward(&mut self, r: f64) {
        self.avg_reward = r;
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, eps: f64) {
        self.epsilon = eps.clamp(0.0, 1.0);
    }

    pub fn steps_since_federation(&self) -> u64 {
        self.steps_since_federation
    }

    /// Returns `N^i` and zeroes it.
    pub fn take_step_count(&mut self) -> u64 {
        std::mem::take(&mut self.steps_since_federation)
    }

    pub fn ddqn_state(&self) -> Option<&DdqnState> {
        self.ddqn.as_ref()
    }

    pub fn adam_state(&self) -> Option<&AdamState> {
        self.adam.as_ref()
    }

    pub fn parameter_count(&self) -> usize {
        match &self.model {
            AgentModel::Table(t) => t.values.len(),
            AgentModel::Linear(w) => w.weights.len(),
            AgentModel::Mlp(m) => m.parameter_count(),
        }
    }

    /// Arithmetic operations to evaluate all action values in one state.
    pub fn operation_count(&self) -> usize {
        match &self.model {
            AgentModel::Table(_) => 0,
            AgentModel::Linear(_) => NUM_ACTIONS * (2 * HOMOGENEOUS_LEN - 1),
            AgentModel::Mlp(m) => m.operation_count(),
        }
    }

    pub fn q_values(&self, state: &StateVector) -> Result<Vec<f64>> {
        match &self.model {
            AgentModel::Table(t) => Ok(t.values.clone()),
            AgentModel::Linear(w) => {
                let s = state.homogeneous();
                (0..NUM_ACTIONS).map(|a| linear_q_value(w, &s, a)).collect()
            }
            AgentModel::Mlp(m) => m.predict(&state.features),
        }
    }

    /// Epsilon-greedy choice from the agent's exploration stream.
    pub fn select_action(&mut self, state: &StateVector) -> Result<usize> {
        let values = self.q_values(state)?;
        Ok(epsilon_greedy(&values, self.epsilon, &mut self.rng))
    }

    /// Applies one learning step and returns the TD error (the reward
    /// surprise `R - Q(a)` for the bandit).
    pub fn learn(&mut self, t: &Transition) -> Result<f64> {
        let delta = match self.family {
            AgentFamily::Mab => self.learn_mab(t),
            AgentFamily::Sarsa | AgentFamily::QLearning => self.learn_linear(t)?,
            AgentFamily::DeepSarsa => self.dsarsa_update(t)?,
            AgentFamily::Ddqn => self.ddqn_update(t)?,
        };
        if !self.avg_reward.is_finite() {
            return Err(Error::Numeric(format!("agent {} average reward diverged", self.id)));
        }
        self.steps_since_federation += 1;
        self.total_updates += 1;
        Ok(delta)
    }

    fn learn_mab(&mut self, t: &Transition) -> f64 {
        let AgentModel::Table(table) = &mut self.model else {
            unreachable!("bandit owns a table")
        };
        let delta = t.reward - table.values[t.action];
        mab_update(table, t.action, t.reward, self.params.lambda);
        delta
    }

    fn learn_linear(&mut self, t: &Transition) -> Result<f64> {
        let AgentModel::Linear(w) = &mut self.model else {
            unreachable!("linear learners own weights")
        };
        let s = t.state.homogeneous();
        let s_next = t.next_state.homogeneous();
        let q_curr = linear_q_value(w, &s, t.action)?;
        let delta = if self.family == AgentFamily::Sarsa {
            let q_next = linear_q_value(w, &s_next, t.next_action)?;
            td_error_sarsa(t.reward, self.avg_reward, q_next, q_curr)
        } else {
            let next: Vec<f64> = (0..NUM_ACTIONS)
                .map(|a| linear_q_value(w, &s_next, a))
                .collect::<Result<_>>()?;
            td_error_qlearning(t.reward, self.avg_reward, &next, q_curr)
        };
        linear_weight_update(w, &s, t.action, delta, self.params.alpha);
        self.avg_reward = avg_reward_update(self.avg_reward, delta, self.params.beta);
        if w.weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("agent {} weights diverged", self.id)));
        }
        Ok(delta)
    }

    /// Single-transition semi-gradient step on `1/2 delta^2`.
    fn dsarsa_update(&mut self, t: &Transition) -> Result<f64> {
        let hyper = self.params.adam();
        let AgentModel::Mlp(net) = &mut self.model else {
            unreachable!("neural learners own a network")
        };
        let q_next = net.predict(&t.next_state.features)?[t.next_action];
        let cache = net.forward(&t.state.features, Mode::Train)?;
        let delta = td_error_sarsa(t.reward, self.avg_reward, q_next, cache.output[t.action]);
        let mut d_out = vec![0.0; NUM_ACTIONS];
        d_out[t.action] = -delta;
        let mut grads = vec![0.0; net.parameter_count()];
        net.backward(&cache, &d_out, &mut grads)?;
        let adam = self.adam.as_mut().expect("neural learners own Adam state");
        adam_step(net.params_mut(), &grads, adam, &hyper)?;
        self.avg_reward = avg_reward_update(self.avg_reward, delta, self.params.beta);
        Ok(delta)
    }

    /// Stores the transition and, once the buffer holds a batch, fits a
    /// replay batch to the double-estimator differential target.
    fn ddqn_update(&mut self, t: &Transition) -> Result<f64> {
        let hyper = self.params.adam();
        let AgentModel::Mlp(net) = &mut self.model else {
            unreachable!("neural learners own a network")
        };
        let dd = self.ddqn.as_mut().expect("DDQN state present");
        dd.replay.push(Experience {
            state: t.state,
            action: t.action,
            reward: t.reward,
            next_state: t.next_state,
        });
        dd.steps_since_sync += 1;
        let batch = self.params.batch_size;
        let mut mean_delta = 0.0;
        if dd.replay.len() >= batch && (self.total_updates + 1) % self.params.train_every == 0 {
            let idx = dd.replay.sample_indices(batch, &mut dd.rng);
            let mut states = Vec::with_capacity(batch * NUM_FEATURES);
            let mut next_states = Vec::with_capacity(batch * NUM_FEATURES);
            for &i in &idx {
                let e = dd.replay.get(i);
                states.extend_from_slice(&e.state.features);
                next_states.extend_from_slice(&e.next_state.features);
            }
            let online_next = net.predict_batch(&next_states)?;
            let target_next = dd.target.predict_batch(&next_states)?;
            let cache = net.forward_batch_frozen(&states)?;
            let mut d_out = vec![0.0; batch * NUM_ACTIONS];
            for (r, &i) in idx.iter().enumerate() {
                let e = dd.replay.get(i);
                let row = r * NUM_ACTIONS..(r + 1) * NUM_ACTIONS;
                let best = argmax_first(&online_next[row.clone()]);
                let target = e.reward - self.avg_reward + target_next[row][best];
                let delta = target - cache.output_row(r)[e.action];
                mean_delta += delta / batch as f64;
                d_out[r * NUM_ACTIONS + e.action] = -delta / batch as f64;
            }
            let mut grads = vec![0.0; net.parameter_count()];
            net.backward_batch(&cache, &d_out, &mut grads)?;
            let adam = self.adam.as_mut().expect("neural learners own Adam state");
            adam_step(net.params_mut(), &grads, adam, &hyper)?;
            net.update_running_stats(&cache.relu_outputs());
            self.avg_reward = avg_reward_update(self.avg_reward, mean_delta, self.params.beta);
        }
        if dd.steps_since_sync >= self.params.target_sync {
            dd.target.copy_from(net);
            dd.steps_since_sync = 0;
        }
        Ok(mean_delta)
    }

    /// Copies the online network into the DDQN target network.
    pub fn sync_target(&mut self) {
        if let (AgentModel::Mlp(net), Some(dd)) = (&self.model, self.ddqn.as_mut()) {
            dd.target.copy_from(net);
            dd.steps_since_sync = 0;
        }
    }

    /// Flattened model for federated averaging. Networks contribute their
    /// learnables followed, if requested, by running means and variances.
    pub fn payload(&self, with_running_stats: bool) -> Vec<f64> {
        match &self.model {
            AgentModel::Table(t) => t.values.clone(),
            AgentModel::Linear(w) => w.weights.clone(),
            AgentModel::Mlp(m) => {
                let mut p = m.params().to_vec();
                if with_running_stats {
                    p.extend_from_slice(m.running_mean());
                    p.extend_from_slice(m.running_var());
                }
                p
            }
        }
    }

    pub fn payload_len(&self, with_running_stats: bool) -> usize {
        match &self.model {
            AgentModel::Mlp(m) if with_running_stats => m.parameter_count() + 2 * m.running_mean().len(),
            _ => self.parameter_count(),
        }
    }

    /// Overwrites the model with a payload of the same layout.
    pub fn load_payload(&mut self, payload: &[f64], with_running_stats: bool) -> Result<()> {
        let expected = self.payload_len(with_running_stats);
        if payload.len() != expected {
            return Err(Error::Protocol(format!(
                "agent {} expects a payload of {expected} values, got {}",
                self.id,
                payload.len()
            )));
        }
        match &mut self.model {
            AgentModel::Table(t) => t.values.copy_from_slice(payload),
            AgentModel::Linear(w) => w.weights.copy_from_slice(payload),
            AgentModel::Mlp(m) => {
                let n = m.parameter_count();
                m.params_mut().copy_from_slice(&payload[..n]);
                if with_running_stats {
                    let s = m.running_mean().len();
                    let (mean, var) = m.running_stats_mut();
                    mean.copy_from_slice(&payload[n..n + s]);
                    var.copy_from_slice(&payload[n + s..]);
                }
            }
        }
        Ok(())
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            format_version: CHECKPOINT_VERSION,
            agent: self.clone(),
        })?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format_version != CHECKPOINT_VERSION {
            return Err(Error::Usage(format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_VERSION})",
                c.format_version
            )));
        }
        Ok(c.agent)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_json(&text)
    }
}

/// Versioned JSON envelope; floats round-trip exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    agent: Agent,
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (a, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = a;
        }
    }
    best
}

/// Parameter count of a family with default network widths.
pub fn parameter_count(family: AgentFamily, params: &AgentParams) -> usize {
    match family {
        AgentFamily::Mab => NUM_ACTIONS,
        AgentFamily::Sarsa | AgentFamily::QLearning => NUM_ACTIONS * HOMOGENEOUS_LEN,
        AgentFamily::DeepSarsa | AgentFamily::Ddqn => {
            let sizes = params.layer_sizes();
            let dense: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            dense + 2 * params.hidden.iter().sum::<usize>()
        }
    }
}

/// Operation count of a family: 0 for a lookup, `|A| (2 d - 1)` for the
/// linear model, `sum(2 in out - out)` over dense layers for networks.
pub fn operation_count(family: AgentFamily, params: &AgentParams) -> usize {
    match family {
        AgentFamily::Mab => 0,
        AgentFamily::Sarsa | AgentFamily::QLearning => NUM_ACTIONS * (2 * HOMOGENEOUS_LEN - 1),
        AgentFamily::DeepSarsa | AgentFamily::Ddqn => params
            .layer_sizes()
            .windows(2)
            .map(|w| 2 * w[0] * w[1] - w[1])
            .sum(),
    }
}
