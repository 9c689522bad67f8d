//! Training and benchmark runs, the regret oracle and step timing.
//!
//! The regret oracle is the best constant configuration on the same seed:
//! all nine constants are run first, and the winner is replayed in
//! lockstep with the learners so that per-step regret can be streamed.

mod env;
mod metrics;

use std::path::Path;
use std::time::Instant;

use rand::Rng;

use crate::agents::{epsilon_schedule, Agent, AgentParams, Transition};
use crate::compression::NUM_ACTIONS;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::federation::Federation;
use crate::rng;
use crate::state::{StateVector, NUM_FEATURES};

pub use env::{Environment, StepOutcome, WARMUP_ACTION};
pub use metrics::{
    export_metrics, read_metrics, read_summary, write_rounds, write_summary, MetricsRecord, MetricsWriter,
    RunSummary, CONFIG_FILE, METRICS_FILE, ROUNDS_FILE, SUMMARY_FILE,
};

/// Who picks the compression configurations.
#[derive(Debug, Clone)]
pub enum Controller {
    Learners { agents: Vec<Agent>, federation: Federation },
    Constant(usize),
}

impl Controller {
    /// One learner per vehicle, all starting from the same model.
    pub fn learners(config: &ExperimentConfig) -> Result<Self> {
        let agents = (0..config.experiment.n_vehicles)
            .map(|v| Agent::new(&config.agents, v, config.experiment.seed))
            .collect::<Result<_>>()?;
        Ok(Controller::Learners {
            agents,
            federation: Federation::new(config.federation.clone()),
        })
    }

    fn set_epsilon(&mut self, eps: f64) {
        if let Controller::Learners { agents, .. } = self {
            for a in agents {
                a.set_epsilon(eps);
            }
        }
    }

    fn epsilon(&self) -> f64 {
        match self {
            Controller::Learners { agents, .. } => agents.first().map_or(0.0, Agent::epsilon),
            Controller::Constant(_) => 0.0,
        }
    }

    fn select(&mut self, states: &[StateVector]) -> Result<Vec<usize>> {
        match self {
            Controller::Learners { agents, .. } => agents
                .iter_mut()
                .zip(states)
                .map(|(a, s)| a.select_action(s))
                .collect(),
            Controller::Constant(a) => Ok(vec![*a; states.len()]),
        }
    }
}

/// Replays the oracle's constant configuration next to the learners.
#[derive(Debug, Clone)]
pub struct OracleTrack {
    pub env: Environment,
    pub action: usize,
    /// Per-vehicle cumulative regret.
    pub per_vehicle: Vec<f64>,
    /// Cumulative regret of the vehicle-mean reward.
    pub total: f64,
}

impl OracleTrack {
    pub fn new(config: &ExperimentConfig, action: usize) -> Result<Self> {
        Ok(Self {
            env: Environment::new(config)?,
            action,
            per_vehicle: vec![0.0; config.experiment.n_vehicles],
            total: 0.0,
        })
    }
}

/// Whether the episode trains the learners.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeMode {
    Train,
    /// Greedy actions, no learning, no federation.
    Eval,
}

/// Aggregates of one episode.
#[derive(Debug, Clone, Default)]
pub struct EpisodeResult {
    pub records: Vec<MetricsRecord>,
    /// Vehicle-mean reward per step.
    pub step_rewards: Vec<f64>,
    pub mean_reward: f64,
    pub delay_sum: f64,
    pub map_sum: f64,
    pub prr_sum: f64,
    pub frame_bytes: f64,
    pub frames: u64,
    pub compression_ms_sum: f64,
    pub action_counts: Vec<u64>,
}

/// Runs one episode: every step each controller picks an action per
/// vehicle, the environment simulates one window, and learners update on
/// `(s, a, R, s', a')`. Federation rounds fire on the configured schedule.
pub fn run_episode(
    env: &mut Environment,
    controller: &mut Controller,
    config: &ExperimentConfig,
    episode: u64,
    global_step: &mut u64,
    mode: EpisodeMode,
    mut oracle: Option<&mut OracleTrack>,
) -> Result<EpisodeResult> {
    let steps = config.experiment.steps_per_episode;
    let total = config.total_steps();
    let n = env.n_vehicles();
    let eps_at = |step: u64| match mode {
        EpisodeMode::Train => epsilon_schedule(step, total, config.agents.eps_start, config.agents.eps_end),
        EpisodeMode::Eval => 0.0,
    };
    let mut states = env.reset(episode)?;
    if let Some(o) = oracle.as_deref_mut() {
        o.env.reset(episode)?;
    }
    controller.set_epsilon(eps_at(*global_step));
    let mut epsilon = controller.epsilon();
    let mut actions = controller.select(&states)?;
    let mut out = EpisodeResult {
        records: Vec::with_capacity(steps as usize * n),
        step_rewards: Vec::with_capacity(steps as usize),
        action_counts: vec![0; NUM_ACTIONS],
        ..EpisodeResult::default()
    };
    for step in 0..steps {
        let outcomes = env.step(&actions)?;
        let oracle_rewards = match oracle.as_deref_mut() {
            Some(o) => {
                let a = vec![o.action; n];
                Some(o.env.step(&a)?.into_iter().map(|x| x.reward).collect::<Vec<f64>>())
            }
            None => None,
        };
        *global_step += 1;
        let next_states: Vec<StateVector> = outcomes.iter().map(|o| o.state).collect();
        controller.set_epsilon(eps_at(*global_step));
        let next_epsilon = controller.epsilon();
        let next_actions = controller.select(&next_states)?;
        if mode == EpisodeMode::Train {
            if let Controller::Learners { agents, federation } = controller {
                for (v, agent) in agents.iter_mut().enumerate() {
                    agent.learn(&Transition {
                        state: states[v],
                        action: actions[v],
                        reward: outcomes[v].reward,
                        next_state: next_states[v],
                        next_action: next_actions[v],
                    })?;
                }
                if federation.is_due(*global_step, step + 1, steps) {
                    federation.round(agents, *global_step)?;
                }
            }
        }

        let mut reward_sum = 0.0;
        let mut oracle_sum = 0.0;
        for (v, o) in outcomes.iter().enumerate() {
            let a = actions[v];
            let cfg = env.config_for(a)?;
            let mut cum_regret = 0.0;
            if let (Some(track), Some(or)) = (oracle.as_deref_mut(), &oracle_rewards) {
                track.per_vehicle[v] += or[v] - o.reward;
                cum_regret = track.per_vehicle[v];
                oracle_sum += or[v];
            }
            reward_sum += o.reward;
            out.delay_sum += o.app_delay;
            out.map_sum += cfg.map_score;
            out.prr_sum += o.stats.prr_app;
            out.compression_ms_sum += cfg.compression_time_ms;
            out.frame_bytes += o.stats.frames.iter().map(|f| f.bytes as f64).sum::<f64>();
            out.frames += o.stats.frames.len() as u64;
            out.action_counts[a] += 1;
            out.records.push(MetricsRecord {
                episode,
                step,
                vehicle: v,
                action: a,
                reward: o.reward,
                app_delay_ms: o.app_delay * 1e3,
                prr_app: o.stats.prr_app,
                epsilon,
                cum_regret,
            });
        }
        if let Some(track) = oracle.as_deref_mut() {
            track.total += (oracle_sum - reward_sum) / n as f64;
        }
        out.step_rewards.push(reward_sum / n as f64);
        states = next_states;
        actions = next_actions;
        epsilon = next_epsilon;
    }
    out.mean_reward = out.step_rewards.iter().sum::<f64>() / steps as f64;
    Ok(out)
}

/// `regret_T = sum_{t <= T} (oracle_t - agent_t)` for every prefix `T`.
pub fn compute_regret(agent_rewards: &[f64], oracle_rewards: &[f64]) -> Result<Vec<f64>> {
    if agent_rewards.len() != oracle_rewards.len() {
        return Err(Error::Usage(format!(
            "{} agent rewards against {} oracle rewards",
            agent_rewards.len(),
            oracle_rewards.len()
        )));
    }
    let mut acc = 0.0;
    Ok(agent_rewards
        .iter()
        .zip(oracle_rewards)
        .map(|(a, o)| {
            acc += o - a;
            acc
        })
        .collect())
}

/// Mean wall time (microseconds) of `select_action + learn` on random
/// states, after `max(reps / 10, batch_size)` untimed warm-up steps.
pub fn time_learning_step(params: &AgentParams, reps: u64, seed: u64) -> Result<f64> {
    if reps == 0 {
        return Err(Error::Usage("step timing needs at least one repetition".into()));
    }
    let mut agent = Agent::new(params, 0, seed)?;
    let mut r = rng::stream(seed, "timing", 0);
    let random_state = |r: &mut rand_chacha::ChaCha8Rng| {
        let mut f = [0.0; NUM_FEATURES];
        for x in &mut f {
            *x = r.random_range(-1.0..1.0);
        }
        StateVector::new(f)
    };
    let warmup = (reps / 10).max(params.batch_size as u64);
    let mut state = random_state(&mut r);
    let mut action = agent.select_action(&state)?;
    let mut elapsed = 0.0;
    for i in 0..warmup + reps {
        let next_state = random_state(&mut r);
        let reward = r.random_range(-0.1..0.7);
        let start = Instant::now();
        let next_action = agent.select_action(&next_state)?;
        agent.learn(&Transition {
            state,
            action,
            reward,
            next_state,
            next_action,
        })?;
        if i >= warmup {
            elapsed += start.elapsed().as_secs_f64();
        }
        state = next_state;
        action = next_action;
    }
    Ok(elapsed / reps as f64 * 1e6)
}

/// What a run does besides training.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Write config echo, metrics, round log and summary into `output.dir`.
    pub write_outputs: bool,
    /// Known best constant action; searched for when absent and regret is on.
    pub oracle_action: Option<usize>,
}

/// Trains the configured learners over every episode.
pub fn run_training(config: &ExperimentConfig, options: RunOptions) -> Result<RunSummary> {
    let controller = Controller::learners(config)?;
    run(config, controller, options)
}

/// Same loop with a fixed configuration that never learns.
pub fn run_constant_benchmark(config: &ExperimentConfig, action: usize, options: RunOptions) -> Result<RunSummary> {
    if action >= NUM_ACTIONS {
        return Err(Error::Usage(format!("benchmark action {action} is not in 0..{NUM_ACTIONS}")));
    }
    run(config, Controller::Constant(action), options)
}

/// Mean reward of each constant configuration on the config's seed and the
/// index of the best one (lowest index on ties).
pub fn find_oracle_action(config: &ExperimentConfig) -> Result<(usize, Vec<f64>)> {
    let mut quiet = config.clone();
    quiet.harness.regret = false;
    let means = (0..NUM_ACTIONS)
        .map(|a| run_constant_benchmark(&quiet, a, RunOptions::default()).map(|s| s.mean_reward))
        .collect::<Result<Vec<f64>>>()?;
    Ok((best_action(&means), means))
}

pub fn best_action(mean_rewards: &[f64]) -> usize {
    let mut best = 0;
    for (a, m) in mean_rewards.iter().enumerate() {
        if *m > mean_rewards[best] {
            best = a;
        }
    }
    best
}

fn run(config: &ExperimentConfig, mut controller: Controller, options: RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let exp = &config.experiment;
    let dir = config.output.dir.as_path();
    let mut writer = None;
    if options.write_outputs {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let echo = config.to_toml_string()?;
        std::fs::write(dir.join(CONFIG_FILE), echo).map_err(|e| Error::io(dir.join(CONFIG_FILE), e))?;
        if config.output.metrics {
            writer = Some(MetricsWriter::create(&dir.join(METRICS_FILE))?);
        }
    }
    let oracle_action = match (config.harness.regret, options.oracle_action) {
        (false, _) => None,
        (true, Some(a)) => Some(a),
        (true, None) => Some(find_oracle_action(config)?.0),
    };
    let mut oracle = oracle_action.map(|a| OracleTrack::new(config, a)).transpose()?;
    let mut env = Environment::new(config)?;

    let mut global_step = 0;
    let mut episode_rewards = Vec::with_capacity(exp.episodes as usize);
    let mut first = Vec::with_capacity(config.harness.first_steps);
    let mut totals = EpisodeResult {
        action_counts: vec![0; NUM_ACTIONS],
        ..EpisodeResult::default()
    };
    for episode in 0..exp.episodes {
        let r = run_episode(
            &mut env,
            &mut controller,
            config,
            episode,
            &mut global_step,
            EpisodeMode::Train,
            oracle.as_mut(),
        )?;
        if let Some(w) = writer.as_mut() {
            for rec in &r.records {
                w.write(rec)?;
            }
        }
        for &x in &r.step_rewards {
            if first.len() < config.harness.first_steps {
                first.push(x);
            }
        }
        episode_rewards.push(r.mean_reward);
        totals.delay_sum += r.delay_sum;
        totals.map_sum += r.map_sum;
        totals.prr_sum += r.prr_sum;
        totals.frame_bytes += r.frame_bytes;
        totals.frames += r.frames;
        totals.compression_ms_sum += r.compression_ms_sum;
        for (t, c) in totals.action_counts.iter_mut().zip(&r.action_counts) {
            *t += c;
        }
    }
    if let Some(w) = writer {
        w.finish()?;
    }

    let mut eval_rewards = Vec::new();
    for k in 0..exp.eval_episodes {
        let mut eval_step = 0;
        let r = run_episode(
            &mut env,
            &mut controller,
            config,
            exp.episodes + k,
            &mut eval_step,
            EpisodeMode::Eval,
            None,
        )?;
        eval_rewards.push(r.mean_reward);
    }

    let (agent, parameters, operations, step_time_us, rounds) = match &controller {
        Controller::Learners { agents, federation } => {
            let a = &agents[0];
            let t = if config.harness.step_time_reps > 0 {
                time_learning_step(&config.agents, config.harness.step_time_reps, exp.seed)?
            } else {
                0.0
            };
            if options.write_outputs {
                write_rounds(federation.log(), &dir.join(ROUNDS_FILE))?;
            }
            (a.family().key().to_string(), a.parameter_count(), a.operation_count(), t, federation.rounds())
        }
        Controller::Constant(a) => (env.config_for(*a)?.label(), 0, 0, 0.0, 0),
    };
    let samples = (exp.episodes * exp.steps_per_episode) as f64 * exp.n_vehicles as f64;
    let n_final = ((exp.episodes as f64 * config.harness.final_fraction).ceil() as usize).clamp(1, episode_rewards.len());
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let n_last = config.harness.last_episodes.min(episode_rewards.len());
    let summary = RunSummary {
        agent,
        final_reward: mean(&episode_rewards[episode_rewards.len() - n_final..]),
        first100_rewards: first,
        last_episodes_rewards: episode_rewards[episode_rewards.len() - n_last..].to_vec(),
        regret: oracle.as_ref().map_or(0.0, |o| o.total),
        parameters,
        operations,
        step_time_us,
        n_vehicles: exp.n_vehicles,
        episodes: exp.episodes,
        steps: exp.steps_per_episode,
        seed: exp.seed,
        config_digest: config.digest(),
        mean_reward: mean(&episode_rewards),
        mean_app_delay_ms: totals.delay_sum / samples * 1e3,
        mean_map: totals.map_sum / samples,
        mean_prr_app: totals.prr_sum / samples,
        mean_frame_bytes: if totals.frames > 0 { totals.frame_bytes / totals.frames as f64 } else { 0.0 },
        mean_compression_time_ms: totals.compression_ms_sum / samples,
        action_counts: totals.action_counts,
        federation_rounds: rounds,
        oracle_action,
        eval_rewards,
        episode_rewards,
    };
    if options.write_outputs {
        write_summary(&summary, &dir.join(SUMMARY_FILE))?;
    }
    Ok(summary)
}

/// Writes a run's files into `dir` regardless of `output.dir`.
pub fn run_into(config: &ExperimentConfig, dir: &Path, benchmark: Option<usize>, oracle_action: Option<usize>) -> Result<RunSummary> {
    let mut c = config.clone();
    c.output.dir = dir.to_path_buf();
    let options = RunOptions {
        write_outputs: true,
        oracle_action,
    };
    match benchmark {
        Some(a) => run_constant_benchmark(&c, a, options),
        None => run_training(&c, options),
    }
}
