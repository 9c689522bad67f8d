//! Episode-level wrapper around the link simulator: trace generation,
//! warm-up, state building and rewards.

use rand_chacha::ChaCha8Rng;

use crate::channel::{ChannelTrace, McsTable};
use crate::compression::{CompressionConfig, CompressionTable};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::link::{LinkSimulator, WindowStats};
use crate::reward::{compute_scaled_reward, representative_delay};
use crate::rng;
use crate::state::{build_state_vector, StateVector};

/// Action executed in the warm-up window that produces the first state.
pub const WARMUP_ACTION: usize = 0;

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub stats: WindowStats,
    pub state: StateVector,
    pub reward: f64,
    /// Representative APP delay of the window, seconds.
    pub app_delay: f64,
}

/// N vehicles over one channel realization per episode.
///
/// The trace and the frame-size jitter come from environment streams keyed
/// by the master seed and the episode index only, so every controller run
/// on the same seed faces identical conditions.
#[derive(Debug, Clone)]
pub struct Environment {
    config: ExperimentConfig,
    table: CompressionTable,
    external: Option<ChannelTrace>,
    sim: LinkSimulator,
    trace: ChannelTrace,
    jitter: ChaCha8Rng,
}

impl Environment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let table = config.load_table()?;
        let external = config.load_trace()?;
        let n = config.experiment.n_vehicles;
        if let Some(t) = &external {
            if t.n_vehicles() != n {
                return Err(Error::config(
                    "traces.path",
                    format!("trace has {} vehicles, experiment {n}", t.n_vehicles()),
                ));
            }
        }
        let sim = LinkSimulator::new(
            config.link.clone(),
            McsTable::default(),
            config.compression.size_model.clone(),
            n,
        )?;
        Ok(Self {
            config: config.clone(),
            table,
            external,
            sim,
            trace: ChannelTrace::new(0.0, config.link.tick, vec![vec![0.0]; n])?,
            jitter: rng::stream(config.experiment.seed, rng::ENV_JITTER, 0),
        })
    }

    pub fn table(&self) -> &CompressionTable {
        &self.table
    }

    pub fn n_vehicles(&self) -> usize {
        self.sim.n_vehicles()
    }

    pub fn simulator(&self) -> &LinkSimulator {
        &self.sim
    }

    pub fn trace(&self) -> &ChannelTrace {
        &self.trace
    }

    /// Samples needed for the warm-up window plus every step.
    pub fn samples_per_episode(&self) -> usize {
        (self.config.experiment.steps_per_episode as usize + 1) * self.config.link.ticks_per_window()
    }

    /// Starts episode `episode`: fresh buffers, its channel realization and
    /// one warm-up window. Returns the first state of every vehicle.
    pub fn reset(&mut self, episode: u64) -> Result<Vec<StateVector>> {
        let seed = self.config.experiment.seed;
        let samples = self.samples_per_episode();
        self.trace = match &self.external {
            Some(t) => {
                if t.len() < samples {
                    return Err(Error::Simulation(format!(
                        "external trace has {} samples, an episode needs {samples}",
                        t.len()
                    )));
                }
                t.clone()
            }
            None => {
                let mut r = rng::stream(seed, rng::ENV_TRACE, episode);
                self.config.channel.generate(
                    self.n_vehicles(),
                    samples,
                    self.config.link.tick,
                    self.config.link.tx_power_dbm,
                    self.config.link.bandwidth_hz,
                    &mut r,
                )?
            }
        };
        self.jitter = rng::stream(seed, rng::ENV_JITTER, episode);
        self.sim.reset();
        let warm = vec![WARMUP_ACTION; self.n_vehicles()];
        Ok(self.step(&warm)?.into_iter().map(|o| o.state).collect())
    }

    pub fn config_for(&self, action: usize) -> Result<&CompressionConfig> {
        self.table
            .get(action)
            .ok_or_else(|| Error::Usage(format!("action {action} out of range")))
    }

    /// Simulates one decision window with one action per vehicle.
    pub fn step(&mut self, actions: &[usize]) -> Result<Vec<StepOutcome>> {
        let configs: Vec<CompressionConfig> = actions
            .iter()
            .map(|&a| self.config_for(a).cloned())
            .collect::<Result<_>>()?;
        let stats = self.sim.simulate_window(&configs, &self.trace, &mut self.jitter)?;
        let link = &self.config.link;
        stats
            .into_iter()
            .zip(&configs)
            .map(|(stats, cfg)| {
                let app_delay = representative_delay(&stats, link.decision_interval);
                let reward = compute_scaled_reward(app_delay, cfg, link.d_kpi, self.config.reward.penalty_scale);
                let state = build_state_vector(&stats, &self.config.scaling)?;
                Ok(StepOutcome { stats, state, reward, app_delay })
            })
            .collect()
    }
}
