//! Federated reinforcement learning for adaptive LiDAR compression in
//! teleoperated driving.
//!
//! The crate bundles a decision-window uplink simulator, five learners
//! (MAB, linear SARSA, linear Q-Learning, Deep SARSA, DDQN), step-weighted
//! federated averaging and the experiment harness that trains and
//! benchmarks them.

pub mod channel;
pub mod compression;
pub mod config;
pub mod agents;
pub mod error;
pub mod federation;
pub mod harness;
pub mod link;
pub mod reward;
pub mod rng;
pub mod state;

pub use channel::{sinr_to_mcs, ChannelModel, ChannelTrace, McsEntry, McsTable};
pub use compression::{compressed_frame_size, load_compression_table, CompressionConfig, CompressionTable, SizeModel, NUM_ACTIONS};
pub use error::{Error, Result};
pub use link::{FrameCounters, FrameDelays, LayerStats, LinkParams, LinkSimulator, WindowStats};
pub use reward::{compute_reward, representative_delay, RewardParams};
pub use state::{build_state_vector, FeatureScaling, StateVector, HOMOGENEOUS_LEN, NUM_FEATURES};
pub use agents::{epsilon_schedule, Agent, AgentFamily, AgentModel, AgentParams, Transition};
pub use federation::{aggregate, apply_global, collect_update, Federation, FederationParams, GlobalModel, LocalUpdate, RoundRecord};
pub use config::{parse_config, ExperimentConfig, Preset};
pub use harness::{compute_regret, run_constant_benchmark, run_training, time_learning_step, Environment, MetricsRecord, RunOptions, RunSummary};
