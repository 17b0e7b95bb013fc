//! Double-DQN training and greedy inference.

mod dqn;
mod exploration;
mod replay;

use thiserror::Error;

pub use dqn::{
    batch_input, evaluate, greedy_action, select_action, td_targets, AgentConfig, DqnAgent, EpisodeRecord, Evaluation,
    TrainingLog,
};
pub use exploration::{epsilon_at, ExplorationSchedule};
pub use replay::{ReplayBuffer, Transition};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}
