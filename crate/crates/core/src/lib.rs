//! Demand-response load scheduling on a Tetris-like 24-hour grid.
//!
//! Appliance loads are quantized into 0.5 kW cells and dropped as blocks onto
//! the day's aggregate profile. A Double-DQN agent learns where to drop them
//! to flatten the peak (and optionally cut the time-of-use bill), and an
//! exact branch-and-bound scheduler grades the learned schedules.
//!
//! The numerical stack is generic over [`Scalar`]; training runs in `f32`
//! and gradient checks in `f64`. Money is exact integer half-cents.

pub mod agent;
pub mod billing;
pub mod env;
pub mod nn;
pub mod oracle;
pub mod rewards;
pub mod scalar;
pub mod scenario;

pub use scalar::Scalar;

pub use agent::{AgentConfig, DqnAgent, Evaluation, TrainingLog};
pub use billing::{BillReport, HalfCents};
pub use env::{Action, EnvConfig, EnvState, LoadBlock, StateImage};
pub use oracle::{Schedule, SolveObjective, SolverQuality};
pub use rewards::{Objective, RewardConfig, SpreadKind};
pub use scenario::{ConsumerScenario, Tariff};

/// Single-precision network used for training and inference.
pub type QNetworkF32 = nn::QNetwork<f32>;
/// Double-precision network used for gradient checking.
pub type QNetworkF64 = nn::QNetwork<f64>;
/// The training agent at its default precision.
pub type Agent = agent::DqnAgent<f32>;
pub type CheckpointF32 = nn::Checkpoint<f32>;
