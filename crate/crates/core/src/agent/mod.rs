//! Tabular Q-learning agents, replay baselines and the continual-learning loop.

mod baselines;
mod metrics;
mod qtable;
mod runner;
mod train;

pub use baselines::{FifoBuffer, FifoSampling};
pub use metrics::{compute_metrics, ContinualMetrics};
pub use qtable::QTable;
pub use runner::{evaluate_greedy, run_continual, Ablations, EpisodeRow, Method, RunResult, RunSpec};
pub use train::{train_step, AgentConfig, TrainItem};
