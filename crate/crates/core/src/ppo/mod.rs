//! On-policy training with proximal policy optimization.

pub mod buffer;
pub mod env;
pub mod gae;
pub mod train;
pub mod update;

pub use buffer::{RolloutBuffer, Transition};
pub use env::{BackendKind, Conditioning, DetectorSetup, GoalEnv, GoalStep, Variant};
pub use gae::{compute_gae, compute_gae_terminal, linear_schedule, normalize_advantages};
pub use train::{
    read_metrics, train, EpisodeRecord, IterationMetrics, MetricsLog, TrainConfig, TrainOutcome, Trainer,
    METRICS_HEADER,
};
pub use update::{clip_grad_norm, loss_and_grads, ppo_update, Adam, LossCoefs, LossStats, Minibatch, UpdateConfig, UpdateStats};
