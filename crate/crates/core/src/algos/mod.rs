//! Trainers for the decomposed soft actor-critic family and a TD baseline.

mod config;
pub mod losses;
mod schedule;
mod trainer;

pub use config::{
    Behavior, EntropyMixing, TargetEntropy, TrainConfig, Variant, Wiring, OFF_POLICY_BUFFER, ON_POLICY_BUFFER,
};
pub use schedule::{epsilon_schedule, mcac_behavior_policy, standardize_reward, RewardStats};
pub use trainer::{train, EpisodeMetrics, Trainer, MAX_NONFINITE_STREAK};
