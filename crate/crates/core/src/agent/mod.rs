//! On-policy actor-critic training over vectorized pixel worlds with a
//! count-based exploration bonus.

mod buffer;
mod config;
mod policy;
mod rollout;
mod update;

pub use buffer::{compute_returns, ReturnMode, Returns, RolloutBuffer};
pub use config::{Algorithm, TrainerConfig};
pub use policy::{sample_actions, ActOutput, FrameStack, Policy, PolicyConfig, PolicyNodes};
pub use rollout::{collect_rollout, Actor, EpisodeEnd, Explorer, Rollout, RolloutStats};
pub use update::{
    a2c_loss, a2c_update, normalize_advantages, ppo_loss, ppo_update, shape_reward, LossNodes, RewardNormalizer,
    UpdateMetrics,
};

#[cfg(test)]
mod tests;
