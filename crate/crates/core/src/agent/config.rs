use serde::{Deserialize, Serialize};

use super::buffer::ReturnMode;
use super::policy::PolicyConfig;
use crate::error::{Error, Result};
use crate::nets::{OptimizerMethod, OptimizerSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    A2c,
    Ppo,
    /// Uniform random actions, no policy updates.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    /// Policy entropy weight.
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Weight of the clipped external reward.
    pub beta_ext: f64,
    /// Weight of the exploration bonus.
    pub beta_bonus: f64,
    pub actors: usize,
    pub rollout: usize,
    pub optimizer: OptimizerSpec,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub normalize_advantages: bool,
    pub normalize_rewards: bool,
    pub policy: PolicyConfig,
}

impl TrainerConfig {
    pub fn a2c() -> Self {
        Self {
            algorithm: Algorithm::A2c,
            gamma: 0.99,
            entropy_coef: 0.01,
            value_coef: 0.25,
            beta_ext: 1.0,
            beta_bonus: 0.1,
            actors: 16,
            rollout: 5,
            optimizer: OptimizerSpec {
                method: OptimizerMethod::Rmsprop,
                learning_rate: 7e-4,
                max_grad_norm: None,
            },
            gae_lambda: 0.95,
            clip_eps: 0.1,
            epochs: 4,
            minibatches: 4,
            normalize_advantages: false,
            normalize_rewards: false,
            policy: PolicyConfig::small(),
        }
    }

    pub fn ppo() -> Self {
        Self {
            algorithm: Algorithm::Ppo,
            beta_ext: 2.0,
            beta_bonus: 1.0,
            actors: 16,
            rollout: 128,
            optimizer: OptimizerSpec {
                method: OptimizerMethod::Adam,
                learning_rate: 2.5e-4,
                max_grad_norm: Some(0.5),
            },
            normalize_advantages: true,
            normalize_rewards: true,
            ..Self::a2c()
        }
    }

    pub fn return_mode(&self) -> ReturnMode {
        match self.algorithm {
            Algorithm::Ppo => ReturnMode::Gae {
                lambda: self.gae_lambda,
            },
            _ => ReturnMode::NStep,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("trainer: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.beta_ext >= 0.0 && self.beta_bonus >= 0.0) {
            return bad("reward weights must be nonnegative");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return bad("loss coefficients must be nonnegative");
        }
        if self.actors == 0 || self.rollout == 0 {
            return bad("actors and rollout must be positive");
        }
        if self.algorithm == Algorithm::Ppo {
            if self.epochs == 0 || self.minibatches == 0 || self.minibatches > self.actors * self.rollout {
                return bad("epochs and minibatches must be positive and fit the batch");
            }
            if !(self.clip_eps >= 0.0) || !(0.0..=1.0).contains(&self.gae_lambda) {
                return bad("clip_eps must be nonnegative and gae_lambda in [0, 1]");
            }
        }
        self.optimizer.validate("trainer")
    }
}
