use ndcompute::Tensor;
use serde::{Deserialize, Serialize};

use crate::abstraction::AbstractState;
use crate::error::{Error, Result};

/// Transitions of `actors` environments over `steps` steps, stored
/// step-major: index `t · actors + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBuffer {
    pub actors: usize,
    pub steps: usize,
    /// Shape of one observation `[h, w, stack]`.
    pub obs_shape: [usize; 3],
    pub observations: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub dones: Vec<bool>,
    pub ext_rewards: Vec<f64>,
    pub bonuses: Vec<f64>,
    pub psi: Vec<Option<AbstractState>>,
    /// Value estimates of the observations following the last step.
    pub bootstrap: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(actors: usize, steps: usize, obs_shape: [usize; 3]) -> Self {
        let n = actors * steps;
        Self {
            actors,
            steps,
            obs_shape,
            observations: Vec::with_capacity(n * obs_shape.iter().product::<usize>()),
            actions: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            ext_rewards: Vec::with_capacity(n),
            bonuses: Vec::with_capacity(n),
            psi: Vec::with_capacity(n),
            bootstrap: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.len() == self.actors * self.steps && self.bootstrap.len() == self.actors
    }

    fn obs_len(&self) -> usize {
        self.obs_shape.iter().product()
    }

    /// Observations of the given transitions as a `[B, h, w, stack]` tensor.
    pub fn observation_batch(&self, indices: &[usize]) -> Tensor {
        let len = self.obs_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.observations[i * len..(i + 1) * len]);
        }
        let [h, w, c] = self.obs_shape;
        Tensor::new(vec![indices.len(), h, w, c], data).expect("buffer layout")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReturnMode {
    NStep,
    Gae { lambda: f64 },
}

/// Bootstrapped returns and advantages, step-major like the buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Returns {
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Discounted returns over a step-major rollout. A done flag at step t
/// stops bootstrapping past t. In GAE mode the returns are advantages plus
/// values.
pub fn compute_returns(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: &[f64],
    gamma: f64,
    mode: ReturnMode,
) -> Result<Returns> {
    let k = bootstrap.len();
    let n = rewards.len();
    if k == 0 || n % k != 0 || values.len() != n || dones.len() != n {
        return Err(Error::Shape(format!(
            "returns: {n} rewards, {} values, {} dones for {k} actors",
            values.len(),
            dones.len()
        )));
    }
    let steps = n / k;
    let mut returns = vec![0.0; n];
    let mut advantages = vec![0.0; n];
    for i in 0..k {
        let mut next_return = bootstrap[i];
        let mut next_value = bootstrap[i];
        let mut next_adv = 0.0;
        for t in (0..steps).rev() {
            let idx = t * k + i;
            let live = if dones[idx] { 0.0 } else { 1.0 };
            match mode {
                ReturnMode::NStep => {
                    next_return = rewards[idx] + gamma * live * next_return;
                    returns[idx] = next_return;
                    advantages[idx] = next_return - values[idx];
                }
                ReturnMode::Gae { lambda } => {
                    let delta = rewards[idx] + gamma * live * next_value - values[idx];
                    next_adv = delta + gamma * lambda * live * next_adv;
                    advantages[idx] = next_adv;
                    returns[idx] = next_adv + values[idx];
                    next_value = values[idx];
                }
            }
        }
    }
    Ok(Returns {
        returns,
        advantages,
    })
}
