use ndcompute::{optimizer_step, Graph, ParameterSet, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{Returns, RolloutBuffer};
use super::config::TrainerConfig;
use super::policy::Policy;
use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateMetrics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// `β_ext · clip(r_ext, −1, 1) + β_bonus · r⁺`.
pub fn shape_reward(r_ext: f64, r_plus: f64, beta_ext: f64, beta_bonus: f64) -> f64 {
    beta_ext * r_ext.clamp(-1.0, 1.0) + beta_bonus * r_plus
}

/// Divides rewards by a running standard deviation of the discounted
/// return of each actor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardNormalizer {
    gamma: f64,
    running: Vec<f64>,
    count: f64,
    mean: f64,
    m2: f64,
}

impl RewardNormalizer {
    pub fn new(actors: usize, gamma: f64) -> Self {
        Self {
            gamma,
            running: vec![0.0; actors],
            count: 0.0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / self.count).sqrt()
        }
    }

    /// Updates the return statistics of `actor` with `reward` and returns
    /// the normalized reward.
    pub fn normalize(&mut self, actor: usize, reward: f64, done: bool) -> f64 {
        let ret = self.running[actor] * self.gamma + reward;
        self.running[actor] = if done { 0.0 } else { ret };
        self.count += 1.0;
        let delta = ret - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (ret - self.mean);
        reward / (self.std() + 1e-8)
    }
}

/// Zero mean, unit (population) variance; constant inputs map to zeros.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 0.0 { (*a - mean) / std } else { 0.0 };
    }
}

/// Loss nodes of one actor-critic objective evaluation.
pub struct LossNodes {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
}

fn entropy_and_logp(g: &mut Graph, logits: Var, actions: &[usize]) -> Result<(Var, Var)> {
    let log_p = g.log_softmax(logits)?;
    let logp_a = g.gather(log_p, actions.to_vec())?;
    let probs = g.softmax(logits)?;
    let h = g.entropy(probs)?;
    let mean_h = g.mean(h)?;
    Ok((mean_h, logp_a))
}

fn value_term(g: &mut Graph, values: Var, returns: &[f64], coef: f64) -> Result<Var> {
    let r = g.constant(Tensor::vector(returns.to_vec()));
    let d = g.sub(values, r)?;
    let sq = g.square(d)?;
    let m = g.mean(sq)?;
    Ok(g.scale(m, coef)?)
}

/// `mean[−log π(a|s)·A − α·H(π) + c_v·(V − R)²]` with the advantages as
/// constants.
pub fn a2c_loss(
    g: &mut Graph,
    policy: &Policy,
    params: &ParameterSet,
    obs: Tensor,
    actions: &[usize],
    returns: &[f64],
    advantages: &[f64],
    entropy_coef: f64,
    value_coef: f64,
) -> Result<LossNodes> {
    let nodes = policy.build_with(g, params, obs)?;
    let (entropy, logp_a) = entropy_and_logp(g, nodes.logits, actions)?;
    let adv = g.constant(Tensor::vector(advantages.to_vec()));
    let weighted = g.mul(logp_a, adv)?;
    let mean_w = g.mean(weighted)?;
    let policy_loss = g.scale(mean_w, -1.0)?;
    let value = value_term(g, nodes.values, returns, value_coef)?;
    let ent = g.scale(entropy, -entropy_coef)?;
    let total = g.add(policy_loss, value)?;
    let total = g.add(total, ent)?;
    Ok(LossNodes {
        total,
        policy: policy_loss,
        value,
        entropy,
    })
}

/// Clipped-surrogate objective: `−mean[min(ρ·A, clip(ρ, 1−ε, 1+ε)·A)]`
/// plus the value and entropy terms.
pub fn ppo_loss(
    g: &mut Graph,
    policy: &Policy,
    params: &ParameterSet,
    obs: Tensor,
    actions: &[usize],
    old_log_probs: &[f64],
    returns: &[f64],
    advantages: &[f64],
    cfg: &TrainerConfig,
) -> Result<LossNodes> {
    let nodes = policy.build_with(g, params, obs)?;
    let (entropy, logp_a) = entropy_and_logp(g, nodes.logits, actions)?;
    let old = g.constant(Tensor::vector(old_log_probs.to_vec()));
    let diff = g.sub(logp_a, old)?;
    let ratio = g.exp(diff)?;
    let adv = g.constant(Tensor::vector(advantages.to_vec()));
    let surr = g.mul(ratio, adv)?;
    let clipped = g.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)?;
    let surr_clipped = g.mul(clipped, adv)?;
    let m = g.minimum(surr, surr_clipped)?;
    let mean_m = g.mean(m)?;
    let policy_loss = g.scale(mean_m, -1.0)?;
    let value = value_term(g, nodes.values, returns, cfg.value_coef)?;
    let ent = g.scale(entropy, -cfg.entropy_coef)?;
    let total = g.add(policy_loss, value)?;
    let total = g.add(total, ent)?;
    Ok(LossNodes {
        total,
        policy: policy_loss,
        value,
        entropy,
    })
}

fn read(g: &Graph, n: &LossNodes) -> UpdateMetrics {
    UpdateMetrics {
        policy_loss: g.value(n.policy).item(),
        value_loss: g.value(n.value).item(),
        entropy: g.value(n.entropy).item(),
    }
}

/// One optimizer step on the whole rollout. Metrics describe the
/// parameters before the step.
pub fn a2c_update(policy: &mut Policy, buffer: &RolloutBuffer, returns: &Returns, cfg: &TrainerConfig) -> Result<UpdateMetrics> {
    let all: Vec<usize> = (0..buffer.len()).collect();
    let mut g = Graph::new();
    let nodes = a2c_loss(
        &mut g,
        policy,
        policy.params(),
        buffer.observation_batch(&all),
        &buffer.actions,
        &returns.returns,
        &returns.advantages,
        cfg.entropy_coef,
        cfg.value_coef,
    )?;
    let metrics = read(&g, &nodes);
    g.gradients(nodes.total, policy.params_mut())?;
    optimizer_step(policy.params_mut(), &cfg.optimizer.to_config())?;
    Ok(metrics)
}

/// Epochs of shuffled minibatch steps; metrics are averaged over steps.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    buffer: &RolloutBuffer,
    returns: &Returns,
    cfg: &TrainerConfig,
    rng: &mut R,
) -> Result<UpdateMetrics> {
    let mut advantages = returns.advantages.clone();
    if cfg.normalize_advantages {
        normalize_advantages(&mut advantages);
    }
    let n = buffer.len();
    let size = n / cfg.minibatches;
    let mut order: Vec<usize> = (0..n).collect();
    let mut sum = UpdateMetrics::default();
    let mut count = 0.0;
    let opt = cfg.optimizer.to_config();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for mb in 0..cfg.minibatches {
            let idx = &order[mb * size..if mb + 1 == cfg.minibatches { n } else { (mb + 1) * size }];
            let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
            let actions: Vec<usize> = idx.iter().map(|&i| buffer.actions[i]).collect();
            let mut g = Graph::new();
            let nodes = ppo_loss(
                &mut g,
                policy,
                policy.params(),
                buffer.observation_batch(idx),
                &actions,
                &pick(&buffer.log_probs),
                &pick(&returns.returns),
                &pick(&advantages),
                cfg,
            )?;
            let m = read(&g, &nodes);
            sum.policy_loss += m.policy_loss;
            sum.value_loss += m.value_loss;
            sum.entropy += m.entropy;
            count += 1.0;
            g.gradients(nodes.total, policy.params_mut())?;
            optimizer_step(policy.params_mut(), &opt)?;
        }
    }
    Ok(UpdateMetrics {
        policy_loss: sum.policy_loss / count,
        value_loss: sum.value_loss / count,
        entropy: sum.entropy / count,
    })
}
