//! Finite-difference and pair-counting oracles shared by the test targets.
#![allow(dead_code)]

use coex::adm::{Adm, AdmBatch, AdmConfig, LossTerms, Normalizer, Transition};
use coex::agent::{a2c_loss, ppo_loss, Policy, PolicyConfig, TrainerConfig};
use coex::pixelworld::{Frame, NUM_ACTIONS};
use ndcompute::testing::{check_param_gradients, max_relative_error, numeric_param_gradients};
use ndcompute::{ParameterSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn random_frame(rng: &mut ChaCha8Rng, side: usize) -> Frame {
    let mut f = Frame::zeros(side, side, 3);
    for v in &mut f.data {
        *v = rng.random_range(0.0..1.0);
    }
    f
}

fn tiny_adm(normalizer: Normalizer, losses: LossTerms, seed: u64) -> (Adm, AdmBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = AdmConfig::small();
    cfg.normalizer = normalizer;
    cfg.losses = losses;
    cfg.action_hidden = vec![6];
    cfg.attention_hidden = vec![5];
    // a larger weight makes the entropy term visible next to the others
    cfg.entropy_weight = 0.3;
    let adm = Adm::new(cfg, [8, 8, 3], NUM_ACTIONS, &mut rng).unwrap();
    let mut batch = AdmBatch::default();
    for _ in 0..3 {
        batch.push_frame(random_frame(&mut rng, 8), 7);
    }
    batch.transitions = vec![
        Transition { prev: 0, cur: 1, action: 2 },
        Transition { prev: 1, cur: 2, action: 4 },
    ];
    (adm, batch)
}

pub fn adm_relative_error(normalizer: Normalizer, losses: LossTerms, seed: u64) -> f64 {
    let (mut adm, batch) = tiny_adm(normalizer, losses, seed);
    adm.backward(&batch).unwrap();
    let p = adm.params();
    let analytic: Vec<Vec<f64>> = p.ids().map(|id| p.grad(id).data().to_vec()).collect();
    let mut params = adm.params().clone();
    let mut probe = adm.clone();
    let numeric = numeric_param_gradients(&mut params, H, |p: &ParameterSet| {
        probe.params_mut().load_values_from(p)?;
        Ok(probe.loss(&batch).expect("loss evaluates").total)
    })
    .unwrap();
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| max_relative_error(a, n, FLOOR))
        .fold(0.0, f64::max)
}


fn tiny_policy(seed: u64) -> (Policy, Tensor, Vec<usize>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = PolicyConfig {
        hidden: 8,
        ..PolicyConfig::small()
    };
    let policy = Policy::new(cfg, [12, 12], NUM_ACTIONS, &mut rng).unwrap();
    let b = 4;
    let data = (0..b * 12 * 12 * 4).map(|_| rng.random_range(0.0..1.0)).collect();
    let obs = Tensor::new(vec![b, 12, 12, 4], data).unwrap();
    let actions = (0..b).map(|_| rng.random_range(0..NUM_ACTIONS)).collect();
    (policy, obs, actions, rng)
}

/// Worst relative error of the actor-critic loss gradient.
pub fn a2c_relative_error(seed: u64) -> f64 {
    let (policy, obs, actions, mut rng) = tiny_policy(seed);
    let returns: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let adv: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut params = policy.params().clone();
    check_param_gradients(&mut params, H, FLOOR, |g, p| {
        Ok(a2c_loss(g, &policy, p, obs.clone(), &actions, &returns, &adv, 0.05, 0.25).unwrap().total)
    })
    .unwrap()
}

/// Worst relative error of the clipped-surrogate loss gradient, with some
/// ratios outside the clip range and none on its boundary.
pub fn ppo_relative_error(seed: u64) -> f64 {
    let (policy, obs, actions, mut rng) = tiny_policy(seed);
    let (logits, _) = policy.evaluate(obs.clone()).unwrap();
    let old: Vec<f64> = actions
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let row = &logits.data()[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
            let logp = row[a] - ndcompute::kernels::log_sum_exp(row);
            logp + [0.35, -0.05, -0.4, 0.1][i]
        })
        .collect();
    let returns: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let adv = vec![1.0, -0.5, 0.8, -1.2];
    let cfg = TrainerConfig {
        clip_eps: 0.2,
        ..TrainerConfig::ppo()
    };
    let mut params = policy.params().clone();
    check_param_gradients(&mut params, H, FLOOR, |g, p| {
        Ok(ppo_loss(g, &policy, p, obs.clone(), &actions, &old, &returns, &adv, &cfg).unwrap().total)
    })
    .unwrap()
}

/// ARI from raw pair counts over all i < j.
pub fn pair_counting_ari(a: &[usize], b: &[usize]) -> f64 {
    let (mut both, mut only_a, mut only_b, mut neither) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let den = (both + only_a) * (only_a + neither) + (both + only_b) * (only_b + neither);
    if den == 0.0 {
        return 1.0;
    }
    2.0 * (both * neither - only_a * only_b) / den
}

/// Random labelings for the ARI oracle; half are noisy copies so high
/// agreement is covered.
pub fn random_labelings(rng: &mut ChaCha8Rng, count: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    (0..count)
        .map(|case| {
            let n = rng.random_range(2..120);
            let ka = rng.random_range(1..7);
            let kb = rng.random_range(1..7);
            let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..ka)).collect();
            let b: Vec<usize> = if case % 2 == 0 {
                a.iter()
                    .map(|&x| if rng.random_bool(0.2) { rng.random_range(0..kb) } else { x })
                    .collect()
            } else {
                (0..n).map(|_| rng.random_range(0..kb)).collect()
            };
            (a, b)
        })
        .collect()
}
