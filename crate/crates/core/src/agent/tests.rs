use ndcompute::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::abstraction::{ClusterSet, Projector, PsiComponents, VisitCounter};
use crate::adm::{Adm, AdmConfig};
use crate::pixelworld::{preset, World, NUM_ACTIONS};

#[test]
fn uniform_logits_sample_uniformly() {
    let logits = Tensor::new(vec![10_000, NUM_ACTIONS], vec![0.0; 10_000 * NUM_ACTIONS]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (actions, log_probs) = sample_actions(&logits, &mut rng);
    let mut freq = [0usize; NUM_ACTIONS];
    for a in actions {
        freq[a] += 1;
    }
    for f in freq {
        assert!((f as f64 / 10_000.0 - 0.2).abs() < 0.05);
    }
    assert!(log_probs.iter().all(|lp| (lp - 0.2f64.ln()).abs() < 1e-9));
}

#[test]
fn saturated_logit_is_always_sampled() {
    let mut data = vec![0.0; 1000 * NUM_ACTIONS];
    for row in data.chunks_exact_mut(NUM_ACTIONS) {
        row[3] = 20.0;
    }
    let logits = Tensor::new(vec![1000, NUM_ACTIONS], data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (actions, _) = sample_actions(&logits, &mut rng);
    assert!(actions.iter().all(|&a| a == 3));
}

#[test]
fn log_prob_matches_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let policy = Policy::new(PolicyConfig::small(), [36, 36], NUM_ACTIONS, &mut rng).unwrap();
    let w = World::new(preset("corridor").unwrap()).unwrap();
    let actors: Vec<Actor> = (0..3).map(|i| Actor::new(&w, 1, i, 4)).collect();
    let mut data = Vec::new();
    for a in &actors {
        a.stack.write_into(&mut data);
    }
    let obs = Tensor::new(vec![3, 36, 36, 4], data).unwrap();
    let out = policy.act(obs.clone(), &mut rng).unwrap();
    let (logits, values) = policy.evaluate(obs).unwrap();
    assert_eq!(values, out.values);
    for (i, row) in logits.data().chunks_exact(NUM_ACTIONS).enumerate() {
        let mut p = [0.0; NUM_ACTIONS];
        ndcompute::kernels::softmax_row(row, &mut p);
        assert!((out.log_probs[i] - p[out.actions[i]].ln()).abs() < 1e-9);
    }
    assert!(policy.evaluate(Tensor::zeros(&[1, 36, 36, 3])).is_err());
}

#[test]
fn frame_stack_resets_to_copies() {
    let w = World::new(preset("corridor").unwrap()).unwrap();
    let (mut s, f0) = w.reset(0);
    let mut stack = FrameStack::new(4, &f0);
    let obs = stack.observation();
    assert_eq!(obs.len(), 36 * 36 * 4);
    assert!(obs.chunks_exact(4).all(|p| p.iter().all(|&v| v == p[0])));
    let f1 = w.step(&mut s, 2).unwrap().frame;
    stack.push(&f1);
    let obs = stack.observation();
    let g1 = f1.to_gray();
    for (p, &v) in obs.chunks_exact(4).zip(&g1.data) {
        assert_eq!(p[3], v);
    }
}

#[test]
fn returns_examples() {
    let r = compute_returns(&[1.0, 0.0], &[0.0, 0.0], &[false, false], &[2.0], 0.5, ReturnMode::NStep).unwrap();
    assert_eq!(r.returns[0], 1.5);
    let r = compute_returns(&[3.0, 1.0], &[0.0, 0.0], &[true, false], &[10.0], 0.9, ReturnMode::NStep).unwrap();
    assert_eq!(r.returns[0], 3.0);
    let r = compute_returns(&[3.0, -1.0, 2.0, 5.0], &[1.0; 4], &[false; 4], &[7.0, 7.0], 0.0, ReturnMode::NStep).unwrap();
    assert_eq!(r.returns, vec![3.0, -1.0, 2.0, 5.0]);
    // two actors interleaved step-major; the done of actor 1 at step 0 masks only it
    let r = compute_returns(&[1.0, 1.0, 1.0, 1.0], &[0.0; 4], &[false, true, false, false], &[4.0, 4.0], 0.5, ReturnMode::NStep)
        .unwrap();
    assert_eq!(r.returns, vec![1.0 + 0.5 * (1.0 + 0.5 * 4.0), 1.0, 3.0, 3.0]);
}

#[test]
fn gae_matches_hand_evaluation() {
    let (g, l) = (0.9, 0.8);
    let rewards = [1.0, 0.5, 2.0];
    let values = [0.3, -0.2, 0.7];
    let boot = 1.1;
    let r = compute_returns(&rewards, &values, &[false, false, false], &[boot], g, ReturnMode::Gae { lambda: l }).unwrap();
    let d2 = rewards[2] + g * boot - values[2];
    let d1 = rewards[1] + g * values[2] - values[1];
    let d0 = rewards[0] + g * values[1] - values[0];
    let a2 = d2;
    let a1 = d1 + g * l * a2;
    let a0 = d0 + g * l * a1;
    for (x, y) in r.advantages.iter().zip([a0, a1, a2]) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!((r.returns[0] - (a0 + values[0])).abs() < 1e-12);
    // lambda 1 with no terminals reduces to n-step advantages
    let gae = compute_returns(&rewards, &values, &[false; 3], &[boot], g, ReturnMode::Gae { lambda: 1.0 }).unwrap();
    let ns = compute_returns(&rewards, &values, &[false; 3], &[boot], g, ReturnMode::NStep).unwrap();
    for (x, y) in gae.advantages.iter().zip(&ns.advantages) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn shaping_examples() {
    assert_eq!(shape_reward(100.0, 0.5, 10.0, 10.0), 15.0);
    assert_eq!(shape_reward(-3.0, 0.0, 2.0, 1.0), -2.0);
    assert_eq!(shape_reward(7.0, 0.9, 0.0, 0.0), 0.0);
}

#[test]
fn advantage_normalization_moments() {
    let mut a = vec![3.0, -1.0, 4.0, 1.0, -5.0, 9.0, 2.0];
    normalize_advantages(&mut a);
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    assert!(mean.abs() < 1e-9);
    assert!((var - 1.0).abs() < 1e-9);
}

#[test]
fn reward_normalizer_scales_by_return_std() {
    let mut n = RewardNormalizer::new(1, 0.99);
    assert_eq!(n.normalize(0, 1.0, false), 1.0 / (1.0 + 1e-8));
    for _ in 0..100 {
        n.normalize(0, 1.0, false);
    }
    assert!(n.std() > 0.0);
    let scaled = n.normalize(0, 2.0, true);
    assert!((scaled - 2.0 / (n.std() + 1e-8)).abs() < 1e-12);
}

fn tiny_setup(k: usize) -> (World, Vec<Actor>, Policy, TrainerConfig) {
    let w = World::new(preset("corridor").unwrap()).unwrap();
    let actors: Vec<Actor> = (0..k).map(|i| Actor::new(&w, 5, i, 4)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let policy = Policy::new(PolicyConfig::small(), [36, 36], NUM_ACTIONS, &mut rng).unwrap();
    (w, actors, policy, TrainerConfig::a2c())
}

fn explorer(with_adm: bool) -> Explorer {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    Explorer {
        adm: with_adm.then(|| Adm::new(AdmConfig::small(), [36, 36, 3], NUM_ACTIONS, &mut rng).unwrap()),
        projector: Some(Projector::new(3, [18, 18, 3], 64)),
        clusters: Some(ClusterSet::new(1.0)),
        counter: VisitCounter::new(),
        psi: PsiComponents::default(),
    }
}

#[test]
fn rollout_has_actors_times_steps_transitions() {
    let (w, mut actors, policy, cfg) = tiny_setup(16);
    let mut ex = explorer(true);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = collect_rollout(&w, &mut actors, &policy, &mut ex, &cfg, None, &mut rng, false).unwrap();
    assert_eq!(r.buffer.len(), 80);
    assert!(r.buffer.is_complete());
    assert_eq!(r.adm_batch.len(), 80);
    assert_eq!(r.stats.distances.len(), 80);
    assert!(r.adm_batch.validate(NUM_ACTIONS).is_ok());
}

#[test]
fn zero_bonus_weight_leaves_clipped_external_reward() {
    let w = World::new(preset("key-door").unwrap()).unwrap();
    let mut actors: Vec<Actor> = (0..4).map(|i| Actor::new(&w, 2, i, 4)).collect();
    // put actor 0 next to the key so one reward lands inside the rollout
    actors[0].state.avatar = crate::pixelworld::Cell::new(1, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let policy = Policy::new(PolicyConfig::small(), [36, 36], NUM_ACTIONS, &mut rng).unwrap();
    let mut cfg = TrainerConfig::a2c();
    cfg.algorithm = Algorithm::Random;
    cfg.beta_ext = 3.0;
    cfg.beta_bonus = 0.0;
    cfg.rollout = 40;
    let mut ex = explorer(false);
    let r = collect_rollout(&w, &mut actors, &policy, &mut ex, &cfg, None, &mut rng, false).unwrap();
    for (s, e) in r.buffer.rewards.iter().zip(&r.buffer.ext_rewards) {
        assert_eq!(*s, 3.0 * e.clamp(-1.0, 1.0));
    }
}

#[test]
fn rollouts_are_deterministic() {
    let run = || {
        let (w, mut actors, policy, cfg) = tiny_setup(3);
        let mut ex = explorer(true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::new();
        for _ in 0..3 {
            out.push(collect_rollout(&w, &mut actors, &policy, &mut ex, &cfg, None, &mut rng, false).unwrap().buffer);
        }
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn a2c_entropy_of_uniform_policy() {
    let (w, actors, mut policy, cfg) = tiny_setup(2);
    let p = policy.params_mut();
    for name in ["policy.logits.fc0.weight", "policy.logits.fc0.bias"] {
        let id = p.id(name).unwrap();
        p.value_mut(id).data_mut().fill(0.0);
    }
    let _ = w;
    let mut data = Vec::new();
    for a in &actors {
        a.stack.write_into(&mut data);
    }
    let obs = Tensor::new(vec![2, 36, 36, 4], data).unwrap();
    let mut g = Graph::new();
    let n = a2c_loss(&mut g, &policy, policy.params(), obs, &[0, 1], &[0.0, 0.0], &[0.0, 0.0], cfg.entropy_coef, cfg.value_coef)
        .unwrap();
    assert!((g.value(n.entropy).item() - 5f64.ln()).abs() < 1e-9);
}

#[test]
fn zero_advantage_and_entropy_weight_leave_the_policy_head_untouched() {
    let (_, actors, policy, _) = tiny_setup(2);
    let mut data = Vec::new();
    for a in &actors {
        a.stack.write_into(&mut data);
    }
    let obs = Tensor::new(vec![2, 36, 36, 4], data).unwrap();
    let mut params = policy.params().clone();
    let mut g = Graph::new();
    let n = a2c_loss(&mut g, &policy, &params, obs, &[0, 3], &[0.5, -0.5], &[0.0, 0.0], 0.0, 0.25).unwrap();
    g.gradients(n.total, &mut params).unwrap();
    for name in ["policy.logits.fc0.weight", "policy.logits.fc0.bias"] {
        assert!(params.grad(params.id(name).unwrap()).data().iter().all(|&v| v == 0.0));
    }
}

fn ppo_fixture() -> (Policy, RolloutBuffer, Returns, TrainerConfig) {
    let (w, mut actors, policy, mut cfg) = tiny_setup(4);
    cfg.algorithm = Algorithm::Ppo;
    cfg.rollout = 4;
    cfg.minibatches = 1;
    cfg.epochs = 1;
    let mut ex = explorer(false);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let r = collect_rollout(&w, &mut actors, &policy, &mut ex, &cfg, None, &mut rng, false).unwrap();
    let b = r.buffer;
    let ret = compute_returns(&b.rewards, &b.values, &b.dones, &b.bootstrap, 0.99, cfg.return_mode()).unwrap();
    let mut ret = ret;
    // alternate signs so both clipping branches occur
    for (i, a) in ret.advantages.iter_mut().enumerate() {
        *a = if i % 2 == 0 { 1.0 + i as f64 * 0.1 } else { -1.0 - i as f64 * 0.1 };
    }
    (policy, b, ret, cfg)
}

#[test]
fn ppo_ratio_identity_at_old_parameters() {
    let (policy, b, ret, cfg) = ppo_fixture();
    let all: Vec<usize> = (0..b.len()).collect();
    let mut g = Graph::new();
    let n = ppo_loss(&mut g, &policy, policy.params(), b.observation_batch(&all), &b.actions, &b.log_probs, &ret.returns, &ret.advantages, &cfg)
        .unwrap();
    let mean_adv = ret.advantages.iter().sum::<f64>() / ret.advantages.len() as f64;
    assert!((g.value(n.policy).item() + mean_adv).abs() < 1e-12);
}

#[test]
fn zero_clip_blocks_ratio_gradient_once_moved_with_the_advantage() {
    let (mut policy, b, ret, mut cfg) = ppo_fixture();
    cfg.clip_eps = 0.0;
    cfg.entropy_coef = 0.0;
    cfg.value_coef = 0.0;
    cfg.normalize_advantages = false;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    ppo_update(&mut policy, &b, &ret, &cfg, &mut rng).unwrap();
    // per-sample gradients after the first step
    let all: Vec<usize> = (0..b.len()).collect();
    let (logits, _) = policy.evaluate(b.observation_batch(&all)).unwrap();
    let mut seen = [0, 0];
    for i in 0..b.len() {
        let row = &logits.data()[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
        let ratio = (row[b.actions[i]] - ndcompute::kernels::log_sum_exp(row) - b.log_probs[i]).exp();
        let mut params = policy.params().clone();
        let mut g = Graph::new();
        let n = ppo_loss(&mut g, &policy, &params, b.observation_batch(&[i]), &[b.actions[i]], &[b.log_probs[i]], &[ret.returns[i]], &[ret.advantages[i]], &cfg)
            .unwrap();
        g.gradients(n.total, &mut params).unwrap();
        let clipped = (ratio - 1.0) * ret.advantages[i] > 0.0;
        if clipped {
            assert_eq!(params.grad_norm(), 0.0, "sample {i}, ratio {ratio}");
            seen[0] += 1;
        } else if ratio != 1.0 {
            // moved against the advantage: the unclipped branch is active
            assert!(params.grad_norm() > 0.0);
            seen[1] += 1;
        }
    }
    assert!(seen[0] > 0 && seen[1] > 0, "{seen:?}");
}
