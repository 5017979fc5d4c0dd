mod common;

use coex::abstraction::{AbstractState, ClusterSet, VisitCounter};
use coex::adm::{localize, Adm, AdmConfig, Normalizer};
use coex::eval::{adjusted_rand_index, localization_distance};
use coex::experiment::{ExperimentConfig, CONFIG_PRESETS};
use coex::pixelworld::{Frame, NUM_ACTIONS};
use ndcompute::Graph;
use ndcompute::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{pair_counting_ari, random_labelings};

#[test]
fn ari_matches_pair_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for (case, (a, b)) in random_labelings(&mut rng, 50).into_iter().enumerate() {
        let got = adjusted_rand_index(&a, &b).unwrap();
        let want = pair_counting_ari(&a, &b);
        assert!((got - want).abs() <= 1e-12, "case {case}: {got} vs {want}");
    }
}

fn labelings() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2usize..60).prop_flat_map(|n| (prop::collection::vec(0usize..5, n), prop::collection::vec(0usize..5, n)))
}

proptest! {
    #[test]
    fn ari_is_symmetric((a, b) in labelings()) {
        let ab = adjusted_rand_index(&a, &b).unwrap();
        let ba = adjusted_rand_index(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn ari_ignores_label_names((a, b) in labelings(), shift in 1usize..50, perm in Just([3usize, 0, 4, 1, 2])) {
        let base = adjusted_rand_index(&a, &b).unwrap();
        let a2: Vec<usize> = a.iter().map(|&x| perm[x] + shift).collect();
        let b2: Vec<usize> = b.iter().map(|&x| perm[(x + 2) % 5]).collect();
        prop_assert!((adjusted_rand_index(&a2, &b2).unwrap() - base).abs() <= 1e-12);
    }

    #[test]
    fn distance_is_a_metric(p in (0usize..20, 0usize..20), q in (0usize..20, 0usize..20), r in (0usize..20, 0usize..20)) {
        let d = localization_distance;
        prop_assert!(d(p, q) >= 0.0);
        prop_assert_eq!(d(p, q) == 0.0, p == q);
        prop_assert_eq!(d(p, q), d(q, p));
        prop_assert!(d(p, r) <= d(p, q) + d(q, r) + 1e-12);
    }

    #[test]
    fn clustering_invariants(points in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..60), tau in 0.2f64..3.0) {
        let mut set = ClusterSet::new(tau);
        let mut last = 0;
        for (i, p) in points.iter().enumerate() {
            let id = set.assign(p);
            prop_assert!(id < set.len());
            prop_assert!(set.len() >= last);
            last = set.len();
            let total: u64 = set.clusters().iter().map(|c| c.count).sum();
            prop_assert_eq!(total, i as u64 + 1);
        }
    }

    #[test]
    fn bonus_strictly_decreases_and_counts_are_exact(x in 0usize..9, y in 0usize..9, c in 0usize..4, k in 1u64..40) {
        let mut counter = VisitCounter::new();
        let psi = AbstractState::new(Some((x, y)), Some(c), Some(0.0));
        let mut prev = f64::INFINITY;
        for _ in 0..k {
            let b = counter.count_and_bonus(psi);
            prop_assert!(b < prev);
            prev = b;
        }
        prop_assert_eq!(counter.count(&psi), k);
    }

    #[test]
    fn policy_entropy_is_bounded(logits in prop::collection::vec(-30.0f64..30.0, NUM_ACTIONS)) {
        let mut g = Graph::new();
        let l = g.constant(Tensor::new(vec![1, NUM_ACTIONS], logits).unwrap());
        let p = g.softmax(l).unwrap();
        let h = g.entropy(p).unwrap();
        let h = g.value(h).data()[0];
        prop_assert!(h >= 0.0 && h <= (NUM_ACTIONS as f64).ln() + 1e-12);
    }

    #[test]
    fn config_round_trips(preset in 0usize..CONFIG_PRESETS.len(), seed in any::<u64>(), steps in 1u64..10_000_000, lr in 1e-6f64..1e-1) {
        let mut cfg = ExperimentConfig::preset(CONFIG_PRESETS[preset]).unwrap();
        cfg.seed = seed;
        cfg.total_steps = steps;
        cfg.trainer.optimizer.learning_rate = lr;
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.to_json(), cfg.to_json());
    }
}

fn random_frames(rng: &mut ChaCha8Rng, n: usize) -> Vec<Frame> {
    (0..n)
        .map(|_| {
            let mut f = Frame::zeros(36, 36, 3);
            for v in &mut f.data {
                *v = rng.random_range(-2.0..2.0);
            }
            f
        })
        .collect()
}

#[test]
fn attention_and_smoothed_attention_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for normalizer in [Normalizer::Sparsemax, Normalizer::Softmax] {
        for seed in 0..4 {
            let mut cfg = AdmConfig::small();
            cfg.normalizer = normalizer;
            let adm = Adm::new(cfg, [36, 36, 3], NUM_ACTIONS, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let frames = random_frames(&mut rng, 6);
            let refs: Vec<&Frame> = frames.iter().collect();
            let maps = adm.attention(&refs).unwrap();
            let mut smoothed = None;
            for m in &maps {
                let (_, s) = localize(m, smoothed.as_ref());
                for map in [m, &s] {
                    assert!(map.probs.iter().all(|&p| p >= 0.0));
                    assert!((map.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                }
                smoothed = Some(s);
            }
        }
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let cfg = ExperimentConfig::preset("four-rooms-coex").unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    v["trainer"]["gama"] = serde_json::json!(0.9);
    assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    let mut v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    v["extra"] = serde_json::json!(1);
    assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
}

#[test]
fn dotted_overrides_reach_any_leaf() {
    let cfg = ExperimentConfig::preset("four-rooms-coex").unwrap();
    let v = serde_json::to_value(&cfg).unwrap();
    let out = ExperimentConfig::from_value_with_overrides(
        v.clone(),
        &[
            "trainer.gamma=0.9".into(),
            "adm.model.normalizer=\"softmax\"".into(),
            "abstraction.psi.reward=false".into(),
            "name=renamed".into(),
        ],
    )
    .unwrap();
    assert_eq!(out.trainer.gamma, 0.9);
    assert_eq!(out.adm.model.normalizer, Normalizer::Softmax);
    assert!(!out.abstraction.psi.reward);
    assert_eq!(out.name, "renamed");
    assert!(ExperimentConfig::from_value_with_overrides(v.clone(), &["trainer.gama=0.9".into()]).is_err());
    assert!(ExperimentConfig::from_value_with_overrides(v, &["trainer".into()]).is_err());
}

#[test]
fn zero_step_budget_is_rejected() {
    let mut cfg = ExperimentConfig::preset("four-rooms-coex").unwrap();
    cfg.total_steps = 0;
    assert!(cfg.validate().is_err());
}
