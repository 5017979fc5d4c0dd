//! Full training losses against central finite differences.

mod common;

use coex::adm::{LossTerms, Normalizer};
use common::{a2c_relative_error, adm_relative_error, ppo_relative_error, TOL};

#[test]
fn dynamics_model_loss_with_every_term() {
    let all = LossTerms { cell: true, entropy: true };
    for (normalizer, seed) in [(Normalizer::Sparsemax, 1), (Normalizer::Softmax, 2), (Normalizer::Sparsemax, 3)] {
        let err = adm_relative_error(normalizer, all, seed);
        assert!(err <= TOL, "{normalizer:?} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn dynamics_model_loss_ablations() {
    for losses in LossTerms::ABLATION {
        let err = adm_relative_error(Normalizer::Softmax, losses, 5);
        assert!(err <= TOL, "{}: relative error {err:e}", losses.label());
    }
}

#[test]
fn actor_critic_loss() {
    for seed in [11, 12] {
        let err = a2c_relative_error(seed);
        assert!(err <= TOL, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn clipped_surrogate_loss() {
    let err = ppo_relative_error(21);
    assert!(err <= TOL, "relative error {err:e}");
}
