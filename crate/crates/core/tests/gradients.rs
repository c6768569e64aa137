//! Analytic gradients against central finite differences on small random
//! networks, for every loss.

#[path = "support/gradient_cases.rs"]
mod cases;

use cases::{dense_case, gru_step_case, model_case, suite, Loss, TOL};
use loadcast_core::models::ModelKind;
use loadcast_core::nn::Activation;
use proptest::prelude::*;

#[test]
fn every_component_and_loss_matches_finite_differences() {
    let results = suite();
    assert!(results.len() >= 20);
    for (name, err) in &results {
        assert!(*err < TOL, "{name}: max relative error {err:e}");
    }
}

#[test]
fn feedback_path_carries_gradient() {
    // A seq2seq whose second prediction depends on the first only through
    // the fed-back value still checks out.
    for seed in 0..3 {
        let err = model_case(1000 + seed, Loss::Quadratic, ModelKind::Seq2Seq);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_dense_layers_check_out(seed in 0u64..10_000) {
        prop_assert!(dense_case(seed, Loss::Quadratic, Activation::Tanh) < TOL);
    }

    #[test]
    fn random_gru_steps_check_out(seed in 0u64..10_000) {
        prop_assert!(gru_step_case(seed, Loss::Ssmape) < TOL);
    }
}
