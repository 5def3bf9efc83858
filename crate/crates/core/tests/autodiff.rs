mod common;

use common::{param_grad_error, random_config, tangent_errors, LOSS_KINDS};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tangents_match_five_point_differences(seed in any::<u64>()) {
        let errs = tangent_errors(&random_config(seed));
        for (name, e) in ["d/dt", "d/ds", "jvp"].iter().zip(errs) {
            prop_assert!(e <= 1e-5, "{name}: relative error {e:.3e}");
        }
    }

    #[test]
    fn parameter_gradients_match_directional_differences(seed in any::<u64>(), k in 0usize..LOSS_KINDS.len()) {
        let e = param_grad_error(LOSS_KINDS[k], seed);
        prop_assert!(e <= 1e-4, "{}: relative error {e:.3e}", LOSS_KINDS[k]);
    }
}

#[test]
fn every_loss_kind_is_checked_once() {
    for (i, kind) in LOSS_KINDS.iter().enumerate() {
        let e = param_grad_error(kind, 100 + i as u64);
        assert!(e <= 1e-4, "{kind}: relative error {e:.3e}");
    }
}
