//! Property tests for the two symmetries the code promises to hold
//! exactly, not merely to floating tolerance.

use mortgap::dist::log_skellam_pmf;
use mortgap::eval::{dm_test, DmOutcome};
use proptest::prelude::*;

proptest! {
    /// Negating the gap while swapping the two rates is the same
    /// distribution; the kernel promises the identity bit for bit.
    #[test]
    fn skellam_swap_symmetry_is_bit_exact(
        z in -60i64..=60,
        lambda1 in 0.5f64..80.0,
        lambda2 in 0.5f64..80.0,
    ) {
        let forward = log_skellam_pmf(z, lambda1, lambda2).unwrap();
        let swapped = log_skellam_pmf(-z, lambda2, lambda1).unwrap();
        prop_assert_eq!(forward.to_bits(), swapped.to_bits());
    }

    /// Swapping the two error series negates the statistic exactly (and
    /// the mean differential of a degenerate comparison likewise).
    #[test]
    fn dm_test_is_exactly_antisymmetric(
        pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..20),
    ) {
        let (e1, e2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        match (dm_test(&e1, &e2).unwrap(), dm_test(&e2, &e1).unwrap()) {
            (
                DmOutcome::Computed { statistic: s12, .. },
                DmOutcome::Computed { statistic: s21, .. },
            ) => prop_assert_eq!(s12, -s21),
            (
                DmOutcome::Degenerate { mean_differential: d12 },
                DmOutcome::Degenerate { mean_differential: d21 },
            ) => prop_assert_eq!(d12, -d21),
            _ => prop_assert!(false, "outcomes disagree under swapping"),
        }
    }
}
