//! Property tests for the structural invariants: norm monotonicity, kernel
//! algebra, Metropolis stationarity/reversibility, and the closed-form
//! bounds of the constant chain.

use proptest::prelude::*;

use seqmc_core::measures::{
    metropolis_kernel, MarkovKernel, ProbMeasure, StateFunction,
};
use seqmc_core::stability::delta_p;

fn prob_measure(size: usize) -> impl Strategy<Value = ProbMeasure> {
    proptest::collection::vec(0.05f64..1.0, size)
        .prop_map(|w| ProbMeasure::from_unnormalized(w).unwrap())
}

fn state_function(size: usize) -> impl Strategy<Value = StateFunction> {
    proptest::collection::vec(-5.0f64..5.0, size)
        .prop_map(|v| StateFunction::new(v).unwrap())
}

fn markov_kernel(size: usize) -> impl Strategy<Value = MarkovKernel> {
    proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, size), size).prop_map(
        |rows| {
            let rows = rows
                .into_iter()
                .map(|row| {
                    let sum: f64 = row.iter().sum();
                    let mut row: Vec<f64> = row.into_iter().map(|v| v / sum).collect();
                    let sum2: f64 = row.iter().sum();
                    for v in &mut row {
                        *v /= sum2;
                    }
                    row
                })
                .collect();
            MarkovKernel::from_rows(rows).unwrap()
        },
    )
}

proptest! {
    #[test]
    fn lp_norm_non_decreasing_in_p(
        mu in prob_measure(5),
        f in state_function(5),
    ) {
        let mut last = 0.0;
        for p in [1.0, 2.0, 4.0, 8.0] {
            let norm = mu.lp_norm(&f, p).unwrap();
            prop_assert!(norm + 1e-12 >= last, "||f||_{p} = {norm} < {last}");
            last = norm;
        }
    }

    #[test]
    fn kernel_apply_preserves_constants(
        k in markov_kernel(4),
        c in -10.0f64..10.0,
    ) {
        let constant = StateFunction::constant(4, c);
        let image = k.apply(&constant).unwrap();
        for x in 0..4 {
            prop_assert!((image.value(x) - c).abs() <= 1e-12 * c.abs().max(1.0));
        }
    }

    #[test]
    fn kernel_power_is_multiplicative(
        k in markov_kernel(3),
        s in 1usize..5,
        t in 1usize..5,
    ) {
        let combined = k.power(s + t);
        let split = k.power(s).matrix().mul(k.power(t).matrix());
        prop_assert!(combined.matrix().max_abs_diff(&split) <= 1e-10);
    }

    #[test]
    fn variance_is_shift_invariant(
        mu in prob_measure(4),
        f in state_function(4),
        c in -100.0f64..100.0,
    ) {
        let v0 = mu.variance(&f).unwrap();
        let v1 = mu.variance(&f.add_scalar(c)).unwrap();
        prop_assert!((v0 - v1).abs() <= 1e-10 * v0.max(1.0));
    }

    #[test]
    fn delta_p_product_stays_below_closed_form(
        alpha in 0.0f64..0.9,
        gamma in 1.0f64..2.5,
        r in 1u32..4,
    ) {
        let p = 1u32 << r;
        if alpha * gamma.powf(p as f64 - 2.0) < 1.0 {
            let d = delta_p(alpha, gamma, p).unwrap();
            prop_assert!(d.value <= d.closed_form_bound * (1.0 + 1e-12));
            prop_assert!(d.value >= 1.0 - 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    // The Metropolis construction is stationary and reversible for its
    // target across 1000 random (target, proposal) fixtures.
    #[test]
    fn metropolis_stationary_and_reversible(
        target in prob_measure(5),
        proposal in markov_kernel(5),
    ) {
        let k = metropolis_kernel(&target, &proposal).unwrap();
        prop_assert!(k.is_stationary_for(&target, 1e-12).unwrap());
        prop_assert!(k.is_reversible_for(&target, 1e-12).unwrap());
    }
}
