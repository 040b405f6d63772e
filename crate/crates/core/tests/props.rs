//! Property tests over randomized parameters.

use probesim::analytic::{
    candidate_comp_exit_prob, eta, fn_rate, fn_rate_failures, fp_rate, fp_rate_failures,
    p_cxc_phase1, psi, shrewd_comp_exit_prob, ModelParams,
};
use proptest::prelude::*;

prop_compose! {
    fn detection_shape()(n in 4u32..=12)(
        n in Just(n),
        k in 1u32..n,
    ) -> (u32, u32) { (n, k) }
}

fn params_at(t: f64, g: f64, f: f64, n: u32, k: u32, th: u32) -> ModelParams {
    ModelParams { t, g, f, d: 1.0, n, k, th }
}

proptest! {
    // the failure-aware mixture is cubic in N; keep its sweep small
    #![proptest_config(ProptestConfig::with_cases(16))]

    // raising the acceptance threshold can only reject more: FN falls,
    // FP rises, in both the clean and the failure-aware model
    #[test]
    fn threshold_monotonicity(
        t in 0.02f64..0.6,
        g in 0.01f64..0.99,
        f in 0.0f64..0.5,
        (n, k) in detection_shape(),
    ) {
        let mut prev_fn = f64::INFINITY;
        let mut prev_fp = -f64::INFINITY;
        for th in 1..=k {
            let p = params_at(t, g, f, n, k, th);
            let fnr = fn_rate_failures(&p).unwrap();
            let fpr = fp_rate_failures(&p).unwrap();
            prop_assert!(fnr <= prev_fn + 1e-12, "FN rose at Th={th}");
            prop_assert!(fpr >= prev_fp - 1e-12, "FP fell at Th={th}");
            prev_fn = fnr;
            prev_fp = fpr;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // the failure-aware mixture must collapse to the clean model at f = 0
    #[test]
    fn failure_model_reduces_when_f_is_zero(
        t in 0.02f64..0.6,
        g in 0.01f64..0.99,
        (n, k) in detection_shape(),
    ) {
        let th = 1 + k / 2;
        let th = th.min(k);
        let clean = params_at(t, g, 0.0, n, k, th);
        prop_assert!((fn_rate_failures(&clean).unwrap() - fn_rate(&clean).unwrap()).abs() < 1e-12);
        prop_assert!((fp_rate_failures(&clean).unwrap() - fp_rate(&clean).unwrap()).abs() < 1e-12);
    }

    // security is a probability and overhead counts at least one
    // construction per usable circuit
    #[test]
    fn security_and_overhead_stay_in_range(
        t in 0.02f64..0.6,
        g in 0.01f64..0.99,
        f in 0.0f64..0.5,
        (n, k) in detection_shape(),
    ) {
        let th = (k / 2).max(1);
        let p = params_at(t, g, f, n, k, th);
        let security = psi(&p).unwrap();
        let overhead = eta(&p).unwrap();
        prop_assert!((0.0..=1.0).contains(&security), "psi={security}");
        prop_assert!(overhead >= 1.0 - 1e-12, "eta={overhead}");
    }

    // with no dropping the candidate pool mirrors raw exit compromise;
    // with full dropping it mirrors the working-circuit rate
    #[test]
    fn candidate_pool_endpoints(t in 0.02f64..0.6, g in 0.01f64..0.99) {
        let at_zero = candidate_comp_exit_prob(t, g, 0.0).unwrap();
        prop_assert!((at_zero - t).abs() < 1e-12);
        let at_one = candidate_comp_exit_prob(t, g, 1.0).unwrap();
        let p = p_cxc_phase1(t, g).unwrap();
        prop_assert!((at_one - p).abs() < 1e-12);
    }

    // sparing compromised-exit circuits can only enrich the candidate
    // pool in compromised exits
    #[test]
    fn shrewd_never_trails_simple(
        t in 0.02f64..0.6,
        g in 0.01f64..0.99,
        d in 0.0f64..=1.0,
    ) {
        let simple = candidate_comp_exit_prob(t, g, d).unwrap();
        let shrewd = shrewd_comp_exit_prob(t, g, d).unwrap();
        prop_assert!(shrewd >= simple - 1e-12, "shrewd={shrewd} simple={simple}");
    }

    // more candidates at a fixed threshold only helps a compromised
    // circuit find allies and an honest one find peers
    #[test]
    fn wider_candidate_pool_helps_both_sides(
        t in 0.02f64..0.6,
        g in 0.01f64..0.99,
        n in 5u32..=12,
    ) {
        let mut prev_fn = -f64::INFINITY;
        let mut prev_fp = f64::INFINITY;
        for k in 1..n {
            let p = params_at(t, g, 0.0, n, k, 1);
            let fnr = fn_rate(&p).unwrap();
            let fpr = fp_rate(&p).unwrap();
            prop_assert!(fnr >= prev_fn - 1e-12);
            prop_assert!(fpr <= prev_fp + 1e-12);
            prev_fn = fnr;
            prev_fp = fpr;
        }
    }
}
