use ehdl_core::model::{distortion_closed_form, distortion_recursive};
use ehdl_core::waterfill::{distortion_split, gamma_table};
use ehdl_core::{Scenario, TriMatrix};
use proptest::prelude::*;

fn scenario(k: usize, var: f64, rho: f64) -> Scenario {
    Scenario::new(1, vec![1.0; k], vec![1.0; k], var, rho).unwrap()
}

/// Posterior variance after each observation, computed independently of the
/// library: predict, then shrink by the rate of the fresh description.
fn hand_recursion(var: f64, rho: f64, rates: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut posterior = var;
    for (n, r) in rates.iter().enumerate() {
        let prior = if n == 0 { var } else { rho * posterior + (1.0 - rho) * var };
        posterior = prior / r.exp();
        out.push(posterior);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn closed_form_matches_recursion(
        rates in prop::collection::vec(0.0f64..6.0, 1..16),
        var in 0.1f64..5.0,
        rho in 0.0f64..=1.0,
    ) {
        let s = scenario(rates.len(), var, rho);
        let closed = distortion_closed_form(&s, &rates).unwrap();
        let rec = distortion_recursive(&s, &rates).unwrap();
        let hand = hand_recursion(var, rho, &rates);
        for i in 0..rates.len() {
            let scale = closed.per_source[i].abs().max(rec.per_source[i].abs());
            prop_assert!((closed.per_source[i] - rec.per_source[i]).abs() <= 1e-12 * scale);
            prop_assert!((closed.per_source[i] - hand[i]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn distortion_is_bounded_by_variance(
        rates in prop::collection::vec(0.0f64..6.0, 1..12),
        rho in 0.0f64..=1.0,
    ) {
        let s = scenario(rates.len(), 2.0, rho);
        let d = distortion_closed_form(&s, &rates).unwrap();
        for v in &d.per_source {
            prop_assert!(*v > 0.0 && *v <= 2.0);
        }
    }

    #[test]
    fn more_rate_never_hurts(
        rates in prop::collection::vec(0.0f64..4.0, 2..10),
        extra in 0.0f64..2.0,
        at in 0usize..10,
        rho in 0.0f64..=1.0,
    ) {
        let at = at % rates.len();
        let s = scenario(rates.len(), 1.0, rho);
        let base = distortion_closed_form(&s, &rates).unwrap();
        let mut more = rates.clone();
        more[at] += extra;
        let better = distortion_closed_form(&s, &more).unwrap();
        for i in 0..rates.len() {
            prop_assert!(better.per_source[i] <= base.per_source[i] * (1.0 + 1e-14));
        }
    }

    /// With levels far above every weight the split reproduces zero-rate
    /// distortion; with levels at `γ e^{-s}` it reproduces the closed form.
    #[test]
    fn split_matches_closed_form(
        rates in prop::collection::vec(0.0f64..4.0, 1..10),
        rho in 0.0f64..=1.0,
    ) {
        let k = rates.len();
        let s = scenario(k, 1.5, rho);
        let gamma = gamma_table(&s);
        let levels = TriMatrix::from_fn(k, |i, j| {
            gamma.get(i, j) * (-rates[j..=i].iter().sum::<f64>()).exp()
        });
        let split = distortion_split(&gamma, &levels).unwrap();
        let closed = distortion_closed_form(&s, &rates).unwrap();
        for i in 0..k {
            prop_assert!((split.per_source[i] - closed.per_source[i]).abs() <= 1e-12 * 1.5);
        }
        let high = distortion_split(&gamma, &TriMatrix::filled(k, 1e9)).unwrap();
        for v in &high.per_source {
            prop_assert!((v - 1.5).abs() <= 1e-12);
        }
    }
}

#[test]
fn zero_rates_return_the_variance_exactly() {
    for rho in [0.0, 0.3, 0.77, 1.0] {
        let s = scenario(10, 1.7, rho);
        let d = distortion_closed_form(&s, &[0.0; 10]).unwrap();
        assert!(d.per_source.iter().all(|v| *v == 1.7), "rho {rho}: {:?}", d.per_source);
    }
}
