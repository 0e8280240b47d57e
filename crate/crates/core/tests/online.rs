use ehdl_core::model::check_feasibility;
use ehdl_core::online::{myopic_online_policy, poisson_trace, ArrivalTrace};
use ehdl_core::{solve_delay_constrained, solve_delay_tolerant, Scenario, SolveOptions};
use proptest::prelude::*;

fn template(rho: f64, d: usize) -> Scenario {
    Scenario::paper_profile(rho, d).unwrap()
}

#[test]
fn online_never_beats_offline() {
    let opts = SolveOptions::default();
    for d in [1, 10] {
        let t = template(0.2, d);
        for seed in 0..10 {
            let trace = poisson_trace(1.0, 10, seed, 1.0).unwrap();
            let online = myopic_online_policy(&t, &trace, &opts).unwrap();
            let s = t.with_energy(trace.energy.clone()).unwrap();
            let offline = if d == 1 { solve_delay_constrained(&s, &opts) } else { solve_delay_tolerant(&s, &opts) }.unwrap();
            assert!(online.converged && offline.converged);
            assert!(online.distortion.average >= offline.distortion.average - 1e-7, "d {d} seed {seed}");
            assert!(check_feasibility(&s, &online.policy).unwrap().max_violation() <= 1e-9);
        }
    }
}

#[test]
fn single_arrival_matches_offline() {
    // with everything known at slot 0 there is nothing to learn
    let s = template(0.5, 3).with_energy(vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let trace = ArrivalTrace::from_energy(s.energy().to_vec()).unwrap();
    let online = myopic_online_policy(&s, &trace, &SolveOptions::default()).unwrap();
    let offline = solve_delay_tolerant(&s, &SolveOptions::default()).unwrap();
    assert!((online.distortion.average - offline.distortion.average).abs() < 1e-7);
    assert_eq!(online.decisions, vec![0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    /// Decisions for slots before a change in the arrivals cannot depend on it.
    #[test]
    fn policy_is_causal(seed in 0u64..1000, at in 1usize..10, extra in 0.1f64..3.0, d in 1usize..4) {
        let t = template(0.5, d);
        let base = poisson_trace(0.8, 10, seed, 1.0).unwrap();
        let mut later = base.energy.clone();
        later[at] += extra;
        let opts = SolveOptions::default();
        let a = myopic_online_policy(&t, &base, &opts).unwrap();
        let b = myopic_online_policy(&t, &ArrivalTrace::from_energy(later).unwrap(), &opts).unwrap();
        prop_assert_eq!(&a.policy.powers[..at], &b.policy.powers[..at]);
        let delivered = |p: &ehdl_core::Policy| {
            let mut v = vec![0.0; 10];
            for (&(l, j), &r) in p.individual_rates.as_ref().unwrap() {
                if l < at {
                    v[j] += r;
                }
            }
            v
        };
        prop_assert_eq!(delivered(&a.policy), delivered(&b.policy));
    }
}
