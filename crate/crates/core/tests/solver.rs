use ehdl_core::model::check_feasibility;
use ehdl_core::oracle::{benchmark_uncorrelated, brute_force_optimum, kkt_residuals};
use ehdl_core::recovery::{recover_individual_rates, RecoveryProblem};
use ehdl_core::{solve_delay_constrained, solve_delay_tolerant, Scenario, Solution, SolveOptions};
use proptest::prelude::*;

fn solve(s: &Scenario) -> Solution {
    let sol = if s.delay() == 1 {
        solve_delay_constrained(s, &SolveOptions::default())
    } else {
        solve_delay_tolerant(s, &SolveOptions::default())
    }
    .unwrap();
    assert!(sol.converged, "rho {} d {}", s.correlation(), s.delay());
    sol
}

fn capacity_sum(s: &Scenario, sol: &Solution) -> f64 {
    sol.policy.capacities(s.gains()).iter().sum()
}

#[test]
fn uncorrelated_profile_follows_the_tightest_string() {
    let s = Scenario::paper_profile(0.0, 1).unwrap();
    let sol = solve(&s);
    let expected = [0.1, 0.1, 0.2, 0.2, 0.2, 0.44, 0.44, 0.44, 0.44, 0.44];
    for (p, e) in sol.policy.powers.iter().zip(expected) {
        assert!((p - e).abs() < 1e-6, "{:?}", sol.policy.powers);
    }
}

#[test]
fn full_correlation_suspends_the_last_slot() {
    let s = Scenario::paper_profile(1.0, 1).unwrap();
    let sol = solve(&s);
    assert!(sol.policy.powers[9] < 1e-3, "{:?}", sol.policy.powers);
}

#[test]
fn two_slot_delay_example() {
    let s = Scenario::new(2, vec![2.0, 0.0], vec![1.0, 1.0], 1.0, 1.0).unwrap();
    let sol = solve(&s);
    assert!((sol.distortion.average - 0.25).abs() < 1e-7);
}

#[test]
fn profile_grid_is_certified() {
    for rho in [0.0, 0.2, 0.8, 1.0] {
        for d in [1, 4, 10] {
            let s = Scenario::paper_profile(rho, d).unwrap();
            let sol = solve(&s);
            let feas = check_feasibility(&s, &sol.policy).unwrap();
            assert!(feas.max_violation() <= 1e-9, "rho {rho} d {d}: {feas:?}");

            let kkt = kkt_residuals(&s, &sol.policy, &sol.duals).unwrap();
            assert!(kkt.max() < 1e-4, "rho {rho} d {d}: {kkt:?}");

            let rates: f64 = sol.policy.source_rates().iter().sum();
            assert!((rates - capacity_sum(&s, &sol)).abs() <= 1e-4, "rho {rho} d {d}");

            let recovered = recover_individual_rates(
                &RecoveryProblem::new(sol.policy.source_rates(), sol.policy.capacities(s.gains()), d).unwrap(),
            )
            .unwrap();
            let mut per_source = vec![0.0; 10];
            let mut per_slot = vec![0.0; 10];
            for (&(l, j), &v) in &recovered {
                assert!(v >= 0.0);
                let (a, b) = s.window(j);
                assert!((a..=b).contains(&l));
                per_source[j] += v;
                per_slot[l] += v;
            }
            let caps = sol.policy.capacities(s.gains());
            for i in 0..10 {
                assert!((per_source[i] - sol.policy.source_rates()[i]).abs() <= 1e-7);
                assert!(per_slot[i] <= caps[i] + 1e-8);
            }
            if d == 1 {
                for (&(l, j), &v) in &recovered {
                    assert_eq!(l, j);
                    assert_eq!(v, sol.policy.source_rates()[j]);
                }
            }
        }
    }
}

#[test]
fn distortion_falls_with_delay_and_correlation() {
    let avg = |rho: f64, d: usize| solve(&Scenario::paper_profile(rho, d).unwrap()).distortion.average;
    for rho in [0.2, 0.5, 0.8] {
        let by_delay: Vec<f64> = (1..=10).map(|d| avg(rho, d)).collect();
        assert!(by_delay.windows(2).all(|w| w[1] <= w[0] + 1e-7), "rho {rho}: {by_delay:?}");
        assert!(by_delay[9] < by_delay[0] - 1e-4);
    }
    for d in [1, 5, 10] {
        let by_rho: Vec<f64> = [0.0, 0.2, 0.5, 0.8, 1.0].iter().map(|&r| avg(r, d)).collect();
        assert!(by_rho.windows(2).all(|w| w[1] <= w[0] + 1e-7), "d {d}: {by_rho:?}");
        assert!(by_rho[4] < by_rho[0] - 1e-4);
    }
}

#[test]
fn benchmark_never_beats_the_solver() {
    for rho in [0.0, 0.3, 0.8] {
        for d in [1, 3] {
            let s = Scenario::paper_profile(rho, d).unwrap();
            let opt = solve(&s).distortion.average;
            let bench = benchmark_uncorrelated(&s, &SolveOptions::default()).unwrap().average;
            assert!(bench >= opt - 1e-7, "rho {rho} d {d}: {bench} < {opt}");
            if rho == 0.0 {
                assert!((bench - opt).abs() < 1e-7);
            }
        }
    }
}

fn small_scenario() -> impl Strategy<Value = Scenario> {
    (1usize..=3)
        .prop_flat_map(|k| {
            (
                Just(k),
                prop::collection::vec(0.0f64..2.0, k),
                prop::collection::vec(0.0f64..2.0, k),
                prop_oneof![Just(0.0), Just(0.5), Just(1.0)],
                prop::bool::ANY,
            )
        })
        .prop_map(|(k, e, g, rho, full)| Scenario::new(if full { k } else { 1 }, e, g, 1.0, rho).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn matches_brute_force(s in small_scenario()) {
        let sol = solve(&s);
        let (_, brute) = brute_force_optimum(&s, 11).unwrap();
        prop_assert!((sol.distortion.average - brute.average).abs() <= 1e-3);
        prop_assert!(check_feasibility(&s, &sol.policy).unwrap().max_violation() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn solutions_are_feasible_and_tight(
        cols in prop::collection::vec((prop_oneof![Just(0.0), 0.0f64..2.0], 0.0f64..2.0), 1..7),
        rho in 0.0f64..=1.0,
        d in 1usize..7,
    ) {
        let k = cols.len();
        let s = Scenario::new(d.min(k), cols.iter().map(|c| c.0).collect(), cols.iter().map(|c| c.1).collect(), 1.0, rho).unwrap();
        let sol = solve(&s);
        prop_assert!(check_feasibility(&s, &sol.policy).unwrap().max_violation() <= 1e-9);
        let rates: f64 = sol.policy.source_rates().iter().sum();
        prop_assert!((rates - capacity_sum(&s, &sol)).abs() <= 1e-4);
        let kkt = kkt_residuals(&s, &sol.policy, &sol.duals).unwrap();
        prop_assert!(kkt.max() < 1e-4, "{:?}", kkt);
    }
}
