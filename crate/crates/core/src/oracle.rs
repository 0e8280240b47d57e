//! Independent checks: brute-force optima of tiny instances, KKT residuals
//! and the uncorrelated-encoding benchmark.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, domain, Error, Result};
use crate::model::{check_feasibility, prefix_sums, DistortionReport, Policy, Scenario};
use crate::solver::{solve_delay_tolerant, DualState, SolveOptions};
use crate::tri::TriMatrix;
use crate::waterfill::{directional_waterfill, gamma_table, WaterfillWeights};

/// Largest instance the brute-force search accepts.
pub const BRUTE_FORCE_MAX_SLOTS: usize = 3;

/// Max-norm violations of the optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub complementary_slackness: f64,
    pub primal_feasibility: f64,
    pub dual_feasibility: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.complementary_slackness)
            .max(self.primal_feasibility)
            .max(self.dual_feasibility)
    }
}

/// Evaluates the KKT system at `policy` with multipliers `duals`.
///
/// The nonnegativity multipliers of rates and powers are read off the
/// stationarity equations. The energy multipliers come from the water levels
/// of a directional water-filling with widths implied by λ: the price of slot
/// `l` is `1/ν_l` and `β_l` is the drop in price after it.
pub fn kkt_residuals(scenario: &Scenario, policy: &Policy, duals: &DualState) -> Result<KktReport> {
    let k = scenario.slots();
    check_len("powers", k, policy.powers.len())?;
    check_len("cumulative_rates", k, policy.cumulative_rates.dim())?;
    check_len("lambda", k, duals.lambda.dim())?;
    if let Some(mu) = &duals.mu {
        check_len("mu", k, mu.dim())?;
    }
    let gamma = gamma_table(scenario);
    let rates = &policy.cumulative_rates;
    let p = &policy.powers;
    let g = scenario.gains();
    let mu_bar = duals.mu_bar();

    let mut stationarity: f64 = 0.0;
    let mut slackness: f64 = 0.0;
    let mut dual: f64 = 0.0;

    // rate equations: γ e^{-r} - λ - μ̄ = -δ with δ ≥ 0, δ r = 0
    let caps = policy.capacities(g);
    let cap_prefix = prefix_sums(&caps);
    for ((i, j), r) in rates.iter() {
        let lambda = duals.lambda.get(i, j);
        let a = gamma.get(i, j) * (-r).exp() - lambda - mu_bar.get(i, j);
        stationarity = stationarity.max(a);
        slackness = slackness.max((-a).max(0.0) * r.abs());
        dual = dual.max(-lambda);
        let (lo, hi) = scenario.capacity_range(i, j);
        let window = cap_prefix[hi] - if lo == 0 { 0.0 } else { cap_prefix[lo - 1] };
        slackness = slackness.max((lambda.max(0.0) * (window - r)).abs());
    }

    // power equations: π_l - W_l g_l/(1 + g_l p_l) = η_l ≥ 0, η p = 0
    let widths = widths(scenario, &duals.lambda);
    let envelope = prefix_sums(&scenario.energy_envelope());
    let wf = directional_waterfill(
        &WaterfillWeights::new(widths.iter().map(|w| w.max(0.0)).collect(), g.to_vec())?,
        &scenario.energy_envelope(),
    )?;
    let marginal: Vec<f64> = (0..k).map(|l| widths[l] * g[l] / (1.0 + g[l] * p[l].max(0.0))).collect();
    let mut price = vec![0.0; k];
    for l in (0..k).rev() {
        let next = if l + 1 < k { price[l + 1] } else { 0.0 };
        let level = wf.levels[l];
        price[l] = if level == 0.0 {
            // dry leading slots: any price above both neighbours is valid
            marginal[l].max(next)
        } else if level.is_infinite() {
            next
        } else {
            1.0 / level
        };
    }
    let spent = prefix_sums(p);
    for l in 0..k {
        let eta = price[l] - marginal[l];
        stationarity = stationarity.max(-eta);
        slackness = slackness.max(eta.max(0.0) * p[l].abs());
        let beta = price[l] - if l + 1 < k { price[l + 1] } else { 0.0 };
        dual = dual.max(-beta);
        slackness = slackness.max((beta.max(0.0) * (envelope[l] - spent[l])).abs());
    }

    let primal = check_feasibility(scenario, policy)?;
    let mut primal_violation = primal.max_violation();
    // the report drops violations under the feasibility tolerance; recompute
    // them exactly for the nonnegativity and energy rows
    for l in 0..k {
        primal_violation = primal_violation
            .max(-p[l])
            .max(spent[l] - scenario.cumulative_energy()[l]);
    }
    Ok(KktReport {
        stationarity: stationarity.max(0.0),
        complementary_slackness: slackness,
        primal_feasibility: primal_violation.max(0.0),
        dual_feasibility: dual.max(0.0),
    })
}

/// `W_l = Σ λ_ij` over the pairs whose capacity range contains slot `l`.
fn widths(scenario: &Scenario, lambda: &TriMatrix) -> Vec<f64> {
    let k = scenario.slots();
    let mut w = vec![0.0; k];
    for ((i, j), v) in lambda.iter() {
        let (a, b) = scenario.capacity_range(i, j);
        for x in &mut w[a..=b] {
            *x += v;
        }
    }
    w
}

/// Multipliers making the rate equations exact at a one-slot-window policy:
/// `λ_ij = γ_ij e^{-r_ij}`.
pub fn fit_duals(scenario: &Scenario, policy: &Policy) -> Result<DualState> {
    if scenario.delay() != 1 {
        return Err(domain("delay", "multiplier fitting is implemented for d = 1 only"));
    }
    let gamma = gamma_table(scenario);
    let r = &policy.cumulative_rates;
    Ok(DualState {
        lambda: TriMatrix::from_fn(scenario.slots(), |i, j| gamma.get(i, j) * (-r.get(i, j)).exp()),
        mu: None,
    })
}

/// Per-source distortions from the sequential MMSE recursion
/// `D_n = (ρ D_{n-1} + (1-ρ)σ²) e^{-s_n}` with `D_0 = σ²`.
fn recursion(scenario: &Scenario, source_rates: &[f64]) -> Vec<f64> {
    let var = scenario.source_variance();
    let rho = scenario.correlation();
    let mut prev = var;
    source_rates
        .iter()
        .map(|s| {
            prev = (rho * prev + (1.0 - rho) * var) * (-s).exp();
            prev
        })
        .collect()
}

/// Search coordinates: a power fraction of the remaining budget per slot and
/// the share of each slot capacity given to each source that may use it.
struct Grid<'a> {
    scenario: &'a Scenario,
    envelope: Vec<f64>,
    /// Sources allowed in each slot.
    users: Vec<Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        let k = scenario.slots();
        let users = (0..k)
            .map(|l| (0..k).filter(|&j| (scenario.window(j).0..=scenario.window(j).1).contains(&l)).collect())
            .collect();
        Self {
            scenario,
            envelope: prefix_sums(&scenario.energy_envelope()),
            users,
        }
    }

    /// Number of split coordinates of slot `l`: one less than its users.
    fn split_dims(&self) -> Vec<usize> {
        self.users.iter().map(|u| u.len().saturating_sub(1)).collect()
    }

    fn dims(&self) -> usize {
        self.scenario.slots() + self.split_dims().iter().sum::<usize>()
    }

    /// Decodes unit-cube coordinates into powers and individual rates.
    fn decode(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let k = self.scenario.slots();
        let g = self.scenario.gains();
        let mut powers = vec![0.0; k];
        let mut spent = 0.0;
        for l in 0..k {
            // the tightest remaining budget over all later prefixes
            let room = (l..k).map(|m| self.envelope[m]).fold(f64::INFINITY, f64::min) - spent;
            powers[l] = x[l] * room.max(0.0);
            spent += powers[l];
        }
        let mut shares = Vec::with_capacity(k);
        let mut at = k;
        for (l, users) in self.users.iter().enumerate() {
            let cap = (g[l] * powers[l]).ln_1p();
            let n = users.len();
            let mut left = 1.0;
            let mut split = vec![0.0; n];
            for (u, share) in split.iter_mut().enumerate() {
                if u + 1 == n {
                    *share = left * cap;
                } else {
                    let f = x[at] * left;
                    *share = f * cap;
                    left -= f;
                    at += 1;
                }
            }
            shares.push(split);
        }
        (powers, shares)
    }

    fn source_rates(&self, shares: &[Vec<f64>]) -> Vec<f64> {
        let mut s = vec![0.0; self.scenario.slots()];
        for (users, split) in self.users.iter().zip(shares) {
            for (&j, v) in users.iter().zip(split) {
                s[j] += v;
            }
        }
        s
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (_, shares) = self.decode(x);
        let d = recursion(self.scenario, &self.source_rates(&shares));
        d.iter().sum::<f64>() / d.len() as f64
    }
}

/// Exhaustive search over powers and capacity splits on a grid with
/// `resolution` points per axis, refined by coordinate descent.
pub fn brute_force_optimum(scenario: &Scenario, resolution: usize) -> Result<(Policy, DistortionReport)> {
    let k = scenario.slots();
    if k > BRUTE_FORCE_MAX_SLOTS {
        return Err(Error::TooLarge {
            max: BRUTE_FORCE_MAX_SLOTS,
            actual: k,
        });
    }
    if resolution < 2 {
        return Err(domain("resolution", "needs at least two grid points per axis"));
    }
    let grid = Grid::new(scenario);
    let n = grid.dims();
    let axis = |i: usize| i as f64 / (resolution - 1) as f64;

    let mut best_x = vec![1.0; n];
    let mut best = grid.value(&best_x);
    let mut index = vec![0usize; n];
    let mut x = vec![0.0; n];
    'outer: loop {
        for (xi, &ii) in x.iter_mut().zip(&index) {
            *xi = axis(ii);
        }
        let v = grid.value(&x);
        if v < best {
            best = v;
            best_x.clone_from(&x);
        }
        for d in 0..n {
            index[d] += 1;
            if index[d] < resolution {
                continue 'outer;
            }
            index[d] = 0;
        }
        break;
    }

    // pattern search around the best grid point
    let mut step = 1.0 / (resolution - 1) as f64;
    while step > 1e-10 {
        let mut improved = false;
        for d in 0..n {
            for dir in [1.0, -1.0] {
                let mut trial = best_x.clone();
                trial[d] = (trial[d] + dir * step).clamp(0.0, 1.0);
                let v = grid.value(&trial);
                if v < best {
                    best = v;
                    best_x = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    let (powers, shares) = grid.decode(&best_x);
    let source_rates = grid.source_rates(&shares);
    let mut policy = Policy::from_source_rates(powers, &source_rates);
    let mut individual = std::collections::BTreeMap::new();
    for (l, (users, split)) in grid.users.iter().zip(&shares).enumerate() {
        for (&j, &v) in users.iter().zip(split) {
            individual.insert((l, j), v);
        }
    }
    policy.individual_rates = Some(individual);
    let report = DistortionReport::new(recursion(scenario, &source_rates));
    Ok((policy, report))
}

/// Distortion reached when the allocation is optimized as if the sources
/// were uncorrelated, while the decoder still exploits the correlation.
pub fn benchmark_uncorrelated(scenario: &Scenario, opts: &SolveOptions) -> Result<DistortionReport> {
    let blind = scenario.with_correlation(0.0)?;
    let solution = solve_delay_tolerant(&blind, opts)?;
    benchmark_distortion(scenario, &solution.policy.source_rates())
}

/// Kalman-style recursion for encoders that quantize each source with noise
/// `σ_z² = σ²/(e^R - 1)` sized for its marginal variance.
pub fn benchmark_distortion(scenario: &Scenario, source_rates: &[f64]) -> Result<DistortionReport> {
    check_len("source_rates", scenario.slots(), source_rates.len())?;
    let var = scenario.source_variance();
    let rho = scenario.correlation();
    let mut prev = var;
    let per_source = source_rates
        .iter()
        .map(|&r| {
            let prior = rho * prev + (1.0 - rho) * var;
            // D = P σ_z²/(P + σ_z²) = P / (1 + P (e^R - 1)/σ²)
            prev = prior / (1.0 + prior * r.exp_m1() / var);
            prev
        })
        .collect();
    Ok(DistortionReport::new(per_source))
}
