//! Problem instances, policies and the distortion model.
//!
//! A [`Scenario`] describes `K` slots of an energy-harvesting link: energy
//! arriving at the start of each slot, the channel power gain of each slot,
//! and the statistics of the first-order autoregressive Gaussian source
//! sampled once per slot. Source `j` (zero-based) may be transmitted in
//! slots `j ..= min(j + d - 1, K - 1)`.
//!
//! Rates are in nats throughout.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, domain, Error, Result};
use crate::tri::TriMatrix;

/// Slot duration. Energies and powers are interchangeable under this
/// normalization.
pub const SLOT_DURATION: f64 = 1.0;

/// Absolute tolerance applied to every constraint residual.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Energy arrivals of the reference profile used throughout the experiments.
pub const PAPER_PROFILE_ENERGY: [f64; 10] = [0.2, 0.0, 0.6, 0.0, 0.0, 0.8, 1.4, 0.0, 0.0, 0.0];

/// A full problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    delay: usize,
    energy: Vec<f64>,
    gains: Vec<f64>,
    source_variance: f64,
    correlation: f64,
}

impl Scenario {
    /// Builds a validated scenario.
    ///
    /// Per-slot energy entries may be negative (as produced by
    /// [`effective_energy`]) as long as every cumulative prefix is
    /// nonnegative.
    pub fn new(
        delay: usize,
        energy: Vec<f64>,
        gains: Vec<f64>,
        source_variance: f64,
        correlation: f64,
    ) -> Result<Self> {
        let k = energy.len();
        if k == 0 {
            return Err(domain("slots", "at least one slot is required"));
        }
        check_len("gains", k, gains.len())?;
        if delay == 0 || delay > k {
            return Err(domain("delay", format!("must lie in 1..={k}, got {delay}")));
        }
        if let Some(v) = energy.iter().find(|v| !v.is_finite()) {
            return Err(domain("energy", format!("non-finite arrival {v}")));
        }
        first_negative_prefix(&energy)?;
        if let Some(g) = gains.iter().find(|g| !g.is_finite() || **g < 0.0) {
            return Err(domain("gains", format!("gain must be finite and >= 0, got {g}")));
        }
        if !(source_variance.is_finite() && source_variance > 0.0) {
            return Err(domain(
                "source_variance",
                format!("must be positive and finite, got {source_variance}"),
            ));
        }
        if !(0.0..=1.0).contains(&correlation) {
            return Err(domain(
                "correlation",
                format!("must lie in [0, 1], got {correlation}"),
            ));
        }
        Ok(Self {
            delay,
            energy,
            gains,
            source_variance,
            correlation,
        })
    }

    /// The ten-slot reference profile with unit gains and unit source variance.
    pub fn paper_profile(correlation: f64, delay: usize) -> Result<Self> {
        Self::new(
            delay,
            PAPER_PROFILE_ENERGY.to_vec(),
            vec![1.0; PAPER_PROFILE_ENERGY.len()],
            1.0,
            correlation,
        )
    }

    pub fn slots(&self) -> usize {
        self.energy.len()
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn energy(&self) -> &[f64] {
        &self.energy
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn source_variance(&self) -> f64 {
        self.source_variance
    }

    pub fn correlation(&self) -> f64 {
        self.correlation
    }

    pub fn with_correlation(&self, correlation: f64) -> Result<Self> {
        Self::new(
            self.delay,
            self.energy.clone(),
            self.gains.clone(),
            self.source_variance,
            correlation,
        )
    }

    pub fn with_delay(&self, delay: usize) -> Result<Self> {
        Self::new(
            delay,
            self.energy.clone(),
            self.gains.clone(),
            self.source_variance,
            self.correlation,
        )
    }

    pub fn with_energy(&self, energy: Vec<f64>) -> Result<Self> {
        Self::new(
            self.delay,
            energy,
            self.gains.clone(),
            self.source_variance,
            self.correlation,
        )
    }

    /// Inclusive slot range over which source `j` is transmitted.
    pub fn window(&self, source: usize) -> (usize, usize) {
        (source, (source + self.delay - 1).min(self.slots() - 1))
    }

    /// Inclusive slot range whose capacity bounds the cumulative rate `r_ij`.
    pub fn capacity_range(&self, i: usize, j: usize) -> (usize, usize) {
        (j, (i + self.delay - 1).min(self.slots() - 1))
    }

    /// Cumulative harvested energy at the end of every slot.
    pub fn cumulative_energy(&self) -> Vec<f64> {
        prefix_sums(&self.energy)
    }

    /// Nonnegative arrivals with the same feasible power set.
    ///
    /// The causality constraints `Σ_{j≤i} p_j ≤ S_i` are unchanged when `S_i`
    /// is replaced by `min_{l≥i} S_l`, which is non-decreasing.
    pub fn energy_envelope(&self) -> Vec<f64> {
        let mut caps = self.cumulative_energy();
        for i in (0..caps.len().saturating_sub(1)).rev() {
            caps[i] = caps[i].min(caps[i + 1]);
        }
        let mut prev = 0.0;
        caps.iter()
            .map(|&c| {
                let c = c.max(0.0);
                let e = (c - prev).max(0.0);
                prev = c;
                e
            })
            .collect()
    }
}

pub(crate) fn prefix_sums(x: &[f64]) -> Vec<f64> {
    x.iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

fn first_negative_prefix(energy: &[f64]) -> Result<()> {
    for (slot, s) in prefix_sums(energy).into_iter().enumerate() {
        if s < -1e-12 {
            return Err(Error::InfeasibleInstance {
                slot: slot + 1,
                reason: format!("cumulative energy {s:.6} is negative"),
            });
        }
    }
    Ok(())
}

/// Individual rates `R_{l,j}` keyed by `(slot, source)`, both zero-based.
pub type IndividualRates = BTreeMap<(usize, usize), f64>;

/// A transmission policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub powers: Vec<f64>,
    pub cumulative_rates: TriMatrix,
    pub individual_rates: Option<IndividualRates>,
}

impl Policy {
    /// Builds a policy whose cumulative rates are consistent with the given
    /// per-source totals.
    pub fn from_source_rates(powers: Vec<f64>, source_rates: &[f64]) -> Self {
        Self {
            powers,
            cumulative_rates: TriMatrix::cumulative(source_rates),
            individual_rates: None,
        }
    }

    pub fn zero(k: usize) -> Self {
        Self::from_source_rates(vec![0.0; k], &vec![0.0; k])
    }

    /// Per-source totals `r_ii`.
    pub fn source_rates(&self) -> Vec<f64> {
        self.cumulative_rates.diagonal()
    }

    /// Slot capacities `log(1 + g_l p_l)`.
    pub fn capacities(&self, gains: &[f64]) -> Vec<f64> {
        self.powers
            .iter()
            .zip(gains)
            .map(|(p, g)| (g * p.max(0.0)).ln_1p())
            .collect()
    }
}

/// Per-source distortions and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub per_source: Vec<f64>,
    pub average: f64,
}

impl DistortionReport {
    pub fn new(per_source: Vec<f64>) -> Self {
        let average = per_source.iter().sum::<f64>() / per_source.len().max(1) as f64;
        Self {
            per_source,
            average,
        }
    }
}

/// Variance of the encoding noise of one source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseVariance {
    Finite(f64),
    /// The source was allotted no rate; its description carries no information.
    Infinite,
}

impl NoiseVariance {
    pub fn value(self) -> f64 {
        match self {
            Self::Finite(v) => v,
            Self::Infinite => f64::INFINITY,
        }
    }
}

/// Encoding-noise variances for every source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderNoise {
    pub variances: Vec<NoiseVariance>,
}

fn validate_rates(k: usize, rates: &[f64]) -> Result<()> {
    check_len("source_rates", k, rates.len())?;
    match rates.iter().find(|r| !r.is_finite() || **r < 0.0) {
        Some(r) => Err(domain("source_rates", format!("rate must be finite and >= 0, got {r}"))),
        None => Ok(()),
    }
}

/// Distortion of every source from the per-source total rates, using the
/// explicit sum over past sources.
pub fn distortion_closed_form(scenario: &Scenario, source_rates: &[f64]) -> Result<DistortionReport> {
    let k = scenario.slots();
    validate_rates(k, source_rates)?;
    let var = scenario.source_variance();
    let rho = scenario.correlation();

    let mut per_source = Vec::with_capacity(k);
    let mut terms = Vec::with_capacity(k);
    for i in 0..k {
        // (weight, accumulated rate) for every j <= i; weights sum to one
        terms.clear();
        let mut acc = 0.0;
        for j in (0..=i).rev() {
            acc += source_rates[j];
            let weight = if j == 0 {
                rho.powi(i as i32)
            } else {
                (1.0 - rho) * rho.powi((i - j) as i32)
            };
            terms.push((weight, acc));
        }
        let direct: f64 = terms.iter().map(|(w, s)| w * (-s).exp()).sum();
        // complement form is exact at zero rate and accurate for D near var
        let deficit: f64 = terms.iter().map(|(w, s)| -w * (-s).exp_m1()).sum();
        let d = if deficit < 0.5 { 1.0 - deficit } else { direct };
        per_source.push(var * d);
    }
    Ok(DistortionReport::new(per_source))
}

/// Distortion of every source via the one-step MMSE recursion
/// `D_{n+1} = (ρ D_n + σ²(1-ρ)) e^{-r}`.
pub fn distortion_recursive(scenario: &Scenario, source_rates: &[f64]) -> Result<DistortionReport> {
    validate_rates(scenario.slots(), source_rates)?;
    let var = scenario.source_variance();
    let rho = scenario.correlation();
    let mut per_source = Vec::with_capacity(source_rates.len());
    let mut prior = var;
    for &r in source_rates {
        let d = prior * (-r).exp();
        per_source.push(d);
        prior = rho * d + var * (1.0 - rho);
    }
    Ok(DistortionReport::new(per_source))
}

/// Encoding noise needed so that a source with the given conditional
/// variance is described at `sum_rate` nats.
pub fn encoding_noise_variance(conditional_variance: f64, sum_rate: f64) -> Result<NoiseVariance> {
    if !(conditional_variance >= 0.0) || !conditional_variance.is_finite() {
        return Err(domain("conditional_variance", format!("must be >= 0, got {conditional_variance}")));
    }
    if !(sum_rate >= 0.0) {
        return Err(domain("sum_rate", format!("must be >= 0, got {sum_rate}")));
    }
    if sum_rate == 0.0 {
        return Ok(NoiseVariance::Infinite);
    }
    Ok(NoiseVariance::Finite(conditional_variance / sum_rate.exp_m1()))
}

/// Noise variances for a whole rate vector, with conditional variances
/// taken from the MMSE recursion.
pub fn encoder_noise(scenario: &Scenario, source_rates: &[f64]) -> Result<EncoderNoise> {
    validate_rates(scenario.slots(), source_rates)?;
    let var = scenario.source_variance();
    let rho = scenario.correlation();
    let mut prior = var;
    let mut variances = Vec::with_capacity(source_rates.len());
    for &r in source_rates {
        variances.push(encoding_noise_variance(prior, r)?);
        prior = rho * prior * (-r).exp() + var * (1.0 - rho);
    }
    Ok(EncoderNoise { variances })
}

/// Folds a constant circuit-power draw into the arrivals: `Ē_i = E_i - T_s P^c_i`.
pub fn effective_energy(scenario: &Scenario, circuit_power: &[f64]) -> Result<Scenario> {
    check_len("circuit_power", scenario.slots(), circuit_power.len())?;
    if let Some(p) = circuit_power.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(domain("circuit_power", format!("must be finite and >= 0, got {p}")));
    }
    let energy: Vec<f64> = scenario
        .energy()
        .iter()
        .zip(circuit_power)
        .map(|(e, pc)| e - SLOT_DURATION * pc)
        .collect();
    first_negative_prefix(&energy)?;
    scenario.with_energy(energy)
}

/// Constraint families checked by [`check_feasibility`]. Indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    NegativePower { slot: usize },
    NegativeRate { i: usize, j: usize },
    EnergyCausality { slot: usize },
    Consistency { i: usize, j: usize },
    WindowCapacity { i: usize, j: usize },
    IndividualNegative { slot: usize, source: usize },
    IndividualOutsideWindow { slot: usize, source: usize },
    SlotCapacity { slot: usize },
    SourceTotal { source: usize },
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NegativePower { slot } => write!(f, "p[{slot}] >= 0"),
            Self::NegativeRate { i, j } => write!(f, "r[{i},{j}] >= 0"),
            Self::EnergyCausality { slot } => write!(f, "energy causality at slot {slot}"),
            Self::Consistency { i, j } => write!(f, "r[{i},{j}] = sum of r_kk"),
            Self::WindowCapacity { i, j } => write!(f, "window capacity of r[{i},{j}]"),
            Self::IndividualNegative { slot, source } => write!(f, "R[{slot},{source}] >= 0"),
            Self::IndividualOutsideWindow { slot, source } => {
                write!(f, "R[{slot},{source}] outside transmission window")
            }
            Self::SlotCapacity { slot } => write!(f, "capacity of slot {slot}"),
            Self::SourceTotal { source } => write!(f, "individual rates of source {source}"),
        }
    }
}

/// One violated constraint and by how much.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub constraint: Constraint,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub residuals: Vec<Residual>,
}

impl FeasibilityReport {
    pub fn max_violation(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.violation))
    }
}

/// Checks every policy constraint against the scenario.
pub fn check_feasibility(scenario: &Scenario, policy: &Policy) -> Result<FeasibilityReport> {
    let k = scenario.slots();
    check_len("powers", k, policy.powers.len())?;
    check_len("cumulative_rates", k, policy.cumulative_rates.dim())?;

    let mut residuals = Vec::new();
    let mut flag = |constraint, violation: f64| {
        if violation > FEASIBILITY_TOL || violation.is_nan() {
            residuals.push(Residual {
                constraint,
                violation,
            });
        }
    };

    for (slot, p) in policy.powers.iter().enumerate() {
        flag(Constraint::NegativePower { slot }, -p);
    }
    let harvested = scenario.cumulative_energy();
    let spent = prefix_sums(&policy.powers);
    for slot in 0..k {
        flag(
            Constraint::EnergyCausality { slot },
            SLOT_DURATION * spent[slot] - harvested[slot],
        );
    }

    let caps = policy.capacities(scenario.gains());
    let cap_prefix = prefix_sums(&caps);
    let interval = |a: usize, b: usize| cap_prefix[b] - if a == 0 { 0.0 } else { cap_prefix[a - 1] };
    let rates = &policy.cumulative_rates;
    for ((i, j), r) in rates.iter() {
        flag(Constraint::NegativeRate { i, j }, -r);
        if j < i {
            let sum: f64 = (j..=i).map(|m| rates.get(m, m)).sum();
            flag(Constraint::Consistency { i, j }, (r - sum).abs());
        }
        let (a, b) = scenario.capacity_range(i, j);
        flag(Constraint::WindowCapacity { i, j }, r - interval(a, b));
    }

    if let Some(individual) = &policy.individual_rates {
        let mut slot_load = vec![0.0; k];
        let mut source_total = vec![0.0; k];
        for (&(slot, source), &value) in individual {
            if slot >= k || source >= k {
                return Err(domain("individual_rates", format!("index ({slot}, {source}) out of range")));
            }
            let (a, b) = scenario.window(source);
            if slot < a || slot > b {
                flag(Constraint::IndividualOutsideWindow { slot, source }, value.abs());
            }
            flag(Constraint::IndividualNegative { slot, source }, -value);
            slot_load[slot] += value;
            source_total[source] += value;
        }
        for slot in 0..k {
            flag(Constraint::SlotCapacity { slot }, slot_load[slot] - caps[slot]);
        }
        for source in 0..k {
            flag(
                Constraint::SourceTotal { source },
                (source_total[source] - rates.get(source, source)).abs(),
            );
        }
    }

    Ok(FeasibilityReport {
        feasible: residuals.is_empty(),
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::LN_2;

    fn scenario(k: usize, rho: f64) -> Scenario {
        Scenario::new(1, vec![1.0; k], vec![1.0; k], 1.0, rho).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let d = distortion_closed_form(&scenario(2, 0.0), &[LN_2, LN_2]).unwrap();
        assert_relative_eq!(d.per_source[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(d.per_source[1], 0.5, epsilon = 1e-15);

        let d = distortion_closed_form(&scenario(2, 0.5), &[LN_2, LN_2]).unwrap();
        assert_relative_eq!(d.per_source[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(d.per_source[1], 0.375, epsilon = 1e-15);

        let d = distortion_closed_form(&scenario(2, 1.0), &[LN_2, LN_2]).unwrap();
        assert_relative_eq!(d.per_source[1], 0.25, epsilon = 1e-15);
        assert_relative_eq!(d.average, 0.375, epsilon = 1e-15);
    }

    #[test]
    fn zero_rates_give_source_variance_exactly() {
        for rho in [0.0, 0.1, 0.3, 0.7, 0.93, 1.0] {
            let s = Scenario::new(1, vec![1.0; 12], vec![1.0; 12], 2.5, rho).unwrap();
            let d = distortion_closed_form(&s, &[0.0; 12]).unwrap();
            assert!(d.per_source.iter().all(|&v| v == 2.5), "rho {rho}: {:?}", d.per_source);
        }
    }

    #[test]
    fn recursion_examples() {
        let d = distortion_recursive(&scenario(2, 0.5), &[LN_2, LN_2]).unwrap();
        assert_relative_eq!(d.per_source[1], 0.375, epsilon = 1e-15);
        let d = distortion_recursive(&scenario(3, 0.4), &[0.0; 3]).unwrap();
        for v in d.per_source {
            assert_relative_eq!(v, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn uncorrelated_depends_on_own_rate_only() {
        let rates = [0.3, 1.2, 0.0, 2.0];
        let d = distortion_closed_form(&scenario(4, 0.0), &rates).unwrap();
        for (v, r) in d.per_source.iter().zip(rates) {
            assert_relative_eq!(*v, (-r).exp(), epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_bad_rates() {
        let s = scenario(2, 0.5);
        assert!(matches!(
            distortion_closed_form(&s, &[-0.1, 0.0]),
            Err(Error::Domain { .. })
        ));
        assert!(matches!(
            distortion_recursive(&s, &[f64::NAN, 0.0]),
            Err(Error::Domain { .. })
        ));
        assert!(matches!(
            distortion_closed_form(&s, &[0.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn noise_variance() {
        assert_eq!(encoding_noise_variance(1.0, LN_2).unwrap(), NoiseVariance::Finite(1.0));
        assert_eq!(encoding_noise_variance(1.0, 0.0).unwrap(), NoiseVariance::Infinite);
        assert!(encoding_noise_variance(1.0, 60.0).unwrap().value() < 1e-25);
        assert!(encoding_noise_variance(-1.0, 1.0).is_err());
        assert!(encoding_noise_variance(1.0, -1.0).is_err());
    }

    #[test]
    fn encoder_noise_matches_posterior() {
        // D = P σz² / (P + σz²) must reproduce the closed form
        let s = Scenario::new(1, vec![1.0; 3], vec![1.0; 3], 1.0, 0.6).unwrap();
        let rates = [0.4, 0.0, 1.1];
        let noise = encoder_noise(&s, &rates).unwrap();
        let d = distortion_closed_form(&s, &rates).unwrap();
        let mut prior = 1.0;
        for (i, z) in noise.variances.iter().enumerate() {
            let post = match z {
                NoiseVariance::Infinite => prior,
                NoiseVariance::Finite(v) => prior * v / (prior + v),
            };
            assert_relative_eq!(post, d.per_source[i], epsilon = 1e-14);
            prior = 0.6 * post + 0.4;
        }
    }

    #[test]
    fn effective_energy_examples() {
        let s = Scenario::new(1, vec![1.0, 1.0], vec![1.0; 2], 1.0, 0.0).unwrap();
        let e = effective_energy(&s, &[0.2, 0.2]).unwrap();
        assert_relative_eq!(e.energy()[0], 0.8);
        assert_relative_eq!(e.energy()[1], 0.8);
        assert_eq!(effective_energy(&s, &[0.0, 0.0]).unwrap(), s);

        let s = Scenario::new(1, vec![0.1, 1.0], vec![1.0; 2], 1.0, 0.0).unwrap();
        match effective_energy(&s, &[0.5, 0.0]) {
            Err(Error::InfeasibleInstance { slot, .. }) => assert_eq!(slot, 1),
            other => panic!("expected infeasible slot 1, got {other:?}"),
        }
    }

    #[test]
    fn negative_entries_allowed_with_nonnegative_prefix() {
        let s = Scenario::new(1, vec![1.0, -0.5, 1.0], vec![1.0; 3], 1.0, 0.0).unwrap();
        assert_eq!(s.energy_envelope(), vec![0.5, 0.0, 1.0]);
    }

    #[test]
    fn scenario_validation() {
        assert!(Scenario::new(0, vec![1.0], vec![1.0], 1.0, 0.0).is_err());
        assert!(Scenario::new(2, vec![1.0], vec![1.0], 1.0, 0.0).is_err());
        assert!(Scenario::new(1, vec![1.0], vec![-1.0], 1.0, 0.0).is_err());
        assert!(Scenario::new(1, vec![1.0], vec![1.0], 0.0, 0.0).is_err());
        match Scenario::new(1, vec![1.0], vec![1.0], 1.0, 1.5) {
            Err(Error::Domain { field, .. }) => assert_eq!(field, "correlation"),
            other => panic!("{other:?}"),
        }
        assert!(Scenario::new(1, vec![], vec![], 1.0, 0.0).is_err());
    }

    #[test]
    fn feasibility_examples() {
        let s = Scenario::paper_profile(0.5, 3).unwrap();
        let zero = Policy::zero(10);
        assert!(check_feasibility(&s, &zero).unwrap().feasible);

        let mut p = zero.clone();
        p.powers[0] = 0.3;
        let report = check_feasibility(&s, &p).unwrap();
        assert!(!report.feasible);
        let r = report.residuals[0];
        assert_eq!(r.constraint, Constraint::EnergyCausality { slot: 0 });
        assert_relative_eq!(r.violation, 0.1, epsilon = 1e-12);

        let bad = Policy::zero(3);
        assert!(matches!(check_feasibility(&s, &bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn tightest_string_is_feasible() {
        let s = Scenario::paper_profile(0.0, 1).unwrap();
        let powers = vec![0.1, 0.1, 0.2, 0.2, 0.2, 0.44, 0.44, 0.44, 0.44, 0.44];
        let caps: Vec<f64> = powers.iter().map(|p: &f64| p.ln_1p()).collect();
        let policy = Policy::from_source_rates(powers, &caps);
        let report = check_feasibility(&s, &policy).unwrap();
        assert!(report.feasible, "{:?}", report.residuals);
    }

    #[test]
    fn individual_rates_are_checked() {
        let s = Scenario::new(2, vec![2.0, 0.0], vec![1.0; 2], 1.0, 1.0).unwrap();
        let mut policy = Policy::from_source_rates(vec![1.0, 1.0], &[2.0 * LN_2, 0.0]);
        let mut ind = IndividualRates::new();
        ind.insert((0, 0), LN_2);
        ind.insert((1, 0), LN_2);
        policy.individual_rates = Some(ind.clone());
        assert!(check_feasibility(&s, &policy).unwrap().feasible);

        ind.insert((1, 0), LN_2 + 0.01);
        policy.individual_rates = Some(ind);
        let report = check_feasibility(&s, &policy).unwrap();
        assert!(report
            .residuals
            .iter()
            .any(|r| r.constraint == Constraint::SlotCapacity { slot: 1 }));
        assert!(report
            .residuals
            .iter()
            .any(|r| r.constraint == Constraint::SourceTotal { source: 0 }));
    }
}
