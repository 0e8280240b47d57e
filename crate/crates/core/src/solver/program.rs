//! The convex program behind both solvers, in cumulative-rate form.
//!
//! Source `j` owns an optional window of slots. The cumulative rate `r_ij`
//! (sources `j..=i`) is bounded by the capacity of the union of their
//! windows. Weights may differ from the plain γ table: rate already
//! delivered to a source is folded into the weights as `γ_ij e^{-offset}`.

use crate::model::{prefix_sums, Scenario};
use crate::tri::TriMatrix;
use crate::waterfill::gamma_table;

#[derive(Debug, Clone)]
pub(crate) struct Program {
    pub gains: Vec<f64>,
    /// Nonnegative arrivals.
    pub arrivals: Vec<f64>,
    /// Inclusive slot window of each source, `None` when it cannot transmit.
    pub windows: Vec<Option<(usize, usize)>>,
    pub weights: TriMatrix,
    ranges: Vec<Option<(usize, usize)>>,
}

impl Program {
    pub fn new(
        gains: Vec<f64>,
        arrivals: Vec<f64>,
        windows: Vec<Option<(usize, usize)>>,
        weights: TriMatrix,
    ) -> Self {
        let k = gains.len();
        debug_assert_eq!(arrivals.len(), k);
        debug_assert_eq!(windows.len(), k);
        debug_assert_eq!(weights.dim(), k);
        let mut ranges = Vec::with_capacity(k * (k + 1) / 2);
        for i in 0..k {
            for j in 0..=i {
                let lo = windows[j..=i].iter().flatten().map(|w| w.0).min();
                let hi = windows[j..=i].iter().flatten().map(|w| w.1).max();
                ranges.push(lo.zip(hi));
            }
        }
        Self {
            gains,
            arrivals,
            windows,
            weights,
            ranges,
        }
    }

    pub fn from_scenario(scenario: &Scenario) -> Self {
        let k = scenario.slots();
        Self::new(
            scenario.gains().to_vec(),
            scenario.energy_envelope(),
            (0..k).map(|j| Some(scenario.window(j))).collect(),
            gamma_table(scenario).0,
        )
    }

    pub fn k(&self) -> usize {
        self.gains.len()
    }

    #[inline]
    pub fn range(&self, i: usize, j: usize) -> Option<(usize, usize)> {
        self.ranges[i * (i + 1) / 2 + j]
    }

    /// Every window is a single slot no other source uses: the
    /// delay-constrained shape.
    pub fn single_slot_windows(&self) -> bool {
        let mut used = vec![false; self.k()];
        self.windows.iter().flatten().all(|&(a, b)| a == b && !std::mem::replace(&mut used[a], true))
    }

    /// `W_l`: total multiplier mass of the capacity constraints containing slot `l`.
    pub fn widths(&self, lambda: &TriMatrix) -> Vec<f64> {
        let k = self.k();
        let mut diff = vec![0.0; k + 1];
        for ((i, j), v) in lambda.iter() {
            if v != 0.0 {
                if let Some((a, b)) = self.range(i, j) {
                    diff[a] += v;
                    diff[b + 1] -= v;
                }
            }
        }
        let mut acc = 0.0;
        diff[..k]
            .iter()
            .map(|d| {
                acc += d;
                acc.max(0.0)
            })
            .collect()
    }

    pub fn capacities(&self, powers: &[f64]) -> Vec<f64> {
        powers
            .iter()
            .zip(&self.gains)
            .map(|(p, g)| (g * p.max(0.0)).ln_1p())
            .collect()
    }

    /// Capacity bound of every cumulative rate.
    pub fn window_caps(&self, capacities: &[f64]) -> TriMatrix {
        let prefix = prefix_sums(capacities);
        TriMatrix::from_fn(self.k(), |i, j| match self.range(i, j) {
            Some((a, b)) => prefix[b] - if a == 0 { 0.0 } else { prefix[a - 1] },
            None => 0.0,
        })
    }

    /// `Σ γ'_ij e^{-r_ij}` for consistent cumulative rates built from `source_rates`.
    pub fn objective(&self, source_rates: &[f64]) -> f64 {
        let k = self.k();
        let mut total = 0.0;
        for i in 0..k {
            let mut acc = 0.0;
            for j in (0..=i).rev() {
                acc += source_rates[j];
                let w = self.weights.get(i, j);
                if w > 0.0 {
                    total += w * (-acc).exp();
                }
            }
        }
        total
    }

    /// Largest feasible rates for the given slot capacities when windows are
    /// single slots.
    pub fn saturating_rates(&self, capacities: &[f64]) -> Vec<f64> {
        self.windows
            .iter()
            .map(|w| w.map_or(0.0, |(a, _)| capacities[a]))
            .collect()
    }

    /// Makes a target rate vector feasible by clipping sources in order: each
    /// source gets the smaller of its target and the capacity left by the
    /// sources before it.
    pub fn clip_rates(&self, target: &[f64], caps: &TriMatrix) -> Vec<f64> {
        let k = self.k();
        let mut rates = vec![0.0; k];
        for m in 0..k {
            let mut room = f64::INFINITY;
            let mut before = 0.0;
            for j in (0..=m).rev() {
                if j < m {
                    before += rates[j];
                }
                room = room.min(caps.get(m, j) - before);
            }
            rates[m] = target[m].min(room).max(0.0);
        }
        rates
    }
}
