//! Water-filling primitives.
//!
//! [`directional_waterfill`] maximizes `Σ W_i log(1 + g_i p_i)` under energy
//! causality: water poured at an arrival may only flow forward in time, so
//! the water levels of consecutive epochs are non-decreasing.
//! [`reverse_waterfill_rate`] is the per-component rate rule of reverse
//! water-filling, applied to the cumulative rates.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, domain, Result};
use crate::model::Scenario;
use crate::tri::TriMatrix;

/// Multipliers below this are treated as zero by the rate rule.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Rate returned when the dual price of a cumulative rate vanishes.
pub const RATE_CAP: f64 = 50.0;

/// Widths `W_i` and gains `g_i` of the directional water-filling problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfillWeights {
    pub widths: Vec<f64>,
    pub gains: Vec<f64>,
}

impl WaterfillWeights {
    pub fn new(widths: Vec<f64>, gains: Vec<f64>) -> Result<Self> {
        check_len("gains", widths.len(), gains.len())?;
        if let Some(w) = widths.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(domain("widths", format!("must be finite and >= 0, got {w}")));
        }
        if let Some(g) = gains.iter().find(|g| !g.is_finite() || **g < 0.0) {
            return Err(domain("gains", format!("must be finite and >= 0, got {g}")));
        }
        Ok(Self { widths, gains })
    }

    /// Floor height `1 / (g_i W_i)` of every slot; infinite where the slot
    /// cannot hold water.
    pub fn heights(&self) -> Vec<f64> {
        self.widths
            .iter()
            .zip(&self.gains)
            .map(|(w, g)| if w * g > 0.0 { 1.0 / (g * w) } else { f64::INFINITY })
            .collect()
    }

    fn usable(&self, i: usize) -> bool {
        self.widths[i] > 0.0 && self.gains[i] > 0.0
    }
}

/// Result of a directional water-filling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfillSolution {
    pub powers: Vec<f64>,
    /// Water level `ν` of the epoch containing each slot. `0` marks a leading
    /// epoch without energy, `+∞` an epoch whose energy cannot be used.
    pub levels: Vec<f64>,
    /// Half-open slot ranges of the merged epochs.
    pub epochs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy)]
struct Epoch {
    start: usize,
    end: usize,
    budget: f64,
    level: f64,
}

/// Solves `Σ_{i∈[start,end)} [W_i ν - 1/g_i]^+ = budget` for `ν` exactly; the
/// left side is piecewise linear and increasing in `ν`.
fn epoch_level(weights: &WaterfillWeights, start: usize, end: usize, budget: f64) -> f64 {
    if budget <= 0.0 {
        return 0.0;
    }
    let mut slots: Vec<(f64, usize)> = (start..end)
        .filter(|&i| weights.usable(i))
        .map(|i| (1.0 / (weights.gains[i] * weights.widths[i]), i))
        .collect();
    if slots.is_empty() {
        return f64::INFINITY;
    }
    slots.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut width = 0.0;
    let mut offset = 0.0;
    for (n, &(threshold, i)) in slots.iter().enumerate() {
        width += weights.widths[i];
        offset += 1.0 / weights.gains[i];
        let level = (budget + offset) / width;
        let next = slots.get(n + 1).map_or(f64::INFINITY, |s| s.0);
        if level <= next {
            debug_assert!(level >= threshold);
            return level;
        }
    }
    unreachable!("last breakpoint is unbounded")
}

/// Maximizes `Σ W_i log(1 + g_i p_i)` subject to `Σ_{j≤i} p_j ≤ Σ_{j≤i} E_j`
/// and `p ≥ 0`.
///
/// Slots are split into epochs at every arrival; each epoch is filled to
/// its own level and adjacent epochs are merged (pool-adjacent-violators)
/// whenever an earlier level exceeds a later one.
pub fn directional_waterfill(weights: &WaterfillWeights, energy: &[f64]) -> Result<WaterfillSolution> {
    let k = weights.widths.len();
    check_len("energy", k, energy.len())?;
    if let Some(e) = energy.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(domain("energy", format!("arrivals must be finite and >= 0, got {e}")));
    }

    let mut stack: Vec<Epoch> = Vec::new();
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && energy[end] <= 0.0 {
            end += 1;
        }
        let budget: f64 = energy[start..end].iter().sum();
        let mut epoch = Epoch {
            start,
            end,
            budget,
            level: epoch_level(weights, start, end, budget),
        };
        while let Some(prev) = stack.last() {
            // a leading epoch without energy never donates water
            if prev.budget <= 0.0 || prev.level <= epoch.level {
                break;
            }
            let prev = stack.pop().expect("checked above");
            let budget = prev.budget + epoch.budget;
            epoch = Epoch {
                start: prev.start,
                end: epoch.end,
                budget,
                level: epoch_level(weights, prev.start, epoch.end, budget),
            };
        }
        stack.push(epoch);
        start = end;
    }

    let mut powers = vec![0.0; k];
    let mut levels = vec![0.0; k];
    for e in &stack {
        for i in e.start..e.end {
            levels[i] = e.level;
            if e.level.is_finite() && weights.usable(i) {
                powers[i] = (weights.widths[i] * e.level - 1.0 / weights.gains[i]).max(0.0);
            }
        }
    }
    Ok(WaterfillSolution {
        powers,
        levels,
        epochs: stack.iter().map(|e| (e.start, e.end)).collect(),
    })
}

/// Lower-triangular table of the weights `γ_ij`, which include the `1/K`
/// averaging factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaTable(pub TriMatrix);

impl GammaTable {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

/// `γ_i1 = σ²ρ^{i-1}/K` and `γ_ij = σ²(1-ρ)ρ^{i-j}/K` for `j ≥ 2` (one-based).
pub fn gamma_table(scenario: &Scenario) -> GammaTable {
    let k = scenario.slots();
    let scale = scenario.source_variance() / k as f64;
    let rho = scenario.correlation();
    GammaTable(TriMatrix::from_fn(k, |i, j| {
        let decay = rho.powi((i - j) as i32);
        if j == 0 {
            scale * decay
        } else {
            scale * (1.0 - rho) * decay
        }
    }))
}

/// Minimizer over `r ≥ 0` of `γ e^{-r} + level · r`, i.e. `[log(γ/level)]^+`.
///
/// A price at or below [`LAMBDA_FLOOR`] yields [`RATE_CAP`].
pub fn reverse_waterfill_rate(gamma: f64, level: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(domain("gamma", format!("must be >= 0, got {gamma}")));
    }
    if level <= LAMBDA_FLOOR {
        return Ok(RATE_CAP);
    }
    if gamma == 0.0 {
        return Ok(0.0);
    }
    Ok((gamma / level).ln().clamp(0.0, RATE_CAP))
}

/// Per-pair distortions `D_ij = min(λ_ij, γ_ij)` and per-source totals.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionSplit {
    /// `D_ij`, carrying the same `1/K` factor as the weights.
    pub pairs: TriMatrix,
    /// `K Σ_j D_ij`: the distortion of each source in variance units.
    pub per_source: Vec<f64>,
}

pub fn distortion_split(gamma: &GammaTable, levels: &TriMatrix) -> Result<DistortionSplit> {
    check_len("levels", gamma.dim(), levels.dim())?;
    let pairs = TriMatrix::from_fn(gamma.dim(), |i, j| {
        let (g, l) = (gamma.get(i, j), levels.get(i, j));
        if l < g {
            l
        } else {
            g
        }
    });
    let k = gamma.dim() as f64;
    let per_source = (0..gamma.dim())
        .map(|i| k * (0..=i).map(|j| pairs.get(i, j)).sum::<f64>())
        .collect();
    Ok(DistortionSplit { pairs, per_source })
}
