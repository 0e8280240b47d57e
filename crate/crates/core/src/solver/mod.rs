//! Dual subgradient ascent for the delay-constrained and delay-tolerant
//! problems.
//!
//! Each iteration computes powers by directional water-filling and rates by
//! reverse water-filling from the current multipliers, then takes a
//! normalized subgradient step. Iterates are projected onto the feasible set
//! to keep a best-so-far incumbent, which a barrier Newton stage finally
//! refines to high accuracy.

mod barrier;
pub(crate) mod program;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::{distortion_closed_form, DistortionReport, Policy, Scenario};
use crate::tri::TriMatrix;
use crate::waterfill::{directional_waterfill, reverse_waterfill_rate, WaterfillWeights};
use program::Program;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Relative change of the incumbent distortion under which the ascent
    /// counts as stalled.
    pub tolerance: f64,
    /// `ᾱ` in the step `ᾱ/√t/‖g‖₂` for λ.
    pub step_scale: f64,
    /// Same for μ.
    pub mu_step_scale: f64,
    pub trace_every: usize,
    /// Iterations over which the stall test looks back.
    pub stall_window: usize,
    /// Stop at the first stall instead of running `max_iterations`.
    pub early_stop: bool,
    /// Refine the incumbent with the barrier Newton stage.
    pub polish: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200_000,
            tolerance: 1e-6,
            step_scale: 1.0,
            mu_step_scale: 1.0,
            trace_every: 100,
            stall_window: 1000,
            early_stop: true,
            polish: true,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(domain("max_iterations", "must be positive"));
        }
        for (field, v) in [
            ("tolerance", self.tolerance),
            ("step_scale", self.step_scale),
            ("mu_step_scale", self.mu_step_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(domain(field, format!("must be positive, got {v}")));
            }
        }
        if self.trace_every == 0 {
            return Err(domain("trace_every", "must be positive"));
        }
        if self.stall_window == 0 {
            return Err(domain("stall_window", "must be positive"));
        }
        Ok(())
    }
}

/// Multipliers of the capacity (`lambda`) and consistency (`mu`) constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: TriMatrix,
    /// Present only for windows longer than one slot. Diagonal entries unused.
    pub mu: Option<TriMatrix>,
}

impl DualState {
    pub fn zeros(k: usize, with_mu: bool) -> Self {
        Self {
            lambda: TriMatrix::zeros(k),
            mu: with_mu.then(|| TriMatrix::zeros(k)),
        }
    }

    /// `μ̄`: `μ_ij` off the diagonal, `-Σ μ_ij` over pairs `j < i` covering `m`
    /// on it. All zero without `mu`.
    pub fn mu_bar(&self) -> TriMatrix {
        let k = self.lambda.dim();
        let Some(mu) = &self.mu else {
            return TriMatrix::zeros(k);
        };
        let diag = mu_bar_diagonal(mu);
        TriMatrix::from_fn(k, |i, j| if i == j { diag[i] } else { mu.get(i, j) })
    }
}

pub(crate) fn mu_bar_diagonal(mu: &TriMatrix) -> Vec<f64> {
    let k = mu.dim();
    let mut diff = vec![0.0; k + 1];
    for ((i, j), v) in mu.iter() {
        if j < i {
            diff[j] -= v;
            diff[i + 1] += v;
        }
    }
    let mut acc = 0.0;
    diff[..k]
        .iter()
        .map(|d| {
            acc += d;
            acc
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    /// Average distortion of the best feasible point so far.
    pub best_distortion: f64,
    pub primal_residual: f64,
    pub dual_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub points: Vec<TracePoint>,
    /// Average distortion of the returned policy.
    pub final_distortion: f64,
}

impl SolveTrace {
    /// `(t, |D* - D_t| / D*)` for every recorded point.
    pub fn relative_errors(&self) -> Vec<(usize, f64)> {
        let d = self.final_distortion;
        self.points
            .iter()
            .map(|p| (p.iteration, (d - p.best_distortion).abs() / d))
            .collect()
    }

    /// Relative error at the last recorded iteration not after `t`.
    pub fn relative_error_at(&self, t: usize) -> Option<f64> {
        self.relative_errors()
            .into_iter()
            .take_while(|(i, _)| *i <= t)
            .last()
            .map(|(_, e)| e)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub policy: Policy,
    pub distortion: DistortionReport,
    pub trace: SolveTrace,
    pub duals: DualState,
    pub iterations: usize,
    /// False when the result is only the best point seen within the
    /// iteration budget.
    pub converged: bool,
}

/// Solves the problem with one-slot windows.
pub fn solve_delay_constrained(scenario: &Scenario, opts: &SolveOptions) -> Result<Solution> {
    if scenario.delay() != 1 {
        return Err(domain(
            "delay",
            format!("the delay-constrained solver needs d = 1, got {}", scenario.delay()),
        ));
    }
    solve_scenario(scenario, opts, false)
}

/// Solves the problem with windows of `d` slots.
pub fn solve_delay_tolerant(scenario: &Scenario, opts: &SolveOptions) -> Result<Solution> {
    solve_scenario(scenario, opts, true)
}

fn solve_scenario(scenario: &Scenario, opts: &SolveOptions, with_mu: bool) -> Result<Solution> {
    let program = Program::from_scenario(scenario);
    let raw = solve_program(&program, opts, with_mu)?;
    let distortion = distortion_closed_form(scenario, &raw.source_rates)?;
    let policy = Policy::from_source_rates(raw.powers, &raw.source_rates);
    let trace = SolveTrace {
        points: raw.points,
        final_distortion: distortion.average,
    };
    Ok(Solution {
        policy,
        distortion,
        trace,
        duals: raw.duals,
        iterations: raw.iterations,
        converged: raw.converged,
    })
}

pub(crate) struct RawSolution {
    pub powers: Vec<f64>,
    pub source_rates: Vec<f64>,
    pub duals: DualState,
    pub points: Vec<TracePoint>,
    pub iterations: usize,
    pub converged: bool,
}

/// One projected subgradient step on `state` from the iterate's cumulative
/// rates and its window capacities.
fn step(
    state: &mut DualState,
    rates: &TriMatrix,
    caps: &TriMatrix,
    t: usize,
    opts: &SolveOptions,
) {
    let mut norm2 = 0.0;
    for ((i, j), r) in rates.iter() {
        norm2 += (r - caps.get(i, j)).powi(2);
    }
    if state.mu.is_some() {
        for i in 0..rates.dim() {
            let mut diag = rates.get(i, i);
            for j in (0..i).rev() {
                diag += rates.get(j, j);
                norm2 += (rates.get(i, j) - diag).powi(2);
            }
        }
    }
    let norm = norm2.sqrt();
    if norm == 0.0 {
        return;
    }
    let root = (t as f64).sqrt();
    let a_lambda = opts.step_scale / root / norm;
    let a_mu = opts.mu_step_scale / root / norm;
    for ((i, j), r) in rates.iter() {
        let l = state.lambda.get_mut(i, j);
        *l = (*l + a_lambda * (r - caps.get(i, j))).max(0.0);
    }
    if let Some(mu) = &mut state.mu {
        for i in 0..rates.dim() {
            let mut diag = rates.get(i, i);
            for j in (0..i).rev() {
                diag += rates.get(j, j);
                *mu.get_mut(i, j) += a_mu * (rates.get(i, j) - diag);
            }
        }
    }
}

/// Applies one multiplier update at iteration `t ≥ 1` for the iterate held
/// in `primal` (whose cumulative rates need not be consistent).
pub fn dual_step(
    state: &DualState,
    primal: &Policy,
    scenario: &Scenario,
    t: usize,
    opts: &SolveOptions,
) -> Result<DualState> {
    if t == 0 {
        return Err(domain("t", "iterations count from 1"));
    }
    let program = Program::from_scenario(scenario);
    let caps = program.window_caps(&program.capacities(&primal.powers));
    let mut next = state.clone();
    step(&mut next, &primal.cumulative_rates, &caps, t, opts);
    Ok(next)
}

pub(crate) fn solve_program(program: &Program, opts: &SolveOptions, with_mu: bool) -> Result<RawSolution> {
    opts.validate()?;
    let k = program.k();
    let single = program.single_slot_windows();
    let mut state = DualState::zeros(k, with_mu);
    let mut best_rates = vec![0.0; k];
    let mut best_powers = vec![0.0; k];
    let mut best = program.objective(&best_rates);
    let mut history = Vec::with_capacity(opts.max_iterations.min(1 << 16));
    let mut points = Vec::new();
    let mut rates = TriMatrix::zeros(k);
    let mut stalled = false;
    let mut iterations = 0;

    for t in 1..=opts.max_iterations {
        iterations = t;
        let widths = program.widths(&state.lambda);
        let wf = directional_waterfill(
            &WaterfillWeights::new(widths, program.gains.clone())?,
            &program.arrivals,
        )?;
        let slot_caps = program.capacities(&wf.powers);
        let caps = program.window_caps(&slot_caps);

        let mu_diag = state.mu.as_ref().map(mu_bar_diagonal);
        for ((i, j), r) in rates.values_mut().iter_mut().enumerate().map(|(n, r)| (tri_index(n), r)) {
            let mut level = state.lambda.get(i, j);
            if let Some(mu) = &state.mu {
                level += if i == j { mu_diag.as_ref().unwrap()[i] } else { mu.get(i, j) };
            }
            *r = reverse_waterfill_rate(program.weights.get(i, j), level)?;
        }

        let candidate = if single {
            program.saturating_rates(&slot_caps)
        } else {
            program.clip_rates(&rates.diagonal(), &caps)
        };
        let value = program.objective(&candidate);
        if value < best {
            best = value;
            best_rates = candidate;
            best_powers = wf.powers.clone();
        }
        history.push(best);

        step(&mut state, &rates, &caps, t, opts);
        if t == 1 || t % opts.trace_every == 0 {
            points.push(TracePoint {
                iteration: t,
                best_distortion: best,
                primal_residual: primal_residual(&rates, &caps, with_mu),
                dual_norm: dual_norm(&state),
            });
        }
        if t > opts.stall_window {
            let old = history[t - 1 - opts.stall_window];
            if old - best <= opts.tolerance * best {
                stalled = true;
                if opts.early_stop {
                    break;
                }
            }
        }
    }
    if points.last().map(|p| p.iteration) != Some(iterations) {
        points.push(TracePoint {
            iteration: iterations,
            best_distortion: best,
            primal_residual: primal_residual(&rates, &TriMatrix::zeros(k), with_mu),
            dual_norm: dual_norm(&state),
        });
    }

    let mut converged = stalled;
    let mut duals = state;
    let (mut powers, mut source_rates) = (best_powers, best_rates);
    if opts.polish {
        let target = 1e-9 * best.max(1e-12);
        if let Some(out) = barrier::polish(program, &powers, &source_rates, target) {
            let mut polished_rates = out.source_rates;
            if single {
                polished_rates = program.saturating_rates(&program.capacities(&out.powers));
            }
            let value = program.objective(&polished_rates);
            // a centred barrier point is within its gap of the optimum, so
            // it is kept even when the incumbent is marginally lower
            if out.gap.is_finite() || value <= best {
                powers = out.powers;
                source_rates = polished_rates;
                duals = certified_duals(program, &source_rates, out.lambda, with_mu && !single);
                converged = out.gap <= target;
            }
        }
    }
    Ok(RawSolution {
        powers,
        source_rates,
        duals,
        points,
        iterations,
        converged,
    })
}

/// Position `(i, j)` of the `n`-th stored entry of a triangular matrix.
fn tri_index(n: usize) -> (usize, usize) {
    let mut i = (((8 * n + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    while (i + 1) * (i + 2) / 2 <= n {
        i += 1;
    }
    while i * (i + 1) / 2 > n {
        i -= 1;
    }
    (i, n - i * (i + 1) / 2)
}

fn primal_residual(rates: &TriMatrix, caps: &TriMatrix, with_mu: bool) -> f64 {
    let mut sum = 0.0;
    for ((i, j), r) in rates.iter() {
        sum += (r - caps.get(i, j)).max(0.0).powi(2);
    }
    if with_mu {
        for i in 0..rates.dim() {
            let mut diag = rates.get(i, i);
            for j in (0..i).rev() {
                diag += rates.get(j, j);
                sum += (rates.get(i, j) - diag).powi(2);
            }
        }
    }
    sum.sqrt()
}

fn dual_norm(state: &DualState) -> f64 {
    let mu = state.mu.as_ref().map_or(0.0, |m| m.norm());
    state.lambda.norm().hypot(mu)
}

/// Multipliers that satisfy rate stationarity exactly at `source_rates`.
///
/// With one-slot windows every capacity constraint is tight and
/// `λ_ij = γ_ij e^{-r_ij}`. Otherwise λ comes from the barrier and μ absorbs
/// the off-diagonal stationarity equations.
fn certified_duals(program: &Program, source_rates: &[f64], barrier_lambda: TriMatrix, with_mu: bool) -> DualState {
    let k = program.k();
    let cumulative = TriMatrix::cumulative(source_rates);
    let marginal = TriMatrix::from_fn(k, |i, j| program.weights.get(i, j) * (-cumulative.get(i, j)).exp());
    if !with_mu {
        return DualState {
            lambda: marginal,
            mu: None,
        };
    }
    let mut lambda = barrier_lambda;
    let mu = TriMatrix::from_fn(k, |i, j| if i == j { 0.0 } else { marginal.get(i, j) - lambda.get(i, j) });
    // sources left out of the barrier stage: their capacity is zero, so λ is
    // free to absorb the diagonal equation
    let diag = mu_bar_diagonal(&mu);
    let caps = program.window_caps(&vec![0.0; k]);
    for m in 0..k {
        if source_rates[m] == 0.0 && lambda.get(m, m) == 0.0 && caps.get(m, m) == 0.0 {
            lambda.set(m, m, (marginal.get(m, m) - diag[m]).max(0.0));
        }
    }
    DualState { lambda, mu: Some(mu) }
}
