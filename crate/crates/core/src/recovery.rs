//! Individual per-slot rates from optimal source totals.
//!
//! Source `j` may send in the slots of its window. The system
//!
//! ```text
//! Σ_{l ∈ window(j)} R_lj = r_j      for every source j
//! Σ_{j : l ∈ window(j)} R_lj ≤ c_l  for every slot l
//! R ≥ 0
//! ```
//!
//! is underdetermined; the minimum 2-norm solution is returned.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, domain, Error, Result};
use crate::model::IndividualRates;

/// Tolerance on the residuals of recovered rates.
pub const RECOVERY_TOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryProblem {
    source_rates: Vec<f64>,
    capacities: Vec<f64>,
    windows: Vec<Option<(usize, usize)>>,
}

impl RecoveryProblem {
    /// Windows `[j, min(j + d - 1, K - 1)]`.
    pub fn new(source_rates: Vec<f64>, capacities: Vec<f64>, delay: usize) -> Result<Self> {
        let k = source_rates.len();
        if delay == 0 || delay > k.max(1) {
            return Err(domain("delay", format!("must lie in 1..={k}, got {delay}")));
        }
        let windows = (0..k).map(|j| Some((j, (j + delay - 1).min(k - 1)))).collect();
        Self::with_windows(source_rates, capacities, windows)
    }

    /// Arbitrary windows; `None` marks a source that may not transmit.
    pub fn with_windows(
        source_rates: Vec<f64>,
        capacities: Vec<f64>,
        windows: Vec<Option<(usize, usize)>>,
    ) -> Result<Self> {
        let k = capacities.len();
        check_len("source_rates", k, source_rates.len())?;
        check_len("windows", k, windows.len())?;
        for (field, v) in [("source_rates", &source_rates), ("capacities", &capacities)] {
            if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(domain(field, format!("entries must be finite and >= 0, got {x}")));
            }
        }
        for w in windows.iter().flatten() {
            if w.0 > w.1 || w.1 >= k {
                return Err(domain("windows", format!("window {w:?} out of range")));
            }
        }
        Ok(Self {
            source_rates,
            capacities,
            windows,
        })
    }

    pub fn slots(&self) -> usize {
        self.capacities.len()
    }

    pub fn source_rates(&self) -> &[f64] {
        &self.source_rates
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    /// `(slot, source)` of every variable.
    fn variables(&self) -> Vec<(usize, usize)> {
        let mut vars = Vec::new();
        for (j, w) in self.windows.iter().enumerate() {
            if let Some((a, b)) = *w {
                vars.extend((a..=b).map(|l| (l, j)));
            }
        }
        vars
    }

    /// Standard form `[A_eq 0; A_slot I] (R, slack) = (r, c)`.
    fn standard_form(&self) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.slots();
        let vars = self.variables();
        let n = vars.len();
        let mut a = DMatrix::zeros(2 * k, n + k);
        for (v, &(l, j)) in vars.iter().enumerate() {
            a[(j, v)] = 1.0;
            a[(k + l, v)] = 1.0;
        }
        for l in 0..k {
            a[(k + l, n + l)] = 1.0;
        }
        let b = DVector::from_iterator(2 * k, self.source_rates.iter().chain(&self.capacities).copied());
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible,
    /// `certificate` has one entry per source row then one per slot row of
    /// the standard form; `value = yᵀb < 0`.
    Infeasible { certificate: Vec<f64>, value: f64 },
}

/// Decides feasibility of the individual-rate system by a phase-one simplex
/// and returns a verified Farkas certificate when it has no solution.
pub fn feasibility_certificate(problem: &RecoveryProblem) -> Result<Feasibility> {
    let (a, b) = problem.standard_form();
    let scale = b.iter().fold(1.0f64, |m, x| m.max(*x));
    let (value, y) = phase_one(&a, &b)?;
    if value <= 1e-9 * scale {
        return Ok(Feasibility::Feasible);
    }
    let z: DVector<f64> = -y;
    let za = a.tr_mul(&z);
    let zb = z.dot(&b);
    if za.iter().all(|v| *v >= -1e-10) && zb < -1e-10 {
        Ok(Feasibility::Infeasible {
            certificate: z.iter().copied().collect(),
            value: zb,
        })
    } else {
        Err(Error::Numerical(format!(
            "phase one reports infeasibility {value:.3e} but the certificate does not verify"
        )))
    }
}

/// Minimizes `Σ a_i` over `A x + a = b`, `x, a ≥ 0` with `b ≥ 0` by a dense
/// tableau simplex under Bland's rule. Returns the optimal value and the
/// optimal dual `y` (`yᵀA ≤ 0`, `y ≤ 1`).
fn phase_one(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let (m, n) = a.shape();
    let cols = n + m;
    let mut t = DMatrix::zeros(m, cols + 1);
    t.view_mut((0, 0), (m, n)).copy_from(a);
    for i in 0..m {
        t[(i, n + i)] = 1.0;
        t[(i, cols)] = b[i];
    }
    let cost = |j: usize| if j >= n { 1.0 } else { 0.0 };
    let mut basis: Vec<usize> = (n..cols).collect();
    let eps = 1e-12;

    for _ in 0..100_000 {
        // reduced costs d_j = c_j - c_Bᵀ T_j
        let entering = (0..cols).find(|&j| {
            let z: f64 = (0..m).map(|i| cost(basis[i]) * t[(i, j)]).sum();
            cost(j) - z < -eps
        });
        let Some(e) = entering else {
            let value: f64 = (0..m).map(|i| cost(basis[i]) * t[(i, cols)]).sum();
            // artificial column i holds B⁻¹e_i, so y_i = c_Bᵀ B⁻¹ e_i
            let y = DVector::from_fn(m, |i, _| (0..m).map(|r| cost(basis[r]) * t[(r, n + i)]).sum());
            return Ok((value, y));
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if t[(i, e)] > eps {
                let ratio = t[(i, cols)] / t[(i, e)];
                leave = match leave {
                    Some((r, best)) if ratio > best + eps || (ratio > best - eps && basis[i] > basis[r]) => {
                        Some((r, best))
                    }
                    _ => Some((i, ratio)),
                };
            }
        }
        let Some((r, _)) = leave else {
            return Err(Error::Numerical("phase one is unbounded".into()));
        };
        let pivot = t[(r, e)];
        for j in 0..=cols {
            t[(r, j)] /= pivot;
        }
        for i in 0..m {
            if i != r {
                let f = t[(i, e)];
                if f != 0.0 {
                    for j in 0..=cols {
                        t[(i, j)] -= f * t[(r, j)];
                    }
                }
            }
        }
        basis[r] = e;
    }
    Err(Error::Numerical("phase one did not terminate".into()))
}

/// Minimum 2-norm individual rates, keyed by `(slot, source)`.
///
/// Dual coordinate ascent finds the support `R_lj = [a_j - b_l]^+`; the
/// rates are then recomputed on that support as the minimum-norm solution of
/// the active equations.
pub fn recover_individual_rates(problem: &RecoveryProblem) -> Result<IndividualRates> {
    if let Feasibility::Infeasible { certificate, value } = feasibility_certificate(problem)? {
        return Err(Error::Infeasible { certificate, value });
    }
    let k = problem.slots();
    let vars = problem.variables();
    let r = &problem.source_rates;
    let c = &problem.capacities;
    let mut slot_users: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut source_slots: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &(l, j) in &vars {
        slot_users[l].push(j);
        source_slots[j].push(l);
    }

    let mut a = vec![0.0; k];
    let mut b = vec![0.0; k];
    for sweep in 0..MAX_SWEEPS {
        for j in 0..k {
            if !source_slots[j].is_empty() {
                let thresholds: Vec<f64> = source_slots[j].iter().map(|&l| b[l]).collect();
                a[j] = solve_threshold_sum(&thresholds, r[j]);
            }
        }
        for l in 0..k {
            let tops: Vec<f64> = slot_users[l].iter().map(|&j| a[j]).collect();
            let load: f64 = tops.iter().map(|x| x.max(0.0)).sum();
            // Σ [a_j - b]^+ = c is the threshold equation in u = -b
            b[l] = if load <= c[l] {
                0.0
            } else {
                -solve_threshold_sum(&tops.iter().map(|x| -x).collect::<Vec<_>>(), c[l])
            };
        }
        if sweep % 16 == 15 {
            let support: Vec<usize> = (0..vars.len())
                .filter(|&v| a[vars[v].1] - b[vars[v].0] > 0.0)
                .collect();
            let tight: Vec<usize> = (0..k).filter(|&l| b[l] > 0.0).collect();
            if let Some(rates) = refine(problem, &vars, &support, &tight) {
                return Ok(rates);
            }
        }
    }
    let rates: IndividualRates = vars.iter().map(|&(l, j)| ((l, j), (a[j] - b[l]).max(0.0))).collect();
    if residual(problem, &rates) <= 1e-8 {
        Ok(rates)
    } else {
        Err(Error::Numerical("individual-rate recovery did not converge".into()))
    }
}

/// Solves `Σ [x - t_i]^+ = target` for `x`. A zero target returns the
/// smallest threshold.
fn solve_threshold_sum(thresholds: &[f64], target: f64) -> f64 {
    let mut t = thresholds.to_vec();
    t.sort_by(f64::total_cmp);
    if target <= 0.0 {
        return t[0];
    }
    let mut acc = 0.0;
    for n in 1..=t.len() {
        acc += t[n - 1];
        let x = (target + acc) / n as f64;
        if n == t.len() || x <= t[n] {
            return x;
        }
    }
    unreachable!("loop returns at n = len")
}

/// Minimum-norm solution of the source equations and the tight slot
/// equations restricted to `support`, if it is feasible.
fn refine(
    problem: &RecoveryProblem,
    vars: &[(usize, usize)],
    support: &[usize],
    tight: &[usize],
) -> Option<IndividualRates> {
    let k = problem.slots();
    let sources: Vec<usize> = (0..k).filter(|&j| problem.source_rates[j] > 0.0).collect();
    let rows = sources.len() + tight.len();
    let mut m = DMatrix::zeros(rows, support.len());
    let mut h = DVector::zeros(rows);
    for (row, &j) in sources.iter().enumerate() {
        h[row] = problem.source_rates[j];
        for (col, &v) in support.iter().enumerate() {
            if vars[v].1 == j {
                m[(row, col)] = 1.0;
            }
        }
    }
    for (n, &l) in tight.iter().enumerate() {
        let row = sources.len() + n;
        h[row] = problem.capacities[l];
        for (col, &v) in support.iter().enumerate() {
            if vars[v].0 == l {
                m[(row, col)] = 1.0;
            }
        }
    }
    let x = if support.is_empty() {
        DVector::zeros(0)
    } else {
        m.clone().svd(true, true).solve(&h, 1e-12).ok()?
    };
    let mut rates: IndividualRates = vars.iter().map(|&key| (key, 0.0)).collect();
    for (col, &v) in support.iter().enumerate() {
        if x[col] < -RECOVERY_TOL {
            return None;
        }
        rates.insert(vars[v], x[col].max(0.0));
    }
    (residual(problem, &rates) <= RECOVERY_TOL).then_some(rates)
}

/// Largest violation of the source equations and slot capacities.
fn residual(problem: &RecoveryProblem, rates: &IndividualRates) -> f64 {
    let k = problem.slots();
    let mut per_source = vec![0.0; k];
    let mut per_slot = vec![0.0; k];
    for (&(l, j), &v) in rates {
        per_source[j] += v;
        per_slot[l] += v;
    }
    let mut worst: f64 = 0.0;
    for j in 0..k {
        worst = worst.max((per_source[j] - problem.source_rates[j]).abs());
        worst = worst.max(per_slot[j] - problem.capacities[j]);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn one_slot_windows_copy_rates() {
        let p = RecoveryProblem::new(vec![0.3, 0.0, 0.7], vec![0.5, 0.2, 0.7], 1).unwrap();
        let r = recover_individual_rates(&p).unwrap();
        assert_eq!(r[&(0, 0)], 0.3);
        assert_eq!(r[&(1, 1)], 0.0);
        assert_eq!(r[&(2, 2)], 0.7);
    }

    #[test]
    fn forced_spill_into_next_slot() {
        let p = RecoveryProblem::new(vec![2.0 * LN2, 0.0], vec![LN2, LN2], 2).unwrap();
        let r = recover_individual_rates(&p).unwrap();
        assert_relative_eq!(r[&(0, 0)], LN2, epsilon = 1e-12);
        assert_relative_eq!(r[&(1, 0)], LN2, epsilon = 1e-12);
        assert_relative_eq!(r[&(1, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_split_minimizes_norm() {
        let p = RecoveryProblem::new(vec![LN2, 0.0], vec![LN2, LN2], 2).unwrap();
        let r = recover_individual_rates(&p).unwrap();
        assert_relative_eq!(r[&(0, 0)], LN2 / 2.0, epsilon = 1e-12);
        assert_relative_eq!(r[&(1, 0)], LN2 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn excess_demand_has_certificate() {
        let p = RecoveryProblem::new(vec![10.0], vec![LN2], 1).unwrap();
        match feasibility_certificate(&p).unwrap() {
            Feasibility::Infeasible { certificate, value } => {
                assert!(value < 0.0);
                assert_eq!(certificate.len(), 2);
            }
            Feasibility::Feasible => panic!("demand exceeds capacity"),
        }
        assert!(matches!(recover_individual_rates(&p), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn zero_demand_is_feasible() {
        let p = RecoveryProblem::new(vec![0.0; 3], vec![0.4, 0.1, 0.0], 2).unwrap();
        assert_eq!(feasibility_certificate(&p).unwrap(), Feasibility::Feasible);
        let r = recover_individual_rates(&p).unwrap();
        assert!(r.values().all(|v| *v == 0.0));
    }

    #[test]
    fn threshold_sum_solver() {
        assert_relative_eq!(solve_threshold_sum(&[0.0, 1.0], 0.5), 0.5);
        assert_relative_eq!(solve_threshold_sum(&[0.0, 1.0], 3.0), 2.0);
    }
}
