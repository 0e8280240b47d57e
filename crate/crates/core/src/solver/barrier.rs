//! Log-barrier Newton refinement of a feasible point.
//!
//! Works on the reduced variables: powers of slots that can carry rate and
//! source rates of sources that can use such a slot. Every other variable is
//! pinned at zero. Iterates stay strictly feasible, so the returned point
//! passes the feasibility check as is.

use nalgebra::{DMatrix, DVector};

use super::program::Program;
use crate::model::prefix_sums;
use crate::tri::TriMatrix;

const GROWTH: f64 = 20.0;
const MAX_T: f64 = 1e15;
const NEWTON_LIMIT: usize = 200;
const ARMIJO: f64 = 0.25;

pub(crate) struct Polished {
    pub powers: Vec<f64>,
    pub source_rates: Vec<f64>,
    /// Multiplier estimates `1/(t·slack)` of the capacity constraints.
    pub lambda: TriMatrix,
    /// Duality gap bound `m/t`, infinite when the last centering failed.
    pub gap: f64,
}

struct CapRow {
    i: usize,
    j: usize,
    /// (variable, gain) for the reduced powers in the capacity range.
    pvars: Vec<(usize, f64)>,
    svars: Vec<usize>,
}

struct Layout {
    k: usize,
    np: usize,
    ns: usize,
    pslot: Vec<usize>,
    ssrc: Vec<usize>,
    budget: Vec<f64>,
    caps: Vec<CapRow>,
}

impl Layout {
    fn n(&self) -> usize {
        self.np + self.ns
    }

    fn constraints(&self) -> usize {
        2 * self.np + self.ns + self.caps.len()
    }

    fn source_rates(&self, x: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.k];
        for (v, &m) in self.ssrc.iter().enumerate() {
            s[m] = x[self.np + v];
        }
        s
    }

    fn powers(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.k];
        for (v, &l) in self.pslot.iter().enumerate() {
            p[l] = x[v];
        }
        p
    }

    /// Slacks in the order: powers, rates, energy prefixes, capacities.
    fn slacks(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.constraints());
        out.extend_from_slice(x);
        let mut spent = 0.0;
        for v in 0..self.np {
            spent += x[v];
            out.push(self.budget[v] - spent);
        }
        for row in &self.caps {
            out.push(self.cap_slack(row, x));
        }
        out.iter().all(|s| *s > 0.0 && s.is_finite()).then_some(out)
    }

    fn cap_slack(&self, row: &CapRow, x: &[f64]) -> f64 {
        let c: f64 = row.pvars.iter().map(|&(v, g)| (g * x[v]).ln_1p()).sum();
        let r: f64 = row.svars.iter().map(|&v| x[self.np + v]).sum();
        c - r
    }
}

fn layout(program: &Program) -> Layout {
    let k = program.k();
    let envelope = prefix_sums(&program.arrivals);
    let mut covered = vec![false; k];
    for &(a, b) in program.windows.iter().flatten() {
        covered[a..=b].iter_mut().for_each(|c| *c = true);
    }
    let free: Vec<bool> = (0..k)
        .map(|l| program.gains[l] > 0.0 && envelope[l] > 0.0 && covered[l])
        .collect();
    let pslot: Vec<usize> = (0..k).filter(|&l| free[l]).collect();
    let ssrc: Vec<usize> = (0..k)
        .filter(|&m| program.windows[m].is_some_and(|(a, b)| free[a..=b].iter().any(|f| *f)))
        .collect();
    let mut pvar = vec![None; k];
    pslot.iter().enumerate().for_each(|(v, &l)| pvar[l] = Some(v));
    let mut svar = vec![None; k];
    ssrc.iter().enumerate().for_each(|(v, &m)| svar[m] = Some(v));

    let mut caps = Vec::new();
    for i in 0..k {
        for j in 0..=i {
            let svars: Vec<usize> = (j..=i).filter_map(|m| svar[m]).collect();
            if svars.is_empty() {
                continue;
            }
            let (a, b) = program.range(i, j).expect("free source has a window");
            let pvars = (a..=b)
                .filter_map(|l| pvar[l].map(|v| (v, program.gains[l])))
                .collect();
            caps.push(CapRow { i, j, pvars, svars });
        }
    }
    Layout {
        k,
        np: pslot.len(),
        ns: ssrc.len(),
        budget: pslot.iter().map(|&l| envelope[l]).collect(),
        pslot,
        ssrc,
        caps,
    }
}

/// Strictly feasible point independent of the incumbent.
fn interior_point(lay: &Layout) -> Vec<f64> {
    let mut x = vec![0.0; lay.n()];
    if lay.np == 0 {
        return x;
    }
    let share = lay.budget[0] / (2.0 * lay.np as f64);
    x[..lay.np].iter_mut().for_each(|p| *p = share);
    let mut bound = vec![f64::INFINITY; lay.ns];
    for row in &lay.caps {
        let c: f64 = row.pvars.iter().map(|&(v, g)| (g * x[v]).ln_1p()).sum();
        let each = c / row.svars.len() as f64;
        for &v in &row.svars {
            bound[v] = bound[v].min(each);
        }
    }
    for (v, b) in bound.into_iter().enumerate() {
        x[lay.np + v] = 0.5 * b;
    }
    x
}

struct Eval {
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

/// `e^{-r_ij}`-weighted terms `γ'_ij e^{-r_ij}` for the current rates.
fn weighted_terms(program: &Program, rates: &[f64]) -> TriMatrix {
    let k = program.k();
    let mut out = TriMatrix::zeros(k);
    for i in 0..k {
        let mut acc = 0.0;
        for j in (0..=i).rev() {
            acc += rates[j];
            let w = program.weights.get(i, j);
            if w > 0.0 {
                out.set(i, j, w * (-acc).exp());
            }
        }
    }
    out
}

fn evaluate(program: &Program, lay: &Layout, x: &[f64], slacks: &[f64], t: f64) -> Eval {
    let n = lay.n();
    let np = lay.np;
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);

    // objective
    let rates = lay.source_rates(x);
    let terms = weighted_terms(program, &rates);
    let mut svar = vec![None; lay.k];
    lay.ssrc.iter().enumerate().for_each(|(v, &m)| svar[m] = Some(np + v));
    for ((i, j), w) in terms.iter() {
        if w == 0.0 {
            continue;
        }
        let idx: Vec<usize> = (j..=i).filter_map(|m| svar[m]).collect();
        for &a in &idx {
            grad[a] -= t * w;
            for &b in &idx {
                hess[(a, b)] += t * w;
            }
        }
    }

    // positivity
    for v in 0..n {
        let s = slacks[v];
        grad[v] -= 1.0 / s;
        hess[(v, v)] += 1.0 / (s * s);
    }
    // energy prefixes: slack = budget - Σ_{u ≤ v} p_u
    for v in 0..np {
        let s = slacks[n + v];
        let inv = 1.0 / s;
        for a in 0..=v {
            grad[a] += inv;
            for b in 0..=v {
                hess[(a, b)] += inv * inv;
            }
        }
    }
    // capacities
    for (row, &h) in lay.caps.iter().zip(&slacks[n + np..]) {
        let mut dh: Vec<(usize, f64)> = Vec::with_capacity(row.pvars.len() + row.svars.len());
        for &(v, g) in &row.pvars {
            let d = g / (1.0 + g * x[v]);
            dh.push((v, d));
            // -∇²h / h, with ∇²h = -d² on the diagonal
            hess[(v, v)] += d * d / h;
        }
        dh.extend(row.svars.iter().map(|&v| (np + v, -1.0)));
        for &(a, da) in &dh {
            grad[a] -= da / h;
            for &(b, db) in &dh {
                hess[(a, b)] += da * db / (h * h);
            }
        }
    }
    Eval { grad, hess }
}

/// Change of the barrier objective along `dx`, computed without cancellation.
fn merit_change(
    program: &Program,
    lay: &Layout,
    x: &[f64],
    slacks: &[f64],
    dx: &[f64],
    t: f64,
) -> f64 {
    let n = lay.n();
    let rates = lay.source_rates(x);
    let drates = lay.source_rates(dx);
    let terms = weighted_terms(program, &rates);
    let mut df = 0.0;
    for i in 0..lay.k {
        let mut acc = 0.0;
        for j in (0..=i).rev() {
            acc += drates[j];
            let w = terms.get(i, j);
            if w != 0.0 {
                df += w * (-acc).exp_m1();
            }
        }
    }
    let mut dbar = 0.0;
    for c in 0..n {
        dbar -= (dx[c] / slacks[c]).ln_1p();
    }
    let mut dspent = 0.0;
    for v in 0..lay.np {
        dspent += dx[v];
        dbar -= (-dspent / slacks[n + v]).ln_1p();
    }
    for (r, row) in lay.caps.iter().enumerate() {
        let c = n + lay.np + r;
        let dc: f64 = row
            .pvars
            .iter()
            .map(|&(v, g)| (g * dx[v] / (1.0 + g * x[v])).ln_1p())
            .sum();
        let ds: f64 = row.svars.iter().map(|&v| dx[lay.np + v]).sum();
        dbar -= ((dc - ds) / slacks[c]).ln_1p();
    }
    t * df + dbar
}

fn newton_direction(e: &Eval) -> Option<DVector<f64>> {
    let rhs = -&e.grad;
    let mut h = e.hess.clone();
    let scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(0.0, f64::max);
    let mut ridge = 0.0;
    for _ in 0..8 {
        if let Some(ch) = h.clone().cholesky() {
            return Some(ch.solve(&rhs));
        }
        ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 100.0 };
        h = e.hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += ridge;
        }
    }
    None
}

/// Refines `(powers, source_rates)`, which must be feasible for `program`,
/// until the barrier duality gap drops below `gap_target`.
pub(crate) fn polish(
    program: &Program,
    powers: &[f64],
    source_rates: &[f64],
    gap_target: f64,
) -> Option<Polished> {
    let lay = layout(program);
    let k = lay.k;
    if lay.ns == 0 {
        return Some(Polished {
            powers: vec![0.0; k],
            source_rates: vec![0.0; k],
            lambda: TriMatrix::zeros(k),
            gap: 0.0,
        });
    }
    let n = lay.n();
    let interior = interior_point(&lay);
    lay.slacks(&interior)?;
    let incumbent: Vec<f64> = lay
        .pslot
        .iter()
        .map(|&l| powers[l])
        .chain(lay.ssrc.iter().map(|&m| source_rates[m]))
        .collect();
    let mut x: Vec<f64> = incumbent
        .iter()
        .zip(&interior)
        .map(|(a, b)| 0.99 * a + 0.01 * b)
        .collect();
    let mut slacks = match lay.slacks(&x) {
        Some(s) => s,
        None => {
            x = interior.clone();
            lay.slacks(&x)?
        }
    };

    let m = lay.constraints() as f64;
    let f0 = program.objective(&lay.source_rates(&x)).max(1e-12);
    // gap m/t starts at the objective itself, so the start is near the
    // central path even when the incumbent is poor
    let mut t = m / f0;
    let mut dx = vec![0.0; n];
    let mut centered;
    loop {
        centered = false;
        for _ in 0..NEWTON_LIMIT {
            let e = evaluate(program, &lay, &x, &slacks, t);
            let Some(dir) = newton_direction(&e) else { break };
            let dec2 = -e.grad.dot(&dir);
            if !(dec2 > 1e-9) {
                centered = true;
                break;
            }
            let mut step = 1.0;
            let mut moved = false;
            while step > 1e-18 {
                for v in 0..n {
                    dx[v] = step * dir[v];
                }
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
                if let Some(ts) = lay.slacks(&trial) {
                    let change = merit_change(program, &lay, &x, &slacks, &dx, t);
                    if change <= -ARMIJO * step * dec2 {
                        x = trial;
                        slacks = ts;
                        moved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if !centered || m / t <= gap_target || t >= MAX_T {
            break;
        }
        t *= GROWTH;
    }

    let mut lambda = TriMatrix::zeros(k);
    for (row, &h) in lay.caps.iter().zip(&slacks[n + lay.np..]) {
        lambda.set(row.i, row.j, 1.0 / (t * h));
    }
    Some(Polished {
        powers: lay.powers(&x),
        source_rates: lay.source_rates(&x),
        lambda,
        gap: if centered { m / t } else { f64::INFINITY },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Scenario;

    #[test]
    fn single_slot_optimum() {
        let s = Scenario::new(1, vec![1.0], vec![1.0], 1.0, 0.3).unwrap();
        let prog = Program::from_scenario(&s);
        let out = polish(&prog, &[0.5], &[0.1], 1e-9).unwrap();
        assert!((out.powers[0] - 1.0).abs() < 1e-9);
        assert!((out.source_rates[0] - 2f64.ln()).abs() < 1e-9);
        // λ = γ e^{-r} = 1/2
        assert!((out.lambda.get(0, 0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn two_slot_delay_example() {
        let s = Scenario::new(2, vec![2.0, 0.0], vec![1.0, 1.0], 1.0, 1.0).unwrap();
        let prog = Program::from_scenario(&s);
        let out = polish(&prog, &[1.0, 0.5], &[0.5, 0.0], 1e-12).unwrap();
        assert!((out.powers[0] - 1.0).abs() < 1e-6);
        assert!((out.powers[1] - 1.0).abs() < 1e-6);
        assert!((prog.objective(&out.source_rates) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn dry_instance_is_trivial() {
        let s = Scenario::new(1, vec![0.0; 3], vec![1.0; 3], 1.0, 0.3).unwrap();
        let out = polish(&Program::from_scenario(&s), &[0.0; 3], &[0.0; 3], 1e-12).unwrap();
        assert_eq!(out.powers, vec![0.0; 3]);
    }
}
