//! Myopic online policy and seeded Poisson arrival traces.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, domain, Error, Result};
use crate::model::{distortion_closed_form, DistortionReport, IndividualRates, Policy, Scenario};
use crate::recovery::{recover_individual_rates, RecoveryProblem};
use crate::solver::program::Program;
use crate::solver::{solve_program, SolveOptions};
use crate::tri::TriMatrix;
use crate::waterfill::gamma_table;

/// Energy harvested in each slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalTrace {
    pub energy: Vec<f64>,
    /// Generator parameters when the trace was drawn by [`poisson_trace`].
    pub seed: Option<u64>,
    pub intensity: Option<f64>,
    pub packet_energy: f64,
}

impl ArrivalTrace {
    pub fn from_energy(energy: Vec<f64>) -> Result<Self> {
        if let Some(e) = energy.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(domain("energy", format!("arrivals must be finite and >= 0, got {e}")));
        }
        Ok(Self {
            energy,
            seed: None,
            intensity: None,
            packet_energy: 1.0,
        })
    }

    /// Writes `slot,energy` rows with one-based slots.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Numerical(format!("trace export failed: {e}"));
        w.write_record(["slot", "energy"]).map_err(io)?;
        for (slot, e) in self.energy.iter().enumerate() {
            w.write_record([(slot + 1).to_string(), format!("{e:?}")]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Numerical(format!("trace export failed: {e}")))
    }

    /// Reads the format of [`ArrivalTrace::write_csv`]; slots must be `1..=K` in order.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            slot: usize,
            energy: f64,
        }
        let mut energy = Vec::new();
        for (n, row) in csv::Reader::from_reader(reader).deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| domain("trace", e.to_string()))?;
            if row.slot != n + 1 {
                return Err(domain("trace", format!("expected slot {}, found {}", n + 1, row.slot)));
            }
            energy.push(row.energy);
        }
        Self::from_energy(energy)
    }
}

/// Per-slot energy `packet_energy × Poisson(intensity)`. Slot `l` draws from
/// stream `l` of a ChaCha8 generator seeded with `seed`, so every slot is
/// reproducible on its own.
pub fn poisson_trace(intensity: f64, slots: usize, seed: u64, packet_energy: f64) -> Result<ArrivalTrace> {
    if !(intensity >= 0.0 && intensity.is_finite()) {
        return Err(domain("intensity", format!("must be finite and >= 0, got {intensity}")));
    }
    if !(packet_energy >= 0.0 && packet_energy.is_finite()) {
        return Err(domain("packet_energy", format!("must be finite and >= 0, got {packet_energy}")));
    }
    let dist = (intensity > 0.0)
        .then(|| Poisson::new(intensity).map_err(|e| domain("intensity", e.to_string())))
        .transpose()?;
    let energy = (0..slots)
        .map(|slot| {
            let Some(dist) = &dist else { return 0.0 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(slot as u64);
            packet_energy * rng.sample(dist)
        })
        .collect();
    Ok(ArrivalTrace {
        energy,
        seed: Some(seed),
        intensity: Some(intensity),
        packet_energy,
    })
}

#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub policy: Policy,
    pub distortion: DistortionReport,
    /// Slots at which the offline problem was re-solved.
    pub decisions: Vec<usize>,
    /// Whether every re-solve converged.
    pub converged: bool,
}

/// Re-solves the offline problem at slot 0 and at every arrival, assuming
/// nothing more will arrive, and keeps that plan until the next arrival.
///
/// Rates already delivered to a source stay fixed; a source whose window
/// reaches past the arrival may receive more rate in its remaining slots.
pub fn myopic_online_policy(template: &Scenario, trace: &ArrivalTrace, opts: &SolveOptions) -> Result<OnlineOutcome> {
    let k = template.slots();
    check_len("trace", k, trace.energy.len())?;
    let scenario = template.with_energy(trace.energy.clone())?;
    let gamma = gamma_table(&scenario);
    let decisions: Vec<usize> = (0..k).filter(|&l| l == 0 || trace.energy[l] > 0.0).collect();

    let mut powers = vec![0.0; k];
    let mut delivered = vec![0.0; k];
    let mut individual = IndividualRates::new();
    let mut unspent = 0.0;
    let mut converged = true;
    for (n, &start) in decisions.iter().enumerate() {
        let end = decisions.get(n + 1).copied().unwrap_or(k);
        let mut arrivals = vec![0.0; k];
        arrivals[start] = unspent + trace.energy[start];
        let gains = (0..k).map(|l| if l < start { 0.0 } else { scenario.gains()[l] }).collect();
        let windows: Vec<Option<(usize, usize)>> = (0..k)
            .map(|j| {
                let (a, b) = scenario.window(j);
                (b >= start).then_some((a.max(start), b))
            })
            .collect();
        let weights = TriMatrix::from_fn(k, |i, j| {
            let past: f64 = delivered[j..=i].iter().sum();
            gamma.get(i, j) * (-past).exp()
        });
        let program = Program::new(gains, arrivals, windows.clone(), weights);
        let raw = solve_program(&program, opts, scenario.delay() > 1)?;
        converged &= raw.converged;

        let capacities = program.capacities(&raw.powers);
        let plan = recover_individual_rates(&RecoveryProblem::with_windows(
            raw.source_rates.clone(),
            capacities,
            windows,
        )?)?;
        for l in start..end {
            powers[l] = raw.powers[l];
            unspent -= raw.powers[l];
        }
        for (&(l, j), &v) in &plan {
            if (start..end).contains(&l) && v > 0.0 {
                individual.insert((l, j), v);
                delivered[j] += v;
            }
        }
        // slots strictly between decisions harvest nothing
        unspent += trace.energy[start];
    }
    let distortion = distortion_closed_form(&scenario, &delivered)?;
    let mut policy = Policy::from_source_rates(powers, &delivered);
    policy.individual_rates = Some(individual);
    Ok(OnlineOutcome {
        policy,
        distortion,
        decisions,
        converged,
    })
}
