//! Mode dispatch. Every mode fans its cells out over a rayon pool and
//! collects rows in cell order, so output bytes do not depend on the pool size.

use std::collections::BTreeMap;

use ehdl_core::online::{myopic_online_policy, poisson_trace, ArrivalTrace};
use ehdl_core::oracle::{benchmark_uncorrelated, brute_force_optimum, kkt_residuals, BRUTE_FORCE_MAX_SLOTS};
use ehdl_core::recovery::{recover_individual_rates, RecoveryProblem};
use ehdl_core::{solve_delay_constrained, solve_delay_tolerant, Scenario, Solution};
use rayon::prelude::*;

use crate::config::{ConfigError, ExperimentConfig, Mode};
use crate::output::{num, Artifact};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{cell}: {source}")]
    Solver { cell: String, source: ehdl_core::Error },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

/// Tables, human-readable summary lines, and the cells whose solves did
/// not converge.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub artifacts: Vec<Artifact>,
    pub summary: Vec<String>,
    pub unconverged: Vec<String>,
    /// Seeds actually used by the online mode.
    pub seeds: Vec<u64>,
}

type CellResult<T> = Result<T, RunError>;

fn cell_name(rho: f64, d: usize) -> String {
    format!("rho={} d={d}", num(rho))
}

fn solver_error(cell: String) -> impl FnOnce(ehdl_core::Error) -> RunError {
    move |source| RunError::Solver { cell, source }
}

pub fn run(config: &ExperimentConfig, mode: Mode, threads: usize) -> Result<RunReport, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let hash = config.hash();
    pool.install(|| match mode {
        Mode::SolveDc | Mode::SolveDt => solve_mode(config, mode, &hash),
        Mode::Sweep | Mode::Benchmark => sweep_mode(config, mode, &hash),
        Mode::Online => online_mode(config, &hash),
        Mode::OracleCheck => oracle_mode(config, &hash),
    })
}

fn grid(config: &ExperimentConfig) -> Vec<(f64, usize)> {
    config
        .rho
        .iter()
        .flat_map(|&r| config.delays.iter().map(move |&d| (r, d)))
        .collect()
}

fn solve(scenario: &Scenario, mode: Mode, opts: &ehdl_core::SolveOptions) -> ehdl_core::Result<Solution> {
    if mode == Mode::SolveDt || scenario.delay() > 1 {
        solve_delay_tolerant(scenario, opts)
    } else {
        solve_delay_constrained(scenario, opts)
    }
}

fn solve_mode(config: &ExperimentConfig, mode: Mode, hash: &str) -> Result<RunReport, RunError> {
    let results: Vec<CellResult<_>> = grid(config)
        .par_iter()
        .map(|&(rho, d)| {
            let s = config.scenario(rho, d)?;
            let sol = solve(&s, mode, &config.solver).map_err(solver_error(cell_name(rho, d)))?;
            let caps = sol.policy.capacities(s.gains());
            let rates = recover_individual_rates(
                &RecoveryProblem::new(sol.policy.source_rates(), caps, d).map_err(solver_error(cell_name(rho, d)))?,
            )
            .map_err(solver_error(cell_name(rho, d)))?;
            Ok((rho, d, s, sol, rates))
        })
        .collect();

    let mut power = Artifact::new("power.csv", &["slot", "rho", "d", "power", "cumulative_energy_in", "cumulative_energy_used"]);
    let mut distortion = Artifact::new("distortion.csv", &["source", "rho", "d", "D_i"]);
    let mut rates_csv = Artifact::new("rates.csv", &["slot", "source", "R_ij", "rho", "d"]);
    let mut trace = Artifact::new("trace.csv", &["iteration", "rel_error", "residual", "rho", "d"]);
    let mut report = RunReport::empty();
    for result in results {
        let (rho, d, s, sol, rates) = result?;
        let (r, dd) = (num(rho), d.to_string());
        let arrived = s.cumulative_energy();
        let mut used = 0.0;
        for (l, p) in sol.policy.powers.iter().enumerate() {
            used += p;
            power.push(vec![(l + 1).to_string(), r.clone(), dd.clone(), num(*p), num(arrived[l]), num(used)], hash);
        }
        push_distortion(&mut distortion, &sol.distortion.per_source, &r, &dd, hash);
        for (&(l, j), &v) in &rates {
            rates_csv.push(vec![(l + 1).to_string(), (j + 1).to_string(), num(v), r.clone(), dd.clone()], hash);
        }
        for ((iteration, err), point) in sol.trace.relative_errors().into_iter().zip(&sol.trace.points) {
            trace.push(vec![iteration.to_string(), num(err), num(point.primal_residual), r.clone(), dd.clone()], hash);
        }
        report.note(rho, d, sol.converged, format!("D_avg={} iterations={}", num(sol.distortion.average), sol.iterations));
    }
    report.artifacts = vec![power, distortion, rates_csv, trace];
    Ok(report)
}

fn push_distortion(table: &mut Artifact, per_source: &[f64], rho: &str, d: &str, hash: &str) {
    for (i, v) in per_source.iter().enumerate() {
        table.push(vec![(i + 1).to_string(), rho.to_string(), d.to_string(), num(*v)], hash);
    }
}

fn sweep_mode(config: &ExperimentConfig, mode: Mode, hash: &str) -> Result<RunReport, RunError> {
    let results: Vec<CellResult<_>> = grid(config)
        .par_iter()
        .map(|&(rho, d)| {
            let s = config.scenario(rho, d)?;
            let sol = solve(&s, mode, &config.solver).map_err(solver_error(cell_name(rho, d)))?;
            let bench = benchmark_uncorrelated(&s, &config.solver).map_err(solver_error(cell_name(rho, d)))?;
            Ok((rho, d, sol, bench))
        })
        .collect();

    let mut sweep = Artifact::new("sweep.csv", &["rho", "d", "D_avg", "D_avg_benchmark", "reduction"]);
    let mut distortion = Artifact::new("distortion.csv", &["source", "rho", "d", "D_i"]);
    let mut report = RunReport::empty();
    for result in results {
        let (rho, d, sol, bench) = result?;
        let (r, dd) = (num(rho), d.to_string());
        let reduction = (bench.average - sol.distortion.average) / bench.average;
        sweep.push(
            vec![r.clone(), dd.clone(), num(sol.distortion.average), num(bench.average), num(reduction)],
            hash,
        );
        push_distortion(&mut distortion, &sol.distortion.per_source, &r, &dd, hash);
        report.note(
            rho,
            d,
            sol.converged,
            format!("D_avg={} benchmark={} reduction={}", num(sol.distortion.average), num(bench.average), num(reduction)),
        );
    }
    report.artifacts = vec![sweep];
    if mode == Mode::Sweep {
        report.artifacts.push(distortion);
    }
    Ok(report)
}

fn online_mode(config: &ExperimentConfig, hash: &str) -> Result<RunReport, RunError> {
    let k = config.slots();
    let seeds: Vec<Option<u64>> = match config.trace {
        Some(_) => vec![None],
        None => {
            let mut s = config.online_seeds();
            s.sort_unstable();
            s.dedup();
            s.into_iter().map(Some).collect()
        }
    };
    let mut cells = Vec::new();
    for &intensity in &config.online.intensities {
        for (rho, d) in grid(config) {
            for &seed in &seeds {
                cells.push((intensity, rho, d, seed));
            }
        }
    }
    let results: Vec<CellResult<_>> = cells
        .par_iter()
        .map(|&(intensity, rho, d, seed)| {
            let name = format!("intensity={} {} seed={seed:?}", num(intensity), cell_name(rho, d));
            let template = config.scenario(rho, d)?;
            let trace = match seed {
                Some(seed) => poisson_trace(intensity, k, seed, config.online.packet_energy),
                None => ArrivalTrace::from_energy(config.energy.clone()),
            }
            .map_err(solver_error(name.clone()))?;
            let online = myopic_online_policy(&template, &trace, &config.solver).map_err(solver_error(name.clone()))?;
            let offline_scenario = template.with_energy(trace.energy).map_err(solver_error(name.clone()))?;
            let offline = solve(&offline_scenario, Mode::Online, &config.solver).map_err(solver_error(name.clone()))?;
            Ok((name, online, offline))
        })
        .collect();

    let mut table = Artifact::new("online.csv", &["intensity", "rho", "d", "seed", "D_online", "D_offline"]);
    let mut report = RunReport::empty();
    // mean relative gap per (intensity, rho, d)
    let mut gaps: BTreeMap<usize, (String, f64, usize)> = BTreeMap::new();
    for (n, (result, &(intensity, rho, d, seed))) in results.into_iter().zip(&cells).enumerate() {
        let (name, online, offline) = result?;
        let (on, off) = (online.distortion.average, offline.distortion.average);
        table.push(
            vec![
                num(intensity),
                num(rho),
                d.to_string(),
                seed.map_or(String::new(), |s| s.to_string()),
                num(on),
                num(off),
            ],
            hash,
        );
        if !(online.converged && offline.converged) {
            report.unconverged.push(name);
        }
        let entry = gaps
            .entry(n / seeds.len())
            .or_insert_with(|| (format!("intensity={} {}", num(intensity), cell_name(rho, d)), 0.0, 0));
        entry.1 += (on - off) / off;
        entry.2 += 1;
    }
    report.summary = gaps
        .into_values()
        .map(|(name, sum, count)| format!("{name} traces={count} mean_gap={}", num(sum / count as f64)))
        .collect();
    report.seeds = seeds.into_iter().flatten().collect();
    report.artifacts = vec![table];
    Ok(report)
}

fn oracle_mode(config: &ExperimentConfig, hash: &str) -> Result<RunReport, RunError> {
    let brute = config.slots() <= BRUTE_FORCE_MAX_SLOTS;
    let results: Vec<CellResult<_>> = grid(config)
        .par_iter()
        .map(|&(rho, d)| {
            let s = config.scenario(rho, d)?;
            let err = || solver_error(cell_name(rho, d));
            let sol = solve(&s, Mode::OracleCheck, &config.solver).map_err(err())?;
            let kkt = kkt_residuals(&s, &sol.policy, &sol.duals).map_err(err())?;
            let reference = if brute {
                Some(brute_force_optimum(&s, config.oracle.resolution).map_err(err())?.1.average)
            } else {
                None
            };
            Ok((rho, d, sol, kkt, reference))
        })
        .collect();

    let mut table = Artifact::new(
        "oracle.csv",
        &["rho", "d", "D_solver", "D_brute", "abs_diff", "kkt_stationarity", "kkt_slackness", "kkt_primal", "kkt_dual"],
    );
    let mut report = RunReport::empty();
    for result in results {
        let (rho, d, sol, kkt, reference) = result?;
        let ours = sol.distortion.average;
        let blank = String::new;
        table.push(
            vec![
                num(rho),
                d.to_string(),
                num(ours),
                reference.map_or_else(blank, num),
                reference.map_or_else(blank, |b| num((ours - b).abs())),
                num(kkt.stationarity),
                num(kkt.complementary_slackness),
                num(kkt.primal_feasibility),
                num(kkt.dual_feasibility),
            ],
            hash,
        );
        report.note(rho, d, sol.converged, format!("D_avg={} kkt_max={}", num(ours), num(kkt.max())));
    }
    report.artifacts = vec![table];
    Ok(report)
}

impl RunReport {
    fn empty() -> Self {
        Self {
            artifacts: Vec::new(),
            summary: Vec::new(),
            unconverged: Vec::new(),
            seeds: Vec::new(),
        }
    }

    fn note(&mut self, rho: f64, d: usize, converged: bool, line: String) {
        let name = cell_name(rho, d);
        if !converged {
            self.unconverged.push(name.clone());
        }
        self.summary.push(format!("{name} {line} converged={converged}"));
    }
}
