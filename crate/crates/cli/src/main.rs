use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use ehdl::config::DEFAULT_OUT;
use ehdl::output::thread_count;
use ehdl::{load_config, run, write_outputs, ConfigError, Mode, RunError, EXIT_INVALID_CONFIG, EXIT_NOT_CONVERGED};

/// Power and rate allocation experiments for correlated sources over an
/// energy-harvesting link.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    mode: Mode,
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output path prefix; a trailing `/` writes into that directory.
    #[arg(long)]
    out: Option<String>,
    /// Online Monte Carlo seed; repeat for several. Replaces the config list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

fn invalid(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_INVALID_CONFIG as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = match load_config(&cli.config) {
        Ok(c) => c,
        Err(e) => return invalid(e),
    };
    config.mode = Some(cli.mode);
    if !cli.seeds.is_empty() {
        config.seeds = cli.seeds.clone();
    }
    if let Some(n) = cli.max_iter {
        config.solver.max_iterations = n;
    }
    if let Some(t) = cli.tol {
        config.solver.tolerance = t;
    }
    if let Some(out) = &cli.out {
        config.out = Some(out.clone());
    }
    if let Err(e) = config.validate() {
        return invalid(e);
    }
    let threads = match thread_count(std::env::var("EHDL_THREADS").ok().as_deref()) {
        Ok(n) => n,
        Err(e) => return invalid(e),
    };

    match execute(&config, cli.mode, threads) {
        Ok(code) => code,
        Err(e) => {
            if let Some(RunError::Config(c)) = e.downcast_ref::<RunError>() {
                return invalid(c);
            }
            if let Some(c) = e.downcast_ref::<ConfigError>() {
                return invalid(c);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(config: &ehdl::ExperimentConfig, mode: Mode, threads: usize) -> anyhow::Result<ExitCode> {
    let report = run(config, mode, threads)?;
    let prefix = config.out.as_deref().unwrap_or(DEFAULT_OUT);
    let written = write_outputs(prefix, config, mode.name(), &report).with_context(|| format!("writing outputs under {prefix}"))?;
    println!("{} config {} on {threads} threads", mode.name(), config.hash());
    for line in &report.summary {
        println!("  {line}");
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    if report.unconverged.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("not converged: {}", report.unconverged.join(", "));
        Ok(ExitCode::from(EXIT_NOT_CONVERGED as u8))
    }
}
