//! Experiment configuration: a TOML document with top-level scenario keys
//! and optional `[solver]`, `[online]` and `[oracle]` tables.

use std::path::{Path, PathBuf};

use ehdl_core::model::PAPER_PROFILE_ENERGY;
use ehdl_core::online::ArrivalTrace;
use ehdl_core::{Scenario, SolveOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_REPLICATIONS: usize = 1000;
pub const DEFAULT_OUT: &str = "ehdl-out/";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    /// Malformed TOML or an unknown key; the message carries line and column.
    #[error("config syntax error: {0}")]
    Syntax(String),
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("cannot read `{path}`: {message}")]
    Io { path: PathBuf, message: String },
}

fn field(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SolveDc,
    SolveDt,
    Online,
    Benchmark,
    OracleCheck,
    Sweep,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SolveDc => "solve-dc",
            Mode::SolveDt => "solve-dt",
            Mode::Online => "online",
            Mode::Benchmark => "benchmark",
            Mode::OracleCheck => "oracle-check",
            Mode::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineSettings {
    pub intensities: Vec<f64>,
    pub packet_energy: f64,
    /// Traces per intensity when no seed list is given; seeds are `0..replications`.
    pub replications: usize,
}

impl Default for OnlineSettings {
    fn default() -> Self {
        Self {
            intensities: vec![1.0],
            packet_energy: 1.0,
            replications: DEFAULT_REPLICATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    /// Grid points per coordinate of the brute-force search.
    pub resolution: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self { resolution: 11 }
    }
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub energy: Vec<f64>,
    pub gains: Vec<f64>,
    pub source_variance: f64,
    /// Sorted, deduplicated.
    pub rho: Vec<f64>,
    /// Sorted, deduplicated.
    pub delays: Vec<usize>,
    pub solver: SolveOptions,
    pub out: Option<String>,
    pub seeds: Vec<u64>,
    /// Arrival trace file; when set its energy replaces `energy`.
    pub trace: Option<PathBuf>,
    pub online: OnlineSettings,
    pub oracle: OracleSettings,
}

/// The document as written. Every key is optional here; [`resolve`] applies
/// defaults and cross-field rules.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<Mode>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    paper_profile: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    energy: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gains: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solver: Option<SolveOptions>,
    #[serde(skip_serializing_if = "Option::is_none")]
    online: Option<OnlineSettings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleSettings>,
}

/// Parses and validates a configuration; relative trace paths are taken
/// from the working directory.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_at(text, Path::new("."))
}

/// Reads a configuration file; relative trace paths are taken from the
/// file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_config_at(&text, path.parent().unwrap_or(Path::new(".")))
}

fn parse_config_at(text: &str, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let doc: Document = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    resolve(doc, base)
}

fn resolve(doc: Document, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let trace = doc.trace.map(|p| if p.is_relative() { base.join(p) } else { p });
    let trace_energy = match &trace {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|e| field("trace", format!("{}: {e}", path.display())))?;
            Some(ArrivalTrace::read_csv(file).map_err(|e| field("trace", e.to_string()))?.energy)
        }
        None => None,
    };

    let (energy, gains, source_variance) = if doc.paper_profile {
        if doc.energy.is_some() || doc.gains.is_some() {
            return Err(field("paper_profile", "cannot be combined with `energy` or `gains`"));
        }
        let k = PAPER_PROFILE_ENERGY.len();
        (PAPER_PROFILE_ENERGY.to_vec(), vec![1.0; k], doc.source_variance.unwrap_or(1.0))
    } else {
        let energy = match (doc.energy, &trace_energy) {
            (Some(e), _) => e,
            (None, Some(t)) => t.clone(),
            (None, None) => return Err(field("energy", "required unless `paper_profile = true` or `trace` is set")),
        };
        let k = energy.len();
        (energy, doc.gains.unwrap_or_else(|| vec![1.0; k]), doc.source_variance.unwrap_or(1.0))
    };
    let energy = trace_energy.unwrap_or(energy);
    if energy.is_empty() {
        return Err(field("energy", "must not be empty"));
    }
    if let Some(k) = doc.k {
        if k != energy.len() {
            return Err(field("K", format!("is {k} but the energy profile has {} slots", energy.len())));
        }
    }
    if gains.len() != energy.len() {
        return Err(field("gains", format!("has {} entries, expected {}", gains.len(), energy.len())));
    }

    let rho = match (doc.rho, doc.rho_list) {
        (Some(_), Some(_)) => return Err(field("rho", "set either `rho` or `rho_list`, not both")),
        (Some(r), None) => vec![r],
        (None, Some(list)) => list,
        (None, None) => return Err(field("rho", "required (or `rho_list`)")),
    };
    let delays = match (doc.d, doc.d_list) {
        (Some(_), Some(_)) => return Err(field("d", "set either `d` or `d_list`, not both")),
        (Some(d), None) => vec![d],
        (None, Some(list)) => list,
        (None, None) => vec![1],
    };
    if rho.is_empty() {
        return Err(field("rho_list", "must not be empty"));
    }
    if delays.is_empty() {
        return Err(field("d_list", "must not be empty"));
    }

    let config = ExperimentConfig {
        mode: doc.mode,
        energy,
        gains,
        source_variance,
        rho: sorted(rho),
        delays: {
            let mut d = delays;
            d.sort_unstable();
            d.dedup();
            d
        },
        solver: doc.solver.unwrap_or_default(),
        out: doc.out,
        seeds: doc.seeds.unwrap_or_default(),
        trace,
        online: doc.online.unwrap_or_default(),
        oracle: doc.oracle.unwrap_or_default(),
    };
    config.validate()?;
    Ok(config)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

impl ExperimentConfig {
    pub fn slots(&self) -> usize {
        self.energy.len()
    }

    /// Re-checks every rule enforced by [`parse_config`], e.g. after
    /// command-line overrides.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for &r in &self.rho {
            self.scenario(r, 1)?;
        }
        for &d in &self.delays {
            self.scenario(self.rho[0], d)?;
        }
        if self.mode == Some(Mode::SolveDc) && self.delays != [1] {
            return Err(field("d", "solve-dc needs d = 1"));
        }
        self.solver.validate().map_err(core_field)?;
        let o = &self.online;
        if o.intensities.is_empty() {
            return Err(field("online.intensities", "must not be empty"));
        }
        if let Some(i) = o.intensities.iter().find(|i| !(i.is_finite() && **i >= 0.0)) {
            return Err(field("online.intensities", format!("must be finite and >= 0, got {i}")));
        }
        if !(o.packet_energy.is_finite() && o.packet_energy >= 0.0) {
            return Err(field("online.packet_energy", format!("must be finite and >= 0, got {}", o.packet_energy)));
        }
        if o.replications == 0 {
            return Err(field("online.replications", "must be positive"));
        }
        if self.oracle.resolution < 2 {
            return Err(field("oracle.resolution", "needs at least 2 grid points"));
        }
        Ok(())
    }

    pub fn scenario(&self, rho: f64, d: usize) -> Result<Scenario, ConfigError> {
        Scenario::new(d, self.energy.clone(), self.gains.clone(), self.source_variance, rho).map_err(core_field)
    }

    /// Seeds for the online Monte Carlo runs.
    pub fn online_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.online.replications as u64).collect()
        } else {
            self.seeds.clone()
        }
    }

    /// Canonical TOML form; [`parse_config`] maps it back to `self`.
    pub fn to_toml(&self) -> String {
        let doc = Document {
            mode: self.mode,
            k: Some(self.slots()),
            d_list: Some(self.delays.clone()),
            rho_list: Some(self.rho.clone()),
            energy: Some(self.energy.clone()),
            gains: Some(self.gains.clone()),
            source_variance: Some(self.source_variance),
            out: self.out.clone(),
            seeds: Some(self.seeds.clone()),
            trace: self.trace.clone(),
            solver: Some(self.solver.clone()),
            online: Some(self.online.clone()),
            oracle: Some(self.oracle.clone()),
            ..Document::default()
        };
        toml::to_string(&doc).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical form. The trace
    /// file enters through the energy it supplies, not through its path.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.trace = None;
        canonical.out = None;
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }
}

fn core_field(e: ehdl_core::Error) -> ConfigError {
    match e {
        ehdl_core::Error::Domain { field: f, reason } => field(f, reason),
        other => field("scenario", other.to_string()),
    }
}
