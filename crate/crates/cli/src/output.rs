//! Output files and the error-to-exit-code mapping.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use hilbert_mfg::population::CostReport;
use hilbert_mfg::{ContractionCertificate, MfgError};
use serde::Serialize;

/// Bumped whenever any CSV column set changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CliError {
    Model(MfgError),
    Io(std::io::Error),
    Csv(csv::Error),
    Json(serde_json::Error),
    Pool(rayon::ThreadPoolBuildError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(MfgError::NonConvergence(_)) => 2,
            CliError::Model(MfgError::Validation(_) | MfgError::Parse { .. }) => 3,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Model(e) => e.fmt(f),
            CliError::Io(e) => e.fmt(f),
            CliError::Csv(e) => e.fmt(f),
            CliError::Json(e) => e.fmt(f),
            CliError::Pool(e) => e.fmt(f),
        }
    }
}

impl From<MfgError> for CliError {
    fn from(e: MfgError) -> Self {
        CliError::Model(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Csv(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Json(e)
    }
}

impl From<rayon::ThreadPoolBuildError> for CliError {
    fn from(e: rayon::ThreadPoolBuildError) -> Self {
        CliError::Pool(e)
    }
}

/// Writes `# hilbert-mfg <schema> v<version>` followed by a headed CSV table.
pub fn write_csv<H, R, I>(path: &Path, schema: &str, header: &[H], rows: I) -> Result<(), CliError>
where
    H: AsRef<str>,
    R: IntoIterator<Item = String>,
    I: IntoIterator<Item = R>,
{
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# hilbert-mfg {schema} v{CSV_SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header.iter().map(|h| h.as_ref()))?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
pub struct SolveSummary {
    pub iterations: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub contraction_ratios: Vec<f64>,
    pub riccati_max_norm: f64,
    pub mean_field_sup: f64,
    pub certificate: ContractionCertificate,
}

#[derive(Serialize)]
pub struct CertifyReport {
    pub certificate: ContractionCertificate,
    pub t_max: Option<f64>,
    /// `null` when the certificate fails even for tiny horizons.
    pub feasible_horizon: Option<f64>,
}

#[derive(Serialize)]
pub struct AgentCost {
    pub agent: usize,
    pub running: f64,
    pub terminal: f64,
    pub total: f64,
}

impl From<CostReport> for AgentCost {
    fn from(c: CostReport) -> Self {
        Self { agent: c.agent, running: c.running_cost, terminal: c.terminal_cost, total: c.total }
    }
}

#[derive(Serialize)]
pub struct CostSummary {
    pub seed: u64,
    pub path: u64,
    pub n_agents: usize,
    pub mean_total: f64,
    pub agents: Vec<AgentCost>,
}
