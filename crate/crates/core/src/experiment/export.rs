//! CSV and JSON serialization of sweep records.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ProtocolKind, SweepRecord};
use crate::bounds::ResourceKind;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Flags recorded with every export.
pub const MODELING_ASSUMPTIONS: &[&str] = &[
    "gaussian-step1-estimates",
    "distribution-level-ghz-measurement",
    "phase-wrapping-ignored",
    "fixed-index-max-expansion",
    "squared-curvature-coefficients",
    "unentangled-photon-oracle-weights",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportMetadata {
    pub tool_version: String,
    pub modeling_assumptions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix_ms: Option<u64>,
    /// Free-form description of the run (command line, options, seed).
    #[serde(default)]
    pub config: serde_json::Value,
}

impl ExportMetadata {
    pub fn new(config: serde_json::Value, timestamp: bool) -> Self {
        let created_unix_ms = timestamp.then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0)
        });
        Self {
            tool_version: crate::TOOL_VERSION.to_string(),
            modeling_assumptions: MODELING_ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
            created_unix_ms,
            config,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ExportDocument<T: Real> {
    pub metadata: ExportMetadata,
    pub records: Vec<SweepRecord<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct CsvRow<T: Real> {
    protocol: ProtocolKind,
    function: String,
    theta: String,
    resource_kind: ResourceKind,
    resource: T,
    trials: usize,
    mse: T,
    mse_se: T,
    bias: T,
    predicted_mse: T,
    bound: T,
    seed: u64,
    ms_elapsed: u64,
}

fn format_err(e: impl std::fmt::Display) -> Error {
    Error::Format(e.to_string())
}

/// Header row plus one row per record. `theta` is `;`-separated. When
/// `metadata` is given it is written first as `#`-prefixed JSON.
pub fn export_csv<T: Real, W: Write>(records: &[SweepRecord<T>], metadata: Option<&ExportMetadata>, mut out: W) -> Result<()> {
    if let Some(m) = metadata {
        let line = serde_json::to_string(m).map_err(format_err)?;
        writeln!(out, "# {line}").map_err(format_err)?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "protocol",
        "function",
        "theta",
        "resource_kind",
        "resource",
        "trials",
        "mse",
        "mse_se",
        "bias",
        "predicted_mse",
        "bound",
        "seed",
        "ms_elapsed",
    ])
    .map_err(format_err)?;
    for r in records {
        let theta = r.theta.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
        w.serialize(CsvRow {
            protocol: r.protocol,
            function: r.function.clone(),
            theta,
            resource_kind: r.resource_kind,
            resource: r.resource,
            trials: r.trials,
            mse: r.mse,
            mse_se: r.mse_se,
            bias: r.bias,
            predicted_mse: r.predicted_mse,
            bound: r.bound,
            seed: r.seed,
            ms_elapsed: r.ms_elapsed,
        })
        .map_err(format_err)?;
    }
    w.flush().map_err(format_err)?;
    Ok(())
}

pub fn export_json<T: Real, W: Write>(records: &[SweepRecord<T>], metadata: &ExportMetadata, mut out: W) -> Result<()> {
    let doc = ExportDocument { metadata: metadata.clone(), records: records.to_vec() };
    serde_json::to_writer_pretty(&mut out, &doc).map_err(format_err)?;
    writeln!(out).map_err(format_err)?;
    Ok(())
}

/// Writes records to `path` in the chosen format.
pub fn export<T: Real>(records: &[SweepRecord<T>], format: ExportFormat, metadata: &ExportMetadata, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    match format {
        ExportFormat::Csv => export_csv(records, Some(metadata), &mut out)?,
        ExportFormat::Json => export_json(records, metadata, &mut out)?,
    }
    out.flush().map_err(io_err)
}

pub fn import_json<T: Real, R: Read>(input: R) -> Result<ExportDocument<T>> {
    serde_json::from_reader(input).map_err(format_err)
}

/// Reads records written by [`export_csv`]; `#` lines are skipped.
pub fn import_csv<T: Real, R: Read>(input: R) -> Result<Vec<SweepRecord<T>>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    rd.deserialize::<CsvRow<T>>()
        .map(|row| {
            let row = row.map_err(format_err)?;
            let theta = if row.theta.is_empty() {
                Vec::new()
            } else {
                row.theta
                    .split(';')
                    .map(|s| s.parse::<f64>().map(T::lit).map_err(format_err))
                    .collect::<Result<_>>()?
            };
            Ok(SweepRecord {
                protocol: row.protocol,
                function: row.function,
                theta,
                resource_kind: row.resource_kind,
                resource: row.resource,
                trials: row.trials,
                mse: row.mse,
                mse_se: row.mse_se,
                bias: row.bias,
                predicted_mse: row.predicted_mse,
                bound: row.bound,
                seed: row.seed,
                ms_elapsed: row.ms_elapsed,
            })
        })
        .collect()
}
