//! Writing tables and sweep records to stdout or a file.

use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::Value;

use qsn_core::experiment::{export, export_csv, export_json, ExportFormat, ExportMetadata, SweepRecord};

use crate::Failure;

fn format_error(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(qsn_core::Error::Format(e.to_string()))
}

pub fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Small keyed table for the one-row commands.
pub struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<Value>>,
}

#[derive(Serialize)]
struct TableDocument<'a> {
    metadata: &'a ExportMetadata,
    records: Vec<serde_json::Map<String, Value>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn csv(&self, meta: &ExportMetadata) -> Result<String, Failure> {
        let cell = |v: &Value| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).map_err(format_error)?;
        for row in &self.rows {
            w.write_record(row.iter().map(cell)).map_err(format_error)?;
        }
        let body = w.into_inner().map_err(|e| format_error(e.error()))?;
        let mut s = format!("# {}\n", serde_json::to_string(meta).map_err(format_error)?);
        s.push_str(&String::from_utf8_lossy(&body));
        Ok(s)
    }

    fn json(&self, meta: &ExportMetadata) -> String {
        let records = self
            .rows
            .iter()
            .map(|row| self.columns.iter().map(|c| c.to_string()).zip(row.iter().cloned()).collect())
            .collect();
        let mut s = serde_json::to_string_pretty(&TableDocument { metadata: meta, records }).unwrap_or_default();
        s.push('\n');
        s
    }
}

pub struct Emitter {
    json: bool,
    out: Option<PathBuf>,
}

impl Emitter {
    pub fn new(json: bool, out: Option<PathBuf>) -> Self {
        Self { json, out }
    }

    pub fn table(&self, table: &Table, meta: &ExportMetadata, stdout: &mut dyn Write) -> Result<(), Failure> {
        let text = if self.json { table.json(meta) } else { table.csv(meta)? };
        match &self.out {
            Some(path) => std::fs::write(path, text).map_err(|source| qsn_core::Error::Io { path: path.clone(), source })?,
            None => stdout
                .write_all(text.as_bytes())
                .map_err(|source| qsn_core::Error::Io { path: "<stdout>".into(), source })?,
        }
        Ok(())
    }

    pub fn records(
        &self,
        records: &[SweepRecord<f64>],
        format: ExportFormat,
        meta: &ExportMetadata,
        stdout: &mut dyn Write,
    ) -> Result<(), Failure> {
        match &self.out {
            Some(path) => export(records, format, meta, path)?,
            None => match format {
                ExportFormat::Csv => export_csv(records, Some(meta), stdout)?,
                ExportFormat::Json => export_json(records, meta, stdout)?,
            },
        }
        Ok(())
    }
}
