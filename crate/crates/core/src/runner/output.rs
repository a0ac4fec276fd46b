use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::TraceRow;

use super::Experiment;

pub const TRACE_HEADER: &str =
    "round,iter,uplink_bits,downlink_bits,train_loss,test_metric,sparsity,sum_h_norm,mean_h_norm,w_norm";

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidData(format!("{other:?}")),
    }
}

/// Writes one trace as CSV with shortest round-trip float formatting.
pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    if rows.is_empty() {
        w.write_record(TRACE_HEADER.split(',')).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

/// Writes `{dir}/{name}/trace_r{r}.csv` for every repeat and `{dir}/summary.json`.
pub fn emit_outputs(exp: &Experiment, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (alg, runs) in exp.summary.algorithms.iter().zip(&exp.runs) {
        for (rep, run) in alg.repeats.iter().zip(runs) {
            write_trace_csv(&dir.join(&rep.trace_file), &run.trace)?;
        }
    }
    let json = serde_json::to_string_pretty(&exp.summary).map_err(|e| Error::InvalidData(e.to_string()))?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}
