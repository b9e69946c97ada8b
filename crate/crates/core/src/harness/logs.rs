use std::io::Write;
use std::path::Path;

use super::bench::ScalingRecord;
use super::train::TrainRecord;
use crate::error::{Error, Result};
use crate::oracle::CheckReport;

pub const TRAIN_HEADER: [&str; 11] = [
    "run_id",
    "method",
    "epoch",
    "step",
    "lr",
    "batch_size",
    "loss",
    "log_loss",
    "step_time_ns",
    "optimizer_bytes",
    "status",
];

pub const SCALING_HEADER: [&str; 7] = [
    "method",
    "depth",
    "width",
    "params",
    "median_step_ns",
    "optimizer_bytes",
    "status",
];

pub const CHECK_HEADER: [&str; 5] = ["check_name", "metric", "value", "tolerance", "status"];

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_rows<W: Write>(sink: W, path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn train_row(r: &TrainRecord) -> Vec<String> {
    vec![
        r.run_id.clone(),
        r.method.clone(),
        r.epoch.to_string(),
        r.step.to_string(),
        format_float(r.lr),
        r.batch_size.to_string(),
        format_float(r.loss),
        r.log_loss().map_or_else(|| "-inf".to_string(), format_float),
        r.step_time_ns.to_string(),
        r.optimizer_bytes.to_string(),
        r.status.to_string(),
    ]
}

/// Writes training records as CSV, one row per record in the given order.
pub fn emit_logs(records: &[TrainRecord], path: &Path) -> Result<()> {
    write_rows(create(path)?, path, &TRAIN_HEADER, records.iter().map(train_row))
}

pub fn write_train_csv<W: Write>(records: &[TrainRecord], sink: W) -> Result<()> {
    write_rows(
        sink,
        Path::new("<stream>"),
        &TRAIN_HEADER,
        records.iter().map(train_row),
    )
}

fn opt(v: Option<u64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn scaling_row(r: &ScalingRecord) -> Vec<String> {
    vec![
        r.method.to_string(),
        r.depth.to_string(),
        r.width.to_string(),
        r.params.to_string(),
        opt(r.median_step_ns),
        opt(r.optimizer_bytes),
        r.status.to_string(),
    ]
}

pub fn emit_scaling(records: &[ScalingRecord], path: &Path) -> Result<()> {
    write_rows(create(path)?, path, &SCALING_HEADER, records.iter().map(scaling_row))
}

pub fn write_scaling_csv<W: Write>(records: &[ScalingRecord], sink: W) -> Result<()> {
    write_rows(
        sink,
        Path::new("<stream>"),
        &SCALING_HEADER,
        records.iter().map(scaling_row),
    )
}

pub fn emit_checks(reports: &[CheckReport], path: &Path) -> Result<()> {
    let rows = reports.iter().map(|r| {
        vec![
            r.name.clone(),
            r.metric.clone(),
            format_float(r.value),
            format_float(r.tolerance),
            r.status().to_string(),
        ]
    });
    write_rows(create(path)?, path, &CHECK_HEADER, rows)
}
