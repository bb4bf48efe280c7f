use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::labels::Label;

use super::{LossCurve, MetricsReport};

pub const METRICS_HEADER: &str =
    "manifest_id,data,arch,embedding,seed,lr,weighted_f1,accuracy,f1_B,f1_I,f1_O,gap";
pub const LOSS_CURVE_HEADER: &str = "epoch,train_loss,val_loss";

/// One line of the results table, keyed by the manifest of the run that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub manifest_id: String,
    /// Name of the evaluated sequence file.
    pub data: String,
    pub arch: String,
    pub embedding: String,
    pub seed: u64,
    pub lr: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    #[serde(rename = "f1_B")]
    pub f1_b: f64,
    #[serde(rename = "f1_I")]
    pub f1_i: f64,
    #[serde(rename = "f1_O")]
    pub f1_o: f64,
    pub gap: Option<f64>,
}

impl MetricsRow {
    pub fn new(
        arch: &str,
        embedding: &str,
        seed: u64,
        lr: f64,
        metrics: &MetricsReport,
        gap: Option<f64>,
    ) -> Self {
        Self {
            manifest_id: String::new(),
            data: String::new(),
            arch: arch.to_string(),
            embedding: embedding.to_string(),
            seed,
            lr,
            weighted_f1: metrics.weighted_f1,
            accuracy: metrics.accuracy,
            f1_b: metrics.f1_of(Label::B),
            f1_i: metrics.f1_of(Label::I),
            f1_o: metrics.f1_of(Label::O),
            gap,
        }
    }

    pub fn keyed(self, manifest_id: &str, data: &str) -> Self {
        Self {
            manifest_id: manifest_id.to_string(),
            data: data.to_string(),
            ..self
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

/// Append `row` to a results CSV, writing the header first if the file is
/// new or empty. Existing files must carry the expected header.
pub fn append_metrics_row(path: &Path, row: &MetricsRow) -> Result<()> {
    let existing = std::fs::read_to_string(path).unwrap_or_default();
    if !existing.is_empty() && existing.lines().next() != Some(METRICS_HEADER) {
        return Err(Error::Format(format!(
            "{} does not start with the header `{METRICS_HEADER}`",
            path.display()
        )));
    }
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(existing.is_empty())
        .from_writer(file);
    w.serialize(row).map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

pub fn write_loss_curve<W: Write>(out: W, curve: &LossCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOSS_CURVE_HEADER.split(',')).map_err(csv_err)?;
    for r in &curve.records {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a loss-curve CSV written by [`write_loss_curve`].
pub fn read_loss_curve(content: &str) -> Result<LossCurve> {
    let mut r = csv::Reader::from_reader(content.as_bytes());
    let header = r.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
    if header != LOSS_CURVE_HEADER {
        return Err(Error::Format(format!("unexpected loss-curve header `{header}`")));
    }
    let mut curve = LossCurve::default();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = || Error::Format(format!("loss-curve row {}: `{:?}`", n + 1, rec));
        let epoch = rec[0].parse().map_err(|_| bad())?;
        let train_loss = rec[1].parse().map_err(|_| bad())?;
        let val_loss = match &rec[2] {
            "" => None,
            v => Some(v.parse().map_err(|_| bad())?),
        };
        curve.records.push(super::EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
    }
    Ok(curve)
}
