//! Output artifacts of a run: the figure-analogue CSV tables and the JSON
//! report. Schemas are fixed per format version:
//!
//! - epochs.csv: epoch, loss_total, loss_GE, loss_IC, loss_BC,
//!   constraint_norm_1..4, error_linf_l2, time_avg_mass. Constraint columns
//!   beyond the problem's count stay blank.
//! - traces.csv: t, mass, momentum_x, momentum_y, energy; moment columns
//!   stay blank for the Fokker--Planck problem (mass is its only invariant).
//! - slices.csv: t, x, v, f_reference, f_network (velocity coordinates take
//!   the x/v columns for the Boltzmann problem); f_network is blank when no
//!   network was evaluated.

use crate::config::ExperimentConfig;
use crate::reference::ConservationTraces;
use crate::trainer::{EpochRecord, RunReport};
use serde::Serialize;
use std::io::Write;
use std::path::Path;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("io error writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("encode error: {0}")]
    Encode(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Shortest-roundtrip decimal form; empty cells are written as "".
fn cell(v: f64) -> String {
    format!("{v}")
}

pub fn write_epochs_csv(
    records: &[EpochRecord],
    path: &Path,
) -> Result<(), ReportError> {
    let mut out = String::new();
    out.push_str(
        "epoch,loss_total,loss_GE,loss_IC,loss_BC,constraint_norm_1,constraint_norm_2,constraint_norm_3,constraint_norm_4,error_linf_l2,time_avg_mass\n",
    );
    for r in records {
        let mut norms = vec![String::new(); 4];
        for (l, n) in r.constraint_norms.iter().enumerate().take(4) {
            norms[l] = cell(*n);
        }
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            cell(r.loss_total),
            cell(r.loss_ge),
            cell(r.loss_ic),
            cell(r.loss_bc),
            norms[0],
            norms[1],
            norms[2],
            norms[3],
            cell(r.error_linf_l2),
            cell(r.time_avg_mass),
        ));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

pub fn write_traces_csv(traces: &ConservationTraces, path: &Path) -> Result<(), ReportError> {
    let mut out = String::new();
    out.push_str("t,mass,momentum_x,momentum_y,energy\n");
    for (i, &t) in traces.t.iter().enumerate() {
        let px = traces
            .momentum_x
            .as_ref()
            .map(|v| cell(v[i]))
            .unwrap_or_default();
        let py = traces
            .momentum_y
            .as_ref()
            .map(|v| cell(v[i]))
            .unwrap_or_default();
        let en = traces
            .energy
            .as_ref()
            .map(|v| cell(v[i]))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            cell(t),
            cell(traces.mass[i]),
            px,
            py,
            en
        ));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// One row per (x, v) grid point of a single time slice.
pub struct SliceRow {
    pub x: f64,
    pub v: f64,
    pub f_reference: f64,
    pub f_network: Option<f64>,
}

pub fn write_slices_csv(t: f64, rows: &[SliceRow], path: &Path) -> Result<(), ReportError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "t,x,v,f_reference,f_network")?;
        for r in rows {
            let net = r.f_network.map(cell).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{}",
                cell(t),
                cell(r.x),
                cell(r.v),
                cell(r.f_reference),
                net
            )?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

#[derive(Serialize)]
struct JsonReport<'a> {
    format_version: u32,
    config: &'a ExperimentConfig,
    summary: Summary,
}

#[derive(Serialize)]
struct Summary {
    epochs_recorded: usize,
    final_loss_total: Option<f64>,
    final_error_linf_l2: f64,
    final_constraint_norms: Vec<f64>,
    final_time_avg_mass: Option<f64>,
    aborted: Option<String>,
}

/// report.json: the fully resolved configuration plus a result summary, so a
/// run is re-creatable from the report alone.
pub fn write_report_json(
    config: &ExperimentConfig,
    report: &RunReport,
    path: &Path,
) -> Result<(), ReportError> {
    let last = report.records.last();
    let doc = JsonReport {
        format_version: REPORT_FORMAT_VERSION,
        config,
        summary: Summary {
            epochs_recorded: report.records.len(),
            final_loss_total: last.map(|r| r.loss_total),
            final_error_linf_l2: report.final_error,
            final_constraint_norms: last.map(|r| r.constraint_norms.clone()).unwrap_or_default(),
            final_time_avg_mass: last.map(|r| r.time_avg_mass),
            aborted: report.aborted.clone(),
        },
    };
    let text =
        serde_json::to_string_pretty(&doc).map_err(|e| ReportError::Encode(e.to_string()))?;
    std::fs::write(path, text).map_err(io_err(path))
}

/// Evaluation-only report (no training records).
#[derive(Serialize)]
pub struct EvaluationReport<'a> {
    pub format_version: u32,
    pub config: &'a ExperimentConfig,
    pub checkpoint: String,
    pub linf_l2: f64,
    pub per_time_l2: Vec<f64>,
    pub eval_times: Vec<f64>,
}

pub fn write_evaluation_json(report: &EvaluationReport, path: &Path) -> Result<(), ReportError> {
    let text =
        serde_json::to_string_pretty(report).map_err(|e| ReportError::Encode(e.to_string()))?;
    std::fs::write(path, text).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epochs_csv_blanks_absent_constraints() {
        let records = vec![EpochRecord {
            epoch: 0,
            loss_total: 1.5,
            loss_ge: 1.0,
            loss_ic: 0.25,
            loss_bc: 0.25,
            constraint_norms: vec![0.125],
            error_linf_l2: 0.5,
            time_avg_mass: 0.75,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("epochs.csv");
        write_epochs_csv(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,loss_total,loss_GE,loss_IC,loss_BC,constraint_norm_1,constraint_norm_2,constraint_norm_3,constraint_norm_4,error_linf_l2,time_avg_mass"
        );
        assert_eq!(lines.next().unwrap(), "0,1.5,1,0.25,0.25,0.125,,,,0.5,0.75");
    }

    #[test]
    fn traces_csv_blanks_fp_moments() {
        let traces = ConservationTraces {
            t: vec![0.0, 0.5],
            mass: vec![1.0, 1.25],
            momentum_x: None,
            momentum_y: None,
            energy: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.csv");
        write_traces_csv(&traces, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "t,mass,momentum_x,momentum_y,energy\n0,1,,,\n0.5,1.25,,,\n");
    }

    #[test]
    fn slice_rows_round_trip() {
        let rows = vec![
            SliceRow {
                x: 0.25,
                v: -1.0,
                f_reference: 0.125,
                f_network: None,
            },
            SliceRow {
                x: 0.5,
                v: 1.0,
                f_reference: 0.0625,
                f_network: Some(0.0615),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slices.csv");
        write_slices_csv(0.5, &rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x,v,f_reference,f_network");
        assert_eq!(lines[1], "0.5,0.25,-1,0.125,");
        assert_eq!(lines[2], "0.5,0.5,1,0.0625,0.0615");
        assert_eq!(lines.len(), 3);
    }
}
