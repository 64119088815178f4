//! Per-tick CSV files.
//!
//! Columns, in order: `time_s`, `xref_z_m`, `x_z_m`, `err_z_m`,
//! `ff_z_mps2` (learned feedforward), `fb_z_mps2`, `tau_1_Nm` ..
//! `tau_n_Nm`, `lam_1_N` .. `lam_m_N` (heel fx, heel fz, toe fx, toe fz per
//! foot), `cop_x_m`, `qp_status`. Numbers use the shortest representation
//! that parses back to the same `f64`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::trial::{metrics_from_columns, Metrics, TrialLog};
use super::HarnessError;

pub fn header(joints: usize, forces: usize) -> Vec<String> {
    let mut h: Vec<String> = ["time_s", "xref_z_m", "x_z_m", "err_z_m", "ff_z_mps2", "fb_z_mps2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=joints).map(|i| format!("tau_{i}_Nm")));
    h.extend((1..=forces).map(|i| format!("lam_{i}_N")));
    h.push("cop_x_m".into());
    h.push("qp_status".into());
    h
}

pub fn write_log<W: Write>(log: &TrialLog, joints: usize, forces: usize, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(joints, forces))?;
    for t in &log.ticks {
        let mut row = vec![
            t.time.to_string(),
            t.x_ref.y.to_string(),
            t.x.y.to_string(),
            t.error_z().to_string(),
            t.learned.y.to_string(),
            t.feedback.y.to_string(),
        ];
        row.extend(t.tau.iter().map(|v| v.to_string()));
        row.extend(t.lambda.iter().map(|v| v.to_string()));
        row.push(t.cop_x.to_string());
        row.push(t.status.as_str().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(log: &TrialLog, path: &Path) -> Result<(), HarnessError> {
    let (joints, forces) = log
        .ticks
        .first()
        .map(|t| (t.tau.len(), t.lambda.len()))
        .unwrap_or((0, 0));
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_log(log, joints, forces, BufWriter::new(file)).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => HarnessError::Format {
            path: path.display().to_string(),
            reason: format!("{other:?}"),
        },
    }
}

/// Columns of a log file read back.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTrace {
    pub time: Vec<f64>,
    pub xref_z: Vec<f64>,
    pub x_z: Vec<f64>,
    pub err_z: Vec<f64>,
    pub ff_z: Vec<f64>,
    pub fb_z: Vec<f64>,
    /// One row per tick.
    pub tau: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub cop_x: Vec<f64>,
    pub status: Vec<String>,
}

impl CsvTrace {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Metrics over rows after the first `settle_ticks`.
    pub fn metrics(&self, settle_ticks: usize) -> Metrics {
        let s = settle_ticks.min(self.len());
        metrics_from_columns(
            self.err_z[s..].iter().copied(),
            self.fb_z[s..].iter().copied(),
            self.tau.iter().map(|t| t.as_slice()),
            s,
        )
    }
}

pub fn parse_log<R: Read>(input: R, name: &str) -> Result<CsvTrace, HarnessError> {
    let bad = |reason: String| HarnessError::Format {
        path: name.to_string(),
        reason,
    };
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let joints = cols.iter().filter(|c| c.starts_with("tau_")).count();
    let forces = cols.iter().filter(|c| c.starts_with("lam_")).count();
    if cols != header(joints, forces) {
        return Err(bad(format!("unexpected header: {}", cols.join(","))));
    }
    let mut trace = CsvTrace::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| -> Result<f64, HarnessError> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| bad(format!("row {}: column {}: {e}", line + 2, cols[i])))
        };
        trace.time.push(num(0)?);
        trace.xref_z.push(num(1)?);
        trace.x_z.push(num(2)?);
        trace.err_z.push(num(3)?);
        trace.ff_z.push(num(4)?);
        trace.fb_z.push(num(5)?);
        trace.tau.push((6..6 + joints).map(num).collect::<Result<_, _>>()?);
        trace
            .lambda
            .push((6 + joints..6 + joints + forces).map(num).collect::<Result<_, _>>()?);
        trace.cop_x.push(num(6 + joints + forces)?);
        trace.status.push(rec[7 + joints + forces].to_string());
    }
    Ok(trace)
}

pub fn read_csv(path: &Path) -> Result<CsvTrace, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    parse_log(std::io::BufReader::new(file), &path.display().to_string())
}
