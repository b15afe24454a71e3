//! Trajectory CSV files.
//!
//! Floats are written with 17 significant digits so a parsed file replays
//! bit for bit. Columns that do not apply to a record are left empty.

use fcbf_core::model::{AuxInput, FilteredInput, SystemState};
use fcbf_core::sim::{RecordStatus, StepRecord, TrajectoryLog};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

pub const HEADER: [&str; 17] = [
    "t",
    "x",
    "y",
    "theta",
    "v",
    "u1",
    "u2",
    "uf1",
    "uf2",
    "nu1",
    "nu2",
    "delta",
    "b",
    "psi1",
    "psi2",
    "qp_status",
    "solve_time_s",
];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("schema mismatch: expected header `{}`, found `{found}`", HEADER.join(","))]
    Schema { found: String },
    #[error("row {row}: {message}")]
    Value { row: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub u1: Option<f64>,
    pub u2: Option<f64>,
    pub uf1: Option<f64>,
    pub uf2: Option<f64>,
    pub nu1: Option<f64>,
    pub nu2: Option<f64>,
    pub delta: Option<f64>,
    pub b: f64,
    pub psi1: f64,
    pub psi2: Option<f64>,
    pub qp_status: String,
    pub solve_time_s: Option<f64>,
}

impl CsvRow {
    /// `with_timing = false` leaves `solve_time_s` empty so that repeated
    /// runs produce identical bytes.
    pub fn from_record(r: &StepRecord, with_timing: bool) -> Self {
        Self {
            t: r.t,
            x: r.state.x,
            y: r.state.y,
            theta: r.state.theta,
            v: r.state.v,
            u1: r.applied.map(|u| u.uf1),
            u2: r.applied.map(|u| u.uf2),
            uf1: r.uf.map(|u| u.uf1),
            uf2: r.uf.map(|u| u.uf2),
            nu1: r.nu.map(|n| n.nu1),
            nu2: r.nu.map(|n| n.nu2),
            delta: r.delta,
            b: r.b,
            psi1: r.psi1,
            psi2: r.psi2,
            qp_status: r.status.as_str().to_string(),
            solve_time_s: if with_timing { r.solve_time } else { None },
        }
    }

    pub fn to_record(&self, row: usize) -> Result<StepRecord, CsvError> {
        let pair = |a: Option<f64>, b: Option<f64>, name: &str| match (a, b) {
            (Some(a), Some(b)) => Ok(Some((a, b))),
            (None, None) => Ok(None),
            _ => Err(CsvError::Value {
                row,
                message: format!("{name} has one channel empty"),
            }),
        };
        let status = RecordStatus::parse(&self.qp_status).ok_or_else(|| CsvError::Value {
            row,
            message: format!("unknown qp_status `{}`", self.qp_status),
        })?;
        Ok(StepRecord {
            t: self.t,
            state: SystemState::new(self.x, self.y, self.theta, self.v),
            applied: pair(self.u1, self.u2, "u")?.map(|(a, b)| FilteredInput::new(a, b)),
            uf: pair(self.uf1, self.uf2, "uf")?.map(|(a, b)| FilteredInput::new(a, b)),
            nu: pair(self.nu1, self.nu2, "nu")?.map(|(a, b)| AuxInput::new(a, b)),
            delta: self.delta,
            b: self.b,
            psi1: self.psi1,
            psi2: self.psi2,
            status,
            active_set: Vec::new(),
            solve_time: self.solve_time_s,
        })
    }

    fn fields(&self) -> [String; 17] {
        [
            num(self.t),
            num(self.x),
            num(self.y),
            num(self.theta),
            num(self.v),
            opt(self.u1),
            opt(self.u2),
            opt(self.uf1),
            opt(self.uf2),
            opt(self.nu1),
            opt(self.nu2),
            opt(self.delta),
            num(self.b),
            num(self.psi1),
            opt(self.psi2),
            self.qp_status.clone(),
            opt(self.solve_time_s),
        ]
    }
}

/// 17 significant digits, exact under parse-and-print.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn rows_from_log(log: &TrajectoryLog, with_timing: bool) -> Vec<CsvRow> {
    log.records.iter().map(|r| CsvRow::from_record(r, with_timing)).collect()
}

pub fn write_rows<W: Write>(rows: &[CsvRow], out: W) -> Result<(), CsvError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_log<W: Write>(log: &TrajectoryLog, with_timing: bool, out: W) -> Result<(), CsvError> {
    write_rows(&rows_from_log(log, with_timing), out)
}

pub fn to_bytes(rows: &[CsvRow]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_rows(rows, &mut buf).expect("writing to memory");
    buf
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<CsvRow>, CsvError> {
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(CsvError::Schema {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    r.deserialize().map(|row| row.map_err(CsvError::from)).collect()
}

pub fn records_from_rows(rows: &[CsvRow]) -> Result<Vec<StepRecord>, CsvError> {
    rows.iter().enumerate().map(|(i, r)| r.to_record(i + 1)).collect()
}
