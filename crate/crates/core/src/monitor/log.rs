//! Reading event logs back and slicing them into per-branch series.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::event::{MonitorEvent, Verdict};
use super::message::Side;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("malformed log: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Field { line: u64, message: String },
}

const COLUMNS: [&str; 11] = [
    "session_id",
    "seq",
    "direction",
    "choice_point_id",
    "label",
    "n",
    "p_hat",
    "ci_lo",
    "ci_hi",
    "verdict",
    "timestamp_ms",
];

/// Parses a CSV event log as written by [`super::LogSink`].
pub fn read_csv_log(reader: impl Read) -> Result<Vec<MonitorEvent>, LogError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 11];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or(LogError::MissingColumn(name))?;
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(idx[i]).unwrap_or("");
        let bad = |what: &str, v: &str| LogError::Field {
            line,
            message: format!("bad {what} `{v}`"),
        };
        let int = |i: usize, what: &str| -> Result<Option<u64>, LogError> {
            let v = field(i);
            if v.is_empty() {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|_| bad(what, v))
            }
        };
        let real = |i: usize, what: &str| -> Result<Option<f64>, LogError> {
            let v = field(i);
            if v.is_empty() {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|_| bad(what, v))
            }
        };
        let direction = match field(2) {
            "" => None,
            d => Some(d.parse::<Side>().map_err(|_| bad("direction", d))?),
        };
        out.push(MonitorEvent {
            session_id: int(0, "session_id")?.ok_or_else(|| bad("session_id", ""))?,
            seq: int(1, "seq")?.ok_or_else(|| bad("seq", ""))?,
            direction,
            choice_point_id: field(3).to_string(),
            label: field(4).to_string(),
            n: int(5, "n")?,
            p_hat: real(6, "p_hat")?,
            ci_lo: real(7, "ci_lo")?,
            ci_hi: real(8, "ci_hi")?,
            verdict: field(9).parse().map_err(|_| bad("verdict", field(9)))?,
            timestamp_ms: int(10, "timestamp_ms")?.unwrap_or(0),
        });
    }
    Ok(out)
}

/// One visit of a choice point, seen from one of its branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub session_id: u64,
    pub n: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub verdict: Verdict,
    /// Whether a warning is outstanding for the branch after this visit.
    pub warning: bool,
}

/// Per-visit series of one branch at one choice point, optionally
/// restricted to a single session.
pub fn branch_series(
    events: &[MonitorEvent],
    choice_point_id: &str,
    branch: &str,
    session: Option<u64>,
) -> Vec<SeriesRow> {
    let mut flags = std::collections::HashMap::new();
    events
        .iter()
        .filter(|e| e.choice_point_id == choice_point_id && e.label == branch)
        .filter(|e| session.is_none_or(|s| s == e.session_id))
        .filter_map(|e| {
            let (n, p_hat, ci_lo, ci_hi) = (e.n?, e.p_hat?, e.ci_lo?, e.ci_hi?);
            let flag = flags.entry(e.session_id).or_insert(false);
            match e.verdict {
                Verdict::WarningRaised => *flag = true,
                Verdict::WarningRetracted => *flag = false,
                _ => {}
            }
            Some(SeriesRow {
                session_id: e.session_id,
                n,
                p_hat,
                ci_lo,
                ci_hi,
                verdict: e.verdict,
                warning: *flag,
            })
        })
        .collect()
}

pub fn write_series_csv(rows: &[SeriesRow], out: impl Write) -> Result<(), LogError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "session_id",
        "n",
        "p_hat",
        "ci_lo",
        "ci_hi",
        "verdict",
        "warning",
    ])?;
    for r in rows {
        w.write_record([
            r.session_id.to_string(),
            r.n.to_string(),
            format!("{:.6}", r.p_hat),
            format!("{:.6}", r.ci_lo),
            format!("{:.6}", r.ci_hi),
            r.verdict.to_string(),
            u8::from(r.warning).to_string(),
        ])?;
    }
    w.flush().map_err(|e| LogError::Csv(e.into()))?;
    Ok(())
}
