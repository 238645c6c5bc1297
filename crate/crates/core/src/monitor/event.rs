use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::message::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Ok,
    WarningRaised,
    WarningRetracted,
    Violation,
    SessionEnd,
    /// The connection went away before the type reached `end`.
    Aborted,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Ok => "ok",
            Verdict::WarningRaised => "warning_raised",
            Verdict::WarningRetracted => "warning_retracted",
            Verdict::Violation => "violation",
            Verdict::SessionEnd => "session_end",
            Verdict::Aborted => "aborted",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ok" => Verdict::Ok,
            "warning_raised" => Verdict::WarningRaised,
            "warning_retracted" => Verdict::WarningRetracted,
            "violation" => Verdict::Violation,
            "session_end" => Verdict::SessionEnd,
            "aborted" => Verdict::Aborted,
            _ => return Err(format!("unknown verdict `{s}`")),
        })
    }
}

/// One log record.
///
/// On a visit to a branching choice point the monitor emits one event per
/// branch: first the branch that was taken, then its siblings, each with
/// that branch's estimate and interval. `n`, `p_hat` and the bounds are
/// absent for violation, end and abort records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorEvent {
    pub session_id: u64,
    pub seq: u64,
    pub direction: Option<Side>,
    pub choice_point_id: String,
    pub label: String,
    pub n: Option<u64>,
    pub p_hat: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub verdict: Verdict,
    pub timestamp_ms: u64,
}

impl MonitorEvent {
    pub const CSV_HEADER: &'static str =
        "session_id,seq,direction,choice_point_id,label,n,p_hat,ci_lo,ci_hi,verdict,timestamp_ms";

    pub fn is_warning_change(&self) -> bool {
        matches!(
            self.verdict,
            Verdict::WarningRaised | Verdict::WarningRetracted
        )
    }

    /// CSV row (without line terminator); reals with six decimals.
    pub fn to_csv_row(&self) -> String {
        fn real(x: Option<f64>) -> String {
            x.map(|v| format!("{v:.6}")).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.session_id,
            self.seq,
            self.direction.map(Side::as_str).unwrap_or(""),
            csv_field(&self.choice_point_id),
            csv_field(&self.label),
            self.n.map(|n| n.to_string()).unwrap_or_default(),
            real(self.p_hat),
            real(self.ci_lo),
            real(self.ci_hi),
            self.verdict,
            self.timestamp_ms
        )
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serialises")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
