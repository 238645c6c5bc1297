//! Confidence intervals around specified branch probabilities, and the
//! per-choice-point bookkeeping that turns observation counts into
//! warnings and retractions.
//!
//! Intervals are centred on the probability written in the type, not on the
//! empirical estimate: a branch is *deviating* when its observed frequency
//! falls outside the interval that the session type predicts for the
//! current number of visits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("confidence level must lie strictly between 0 and 1, got {0}")]
    InvalidLevel(f64),
    #[error("choice point `{choice}` has no branch labelled `{label}`")]
    UnknownLabel { choice: String, label: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    Wald,
    Wilson,
}

impl FromStr for IntervalKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wald" => Ok(IntervalKind::Wald),
            "wilson" => Ok(IntervalKind::Wilson),
            _ => Err(format!("unknown interval `{s}` (expected wald or wilson)")),
        }
    }
}

impl fmt::Display for IntervalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntervalKind::Wald => "wald",
            IntervalKind::Wilson => "wilson",
        })
    }
}

/// How the confidence level maps to a normal quantile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZConvention {
    /// `z = Φ⁻¹(1 − (1 − level)/2)`
    TwoSided,
    /// `z = Φ⁻¹(level)`
    OneSided,
}

impl FromStr for ZConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "two-sided" | "two" => Ok(ZConvention::TwoSided),
            "one-sided" | "one" => Ok(ZConvention::OneSided),
            _ => Err(format!(
                "unknown z convention `{s}` (expected two-sided or one-sided)"
            )),
        }
    }
}

impl fmt::Display for ZConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZConvention::TwoSided => "two-sided",
            ZConvention::OneSided => "one-sided",
        })
    }
}

/// Normal quantile for a confidence level.
pub fn z_score(level: f64, convention: ZConvention) -> Result<f64, StatsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidLevel(level));
    }
    let q = match convention {
        ZConvention::TwoSided => 1.0 - (1.0 - level) / 2.0,
        ZConvention::OneSided => level,
    };
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(q))
}

/// Interval construction plus confidence level; the z-score is computed once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiMethod {
    kind: IntervalKind,
    level: f64,
    convention: ZConvention,
    z: f64,
}

impl CiMethod {
    pub const DEFAULT_LEVEL: f64 = 0.95;

    pub fn new(kind: IntervalKind, level: f64) -> Result<Self, StatsError> {
        Self::with_convention(kind, level, ZConvention::TwoSided)
    }

    pub fn with_convention(
        kind: IntervalKind,
        level: f64,
        convention: ZConvention,
    ) -> Result<Self, StatsError> {
        Ok(CiMethod {
            kind,
            level,
            convention,
            z: z_score(level, convention)?,
        })
    }

    pub fn wald(level: f64) -> Result<Self, StatsError> {
        Self::new(IntervalKind::Wald, level)
    }

    pub fn wilson(level: f64) -> Result<Self, StatsError> {
        Self::new(IntervalKind::Wilson, level)
    }

    pub fn kind(&self) -> IntervalKind {
        self.kind
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn convention(&self) -> ZConvention {
        self.convention
    }

    pub fn z(&self) -> f64 {
        self.z
    }
}

impl Default for CiMethod {
    /// Wald, two-sided, 95%.
    fn default() -> Self {
        CiMethod::wald(Self::DEFAULT_LEVEL).expect("0.95 is a valid level")
    }
}

/// Interval around the specified probability `p` after `n` visits.
///
/// # Panics
/// If `n == 0`; callers only ask after the first observation.
pub fn ci_bounds(p: f64, n: u64, method: &CiMethod) -> (f64, f64) {
    assert!(
        n > 0,
        "confidence interval requested before any observation"
    );
    let n = n as f64;
    let z = method.z;
    let (lo, hi) = match method.kind {
        IntervalKind::Wald => {
            let half = z * (p * (1.0 - p) / n).sqrt();
            (p - half, p + half)
        }
        IntervalKind::Wilson => {
            // (c ± r) / d, with the subtracted side rewritten as
            // p² / (c + r) so that p = 0 gives exactly 0 (and p = 1 gives 1).
            let z2n = z * z / n;
            let lower = |p: f64| {
                let c = p + z2n / 2.0;
                let r = z * (p * (1.0 - p) / n + z2n / (4.0 * n)).sqrt();
                if c + r == 0.0 {
                    0.0
                } else {
                    p * p / (c + r)
                }
            };
            (lower(p), 1.0 - lower(1.0 - p))
        }
    };
    (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Within,
    Deviating,
}

/// A change of a branch's warning flag caused by one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagChange {
    Raised,
    Retracted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub label: String,
    pub status: Status,
    pub p_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub change: Option<FlagChange>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchStats {
    pub label: String,
    pub spec_prob: f64,
    pub count: u64,
    pub warning: bool,
}

/// Counts and warning flags for one choice point within one session.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceStats {
    choice_point_id: String,
    branches: Vec<BranchStats>,
    n: u64,
}

impl ChoiceStats {
    pub fn new<L: Into<String>>(
        choice_point_id: impl Into<String>,
        branches: impl IntoIterator<Item = (L, f64)>,
    ) -> Self {
        ChoiceStats {
            choice_point_id: choice_point_id.into(),
            branches: branches
                .into_iter()
                .map(|(label, spec_prob)| BranchStats {
                    label: label.into(),
                    spec_prob,
                    count: 0,
                    warning: false,
                })
                .collect(),
            n: 0,
        }
    }

    pub fn choice_point_id(&self) -> &str {
        &self.choice_point_id
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn branches(&self) -> &[BranchStats] {
        &self.branches
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.branches.iter().position(|b| b.label == label)
    }

    /// `c_label / n`, undefined before the first visit.
    pub fn estimate(&self, label: &str) -> Option<f64> {
        let i = self.index_of(label)?;
        (self.n > 0).then(|| self.branches[i].count as f64 / self.n as f64)
    }

    pub fn observe(&mut self, label: &str) -> Result<usize, StatsError> {
        let i = self
            .index_of(label)
            .ok_or_else(|| StatsError::UnknownLabel {
                choice: self.choice_point_id.clone(),
                label: label.to_string(),
            })?;
        self.observe_index(i);
        Ok(i)
    }

    pub fn observe_index(&mut self, index: usize) {
        self.branches[index].count += 1;
        self.n += 1;
    }

    /// Statuses of every branch without touching the warning flags.
    pub fn assess(&self, method: &CiMethod) -> Vec<Assessment> {
        if self.n == 0 {
            return Vec::new();
        }
        self.branches
            .iter()
            .map(|b| {
                let p_hat = b.count as f64 / self.n as f64;
                let (lo, hi) = ci_bounds(b.spec_prob, self.n, method);
                let status = if lo <= p_hat && p_hat <= hi {
                    Status::Within
                } else {
                    Status::Deviating
                };
                Assessment {
                    label: b.label.clone(),
                    status,
                    p_hat,
                    lo,
                    hi,
                    change: None,
                }
            })
            .collect()
    }

    /// Assesses every branch and updates the warning flags: set when a
    /// branch starts deviating, cleared when it comes back inside.
    pub fn evaluate(&mut self, method: &CiMethod) -> Vec<Assessment> {
        let mut out = self.assess(method);
        for (a, b) in out.iter_mut().zip(self.branches.iter_mut()) {
            let deviating = a.status == Status::Deviating;
            a.change = match (b.warning, deviating) {
                (false, true) => Some(FlagChange::Raised),
                (true, false) => Some(FlagChange::Retracted),
                _ => None,
            };
            b.warning = deviating;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wald95() -> CiMethod {
        CiMethod::default()
    }

    #[test]
    fn z_for_95_two_sided() {
        assert!((wald95().z() - 1.959964).abs() < 5e-7);
        assert!(CiMethod::wald(1.0).is_err());
        assert!(CiMethod::wald(0.0).is_err());
        assert!(CiMethod::wald(f64::NAN).is_err());
    }

    #[test]
    fn wald_degenerate_at_zero() {
        for n in [1, 7, 1000] {
            assert_eq!(ci_bounds(0.0, n, &wald95()), (0.0, 0.0));
            assert_eq!(ci_bounds(1.0, n, &wald95()), (1.0, 1.0));
        }
    }

    #[test]
    fn wald_half_at_four() {
        let (lo, hi) = ci_bounds(0.5, 4, &wald95());
        assert!((lo - 0.010009).abs() < 1e-6);
        assert!((hi - 0.989991).abs() < 1e-6);
    }

    #[test]
    fn wilson_symmetric_at_half() {
        let m = CiMethod::wilson(0.95).unwrap();
        for n in [1, 2, 3, 10, 99, 12345] {
            let (lo, hi) = ci_bounds(0.5, n, &m);
            assert!((0.5 - lo - (hi - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn wilson_edges_exact() {
        let m = CiMethod::wilson(0.95).unwrap();
        let (lo, _) = ci_bounds(0.0, 3, &m);
        assert_eq!(lo, 0.0);
        let (_, hi) = ci_bounds(1.0, 3, &m);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn observe_counts() {
        let mut s = ChoiceStats::new("root", [("Guess", 0.75), ("Help", 0.2), ("Quit", 0.05)]);
        assert_eq!(s.estimate("Help"), None);
        s.observe("Help").unwrap();
        assert_eq!(s.n(), 1);
        assert_eq!(s.estimate("Help"), Some(1.0));

        let mut s = ChoiceStats::new("root", [("Guess", 0.75), ("Help", 0.2), ("Quit", 0.05)]);
        for _ in 0..3 {
            s.observe("Guess").unwrap();
        }
        s.observe("Help").unwrap();
        assert_eq!(s.estimate("Guess"), Some(0.75));
        assert_eq!(s.estimate("Help"), Some(0.25));
        assert_eq!(s.estimate("Quit"), Some(0.0));

        assert!(matches!(
            s.observe("Hint"),
            Err(StatsError::UnknownLabel { .. })
        ));
        assert_eq!(s.n(), 4);
    }

    #[test]
    fn exact_reproduction_of_spec_distribution() {
        let mut s = ChoiceStats::new("root", [("Guess", 0.75), ("Help", 0.2), ("Quit", 0.05)]);
        for (label, k) in [("Guess", 75), ("Help", 20), ("Quit", 5)] {
            for _ in 0..k {
                s.observe(label).unwrap();
            }
        }
        assert_eq!(s.estimate("Guess"), Some(0.75));
        assert_eq!(s.estimate("Help"), Some(0.2));
        assert_eq!(s.estimate("Quit"), Some(0.05));
    }

    #[test]
    fn help_once_deviates() {
        let mut s = ChoiceStats::new("root", [("Guess", 0.75), ("Help", 0.2), ("Quit", 0.05)]);
        s.observe("Help").unwrap();
        let out = s.evaluate(&wald95());
        let help = &out[1];
        assert!((help.hi - 0.983986).abs() < 1e-6);
        assert_eq!(help.status, Status::Deviating);
        assert_eq!(help.change, Some(FlagChange::Raised));
        assert!(s.branches()[1].warning);
    }

    #[test]
    fn estimate_equal_to_spec_is_within() {
        for kind in [IntervalKind::Wald, IntervalKind::Wilson] {
            for level in [0.5, 0.9, 0.95, 0.99, 0.999] {
                let m = CiMethod::new(kind, level).unwrap();
                let mut s =
                    ChoiceStats::new("root", [("Guess", 0.75), ("Help", 0.2), ("Quit", 0.05)]);
                for l in ["Guess", "Guess", "Help", "Guess", "Guess"] {
                    s.observe(l).unwrap();
                }
                let help = &s.evaluate(&m)[1];
                assert_eq!(help.p_hat, 0.2);
                assert_eq!(help.status, Status::Within, "{kind} {level}");
            }
        }
    }

    #[test]
    fn mailfrom_prefix_first_deviates_at_four() {
        let mut s = ChoiceStats::new("x", [("MailFrom", 0.5), ("Quit", 0.5)]);
        let mut first = None;
        for n in 1..=10 {
            s.observe("MailFrom").unwrap();
            if s.evaluate(&wald95())[0].status == Status::Deviating && first.is_none() {
                first = Some(n);
            }
        }
        assert_eq!(first, Some(4));
    }

    #[test]
    fn retraction_clears_flag() {
        let m = wald95();
        let mut s = ChoiceStats::new("root", [("Guess", 0.75), ("Help", 0.2), ("Quit", 0.05)]);
        for _ in 0..5 {
            s.observe("Help").unwrap();
            s.evaluate(&m);
        }
        assert!(s.branches()[1].warning);
        let mut retracted = false;
        for i in 0..200 {
            s.observe(if i % 5 == 0 { "Help" } else { "Guess" })
                .unwrap();
            if s.evaluate(&m)[1].change == Some(FlagChange::Retracted) {
                retracted = true;
                break;
            }
        }
        assert!(retracted);
        assert!(!s.branches()[1].warning);
    }
}
