use std::collections::HashSet;
use std::fmt;

use super::ast::{Polarity, SessionType, Span, PROB_SCALE};

/// Allowed absolute deviation of a choice's probability sum from 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

const TOLERANCE_UNITS: u128 = (PROB_SUM_TOLERANCE * PROB_SCALE as f64) as u128;

#[derive(Debug, Clone, PartialEq)]
pub enum ErrorKind {
    ProbSum(f64),
    DuplicateLabel(String),
    UnguardedRec(String),
    UnboundVar(String),
    MixedPolarity { label: String, expected: Polarity },
    InvalidIdentifier(String),
}

impl ErrorKind {
    pub fn name(&self) -> &'static str {
        match self {
            ErrorKind::ProbSum(_) => "ProbSum",
            ErrorKind::DuplicateLabel(_) => "DuplicateLabel",
            ErrorKind::UnguardedRec(_) => "UnguardedRec",
            ErrorKind::UnboundVar(_) => "UnboundVar",
            ErrorKind::MixedPolarity { .. } => "MixedPolarity",
            ErrorKind::InvalidIdentifier(_) => "InvalidIdentifier",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorKind::ProbSum(sum) => write!(f, "ProbSum({sum})"),
            ErrorKind::DuplicateLabel(l) => write!(f, "DuplicateLabel({l})"),
            ErrorKind::UnguardedRec(x) => write!(f, "UnguardedRec({x})"),
            ErrorKind::UnboundVar(x) => write!(f, "UnboundVar({x})"),
            ErrorKind::MixedPolarity { label, expected } => {
                write!(
                    f,
                    "MixedPolarity({label}, expected `{}`)",
                    expected.symbol()
                )
            }
            ErrorKind::InvalidIdentifier(s) => write!(f, "InvalidIdentifier({s:?})"),
        }
    }
}

/// A well-formedness violation and where it occurs.
///
/// `path` is the dotted label path from the root, the same scheme used for
/// choice-point ids, so errors in generated types are locatable too.
#[derive(Debug, Clone, PartialEq)]
pub struct WellFormednessError {
    pub kind: ErrorKind,
    pub span: Span,
    pub path: String,
}

impl fmt::Display for WellFormednessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.span.is_known() {
            write!(f, "{}: {} at {}", self.span, self.kind, self.path)
        } else {
            write!(f, "{} at {}", self.kind, self.path)
        }
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && s != "rec"
        && s != "end"
}

struct Binding<'a> {
    name: &'a str,
    choice_depth: usize,
}

struct Checker<'a> {
    bindings: Vec<Binding<'a>>,
    choice_depth: usize,
    errors: Vec<WellFormednessError>,
}

impl<'a> Checker<'a> {
    fn report(&mut self, kind: ErrorKind, span: Span, path: &str) {
        self.errors.push(WellFormednessError {
            kind,
            span,
            path: path.to_string(),
        });
    }

    fn walk(&mut self, t: &'a SessionType, path: &str) {
        super::grow(|| self.walk_inner(t, path))
    }

    fn walk_inner(&mut self, t: &'a SessionType, path: &str) {
        match t {
            SessionType::End => {}
            SessionType::Var { name, span } => {
                match self.bindings.iter().rev().find(|b| b.name == name) {
                    None => self.report(ErrorKind::UnboundVar(name.clone()), *span, path),
                    Some(b) if b.choice_depth == self.choice_depth => {
                        self.report(ErrorKind::UnguardedRec(name.clone()), *span, path)
                    }
                    Some(_) => {}
                }
            }
            SessionType::Rec { var, body, span } => {
                if !is_identifier(var) {
                    self.report(ErrorKind::InvalidIdentifier(var.clone()), *span, path);
                }
                self.bindings.push(Binding {
                    name: var,
                    choice_depth: self.choice_depth,
                });
                self.walk(body, path);
                self.bindings.pop();
            }
            SessionType::Choice(choice) => {
                let expected = choice.kind.polarity();
                let mut seen = HashSet::new();
                let mut sum: u128 = 0;
                for b in &choice.branches {
                    sum += u128::from(b.prob.units());
                    if !is_identifier(&b.label) {
                        self.report(ErrorKind::InvalidIdentifier(b.label.clone()), b.span, path);
                    }
                    if let Some(p) = &b.payload {
                        if !is_identifier(&p.var) {
                            self.report(ErrorKind::InvalidIdentifier(p.var.clone()), b.span, path);
                        }
                    }
                    if !seen.insert(b.label.as_str()) {
                        self.report(ErrorKind::DuplicateLabel(b.label.clone()), b.span, path);
                    }
                    if b.polarity != expected {
                        self.report(
                            ErrorKind::MixedPolarity {
                                label: b.label.clone(),
                                expected,
                            },
                            b.span,
                            path,
                        );
                    }
                }
                if sum.abs_diff(u128::from(PROB_SCALE)) > TOLERANCE_UNITS {
                    let total = sum as f64 / PROB_SCALE as f64;
                    self.report(ErrorKind::ProbSum(total), choice.span, path);
                }
                self.choice_depth += 1;
                for b in &choice.branches {
                    let child = format!("{path}.{}", b.label);
                    self.walk(&b.cont, &child);
                }
                self.choice_depth -= 1;
            }
        }
    }
}

/// Checks every well-formedness invariant; an empty result means the type
/// can be compiled into a monitor.
pub fn validate(t: &SessionType) -> Vec<WellFormednessError> {
    let mut checker = Checker {
        bindings: Vec::new(),
        choice_depth: 0,
        errors: Vec::new(),
    };
    checker.walk(t, "root");
    checker.errors
}
