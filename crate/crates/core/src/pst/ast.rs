use std::fmt;

use serde::{Deserialize, Serialize};

/// Fixed-point denominator for [`Probability`]: eighteen decimal places.
pub const PROB_SCALE: u64 = 1_000_000_000_000_000_000;

const MAX_FRACTION_DIGITS: usize = 18;

/// A branch probability in `[0, 1]`, stored as an exact decimal.
///
/// Literals such as `0.2` or `0.99` have no exact binary representation, so
/// they are kept as integer multiples of `10^-18` and only converted to `f64`
/// where the statistics need it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbabilityError {
    Malformed,
    OutOfRange,
}

impl Probability {
    pub const ZERO: Probability = Probability(0);
    pub const ONE: Probability = Probability(PROB_SCALE);

    pub fn from_units(units: u64) -> Option<Self> {
        (units <= PROB_SCALE).then_some(Probability(units))
    }

    pub fn units(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / PROB_SCALE as f64
    }

    /// Parses a decimal literal like `1`, `0`, `0.75`.
    pub fn parse(text: &str) -> Result<Self, ProbabilityError> {
        let (int_part, frac_part) = match text.split_once('.') {
            Some((i, f)) => (i, Some(f)),
            None => (text, None),
        };
        let all_digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
        if !all_digits(int_part) || frac_part.is_some_and(|f| !all_digits(f)) {
            return Err(ProbabilityError::Malformed);
        }
        let frac = frac_part.unwrap_or("");
        let (kept, rest) = frac.split_at(frac.len().min(MAX_FRACTION_DIGITS));
        if rest.bytes().any(|b| b != b'0') {
            return Err(ProbabilityError::Malformed);
        }
        let int_value: u64 = match int_part.trim_start_matches('0') {
            "" => 0,
            "1" => 1,
            _ => return Err(ProbabilityError::OutOfRange),
        };
        let mut frac_units: u64 = 0;
        for (i, b) in kept.bytes().enumerate() {
            frac_units += u64::from(b - b'0') * 10u64.pow((MAX_FRACTION_DIGITS - 1 - i) as u32);
        }
        let units = int_value * PROB_SCALE + frac_units;
        Probability::from_units(units).ok_or(ProbabilityError::OutOfRange)
    }
}

impl TryFrom<f64> for Probability {
    type Error = String;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        if !(0.0..=1.0).contains(&value) {
            return Err(format!("probability {value} outside [0, 1]"));
        }
        // Round-trip through the shortest decimal representation so 0.2 stays 0.2.
        Probability::parse(&format!("{value}")).map_err(|_| format!("bad probability {value}"))
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.as_f64()
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let int = self.0 / PROB_SCALE;
        let frac = self.0 % PROB_SCALE;
        if frac == 0 {
            return write!(f, "{int}");
        }
        let digits = format!("{frac:018}");
        write!(f, "{int}.{}", digits.trim_end_matches('0'))
    }
}

/// Basic payload data types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sort {
    Int,
    String,
    Bool,
}

impl Sort {
    pub fn from_name(name: &str) -> Option<Sort> {
        match name {
            "Int" => Some(Sort::Int),
            "String" => Some(Sort::String),
            "Bool" => Some(Sort::Bool),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sort::Int => "Int",
            Sort::String => "String",
            Sort::Bool => "Bool",
        }
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `!` (the described endpoint sends) or `?` (it receives).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "!")]
    Send,
    #[serde(rename = "?")]
    Receive,
}

impl Polarity {
    pub fn symbol(self) -> char {
        match self {
            Polarity::Send => '!',
            Polarity::Receive => '?',
        }
    }
}

/// `+{...}` is an internal choice (selected by the described endpoint),
/// `&{...}` an external one (selected by its peer).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChoiceKind {
    Internal,
    External,
}

impl ChoiceKind {
    pub fn symbol(self) -> char {
        match self {
            ChoiceKind::Internal => '+',
            ChoiceKind::External => '&',
        }
    }

    /// Polarity every branch of this kind of choice must carry.
    pub fn polarity(self) -> Polarity {
        match self {
            ChoiceKind::Internal => Polarity::Send,
            ChoiceKind::External => Polarity::Receive,
        }
    }

    pub fn for_polarity(polarity: Polarity) -> ChoiceKind {
        match polarity {
            Polarity::Send => ChoiceKind::Internal,
            Polarity::Receive => ChoiceKind::External,
        }
    }
}

/// 1-based source position.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Span {
    pub line: u32,
    pub column: u32,
}

impl Span {
    pub fn new(line: u32, column: u32) -> Self {
        Span { line, column }
    }

    pub fn is_known(self) -> bool {
        self.line > 0
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    pub var: String,
    pub sort: Sort,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub polarity: Polarity,
    pub label: String,
    pub payload: Option<Payload>,
    pub prob: Probability,
    pub cont: SessionType,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub kind: ChoiceKind,
    pub branches: Vec<Branch>,
    pub span: Span,
}

/// A probabilistic session type.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionType {
    Choice(Choice),
    Rec {
        var: String,
        body: Box<SessionType>,
        span: Span,
    },
    Var {
        name: String,
        span: Span,
    },
    End,
}

/// A `(label, polarity, payload sort)` triple occurring somewhere in a type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MessageSignature {
    pub label: String,
    pub polarity: Polarity,
    pub payload: Option<Sort>,
}

impl SessionType {
    pub fn choice(kind: ChoiceKind, branches: Vec<Branch>) -> SessionType {
        SessionType::Choice(Choice {
            kind,
            branches,
            span: Span::default(),
        })
    }

    pub fn rec(var: impl Into<String>, body: SessionType) -> SessionType {
        SessionType::Rec {
            var: var.into(),
            body: Box::new(body),
            span: Span::default(),
        }
    }

    pub fn var(name: impl Into<String>) -> SessionType {
        SessionType::Var {
            name: name.into(),
            span: Span::default(),
        }
    }

    /// Equality that ignores source positions.
    pub fn structurally_eq(&self, other: &SessionType) -> bool {
        super::grow(|| self.structurally_eq_inner(other))
    }

    fn structurally_eq_inner(&self, other: &SessionType) -> bool {
        match (self, other) {
            (SessionType::End, SessionType::End) => true,
            (SessionType::Var { name: a, .. }, SessionType::Var { name: b, .. }) => a == b,
            (
                SessionType::Rec {
                    var: va, body: ba, ..
                },
                SessionType::Rec {
                    var: vb, body: bb, ..
                },
            ) => va == vb && ba.structurally_eq(bb),
            (SessionType::Choice(a), SessionType::Choice(b)) => {
                a.kind == b.kind
                    && a.branches.len() == b.branches.len()
                    && a.branches.iter().zip(&b.branches).all(|(x, y)| {
                        x.polarity == y.polarity
                            && x.label == y.label
                            && x.payload == y.payload
                            && x.prob == y.prob
                            && x.cont.structurally_eq(&y.cont)
                    })
            }
            _ => false,
        }
    }

    /// Every distinct message signature in the type, sorted.
    pub fn signatures(&self) -> Vec<MessageSignature> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(t) = stack.pop() {
            match t {
                SessionType::Choice(c) => {
                    for b in &c.branches {
                        out.push(MessageSignature {
                            label: b.label.clone(),
                            polarity: b.polarity,
                            payload: b.payload.as_ref().map(|p| p.sort),
                        });
                        stack.push(&b.cont);
                    }
                }
                SessionType::Rec { body, .. } => stack.push(body),
                SessionType::Var { .. } | SessionType::End => {}
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// Number of choice occurrences (singleton prefixes included).
    pub fn choice_count(&self) -> usize {
        let mut count = 0;
        let mut stack = vec![self];
        while let Some(t) = stack.pop() {
            match t {
                SessionType::Choice(c) => {
                    count += 1;
                    stack.extend(c.branches.iter().map(|b| &b.cont));
                }
                SessionType::Rec { body, .. } => stack.push(body),
                _ => {}
            }
        }
        count
    }
}

impl Branch {
    pub fn new(
        polarity: Polarity,
        label: impl Into<String>,
        payload: Option<(&str, Sort)>,
        prob: Probability,
        cont: SessionType,
    ) -> Branch {
        Branch {
            polarity,
            label: label.into(),
            payload: payload.map(|(var, sort)| Payload {
                var: var.to_string(),
                sort,
            }),
            prob,
            cont,
            span: Span::default(),
        }
    }
}
