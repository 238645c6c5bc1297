//! Declarative translation between text lines on the wire and typed
//! messages.
//!
//! A codec file lists one rule per `(label, direction)`: an anchored regular
//! expression that recognises the line (with one capture group for the
//! payload, if any) and a template that renders it back, using `{0}` for the
//! payload.
//!
//! ```json
//! { "framing": "LF",
//!   "rules": [ { "label": "Guess", "direction": "client",
//!                "pattern": "GUESS (-?[0-9]+)", "payload": "Int",
//!                "template": "GUESS {0}" } ] }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::monitor::{Side, TypedMessage, Value};
use crate::pst::{MessageSignature, Polarity, Sort};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Framing {
    #[serde(rename = "LF")]
    Lf,
    #[serde(rename = "CRLF")]
    Crlf,
}

impl Framing {
    pub fn terminator(self) -> &'static str {
        match self {
            Framing::Lf => "\n",
            Framing::Crlf => "\r\n",
        }
    }

    /// Strips a trailing `\n` or `\r\n`.
    pub fn strip(line: &str) -> &str {
        let line = line.strip_suffix('\n').unwrap_or(line);
        line.strip_suffix('\r').unwrap_or(line)
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("cannot read codec file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed codec file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("rule `{label}` ({direction}): bad pattern: {source}")]
    BadRegex {
        label: String,
        direction: Side,
        source: regex::Error,
    },
    #[error("rule `{label}` ({direction}): pattern has {captures} capture group(s) but the payload needs {expected}")]
    ArityMismatch {
        label: String,
        direction: Side,
        captures: usize,
        expected: usize,
    },
    #[error("rule `{label}` ({direction}): template must contain `{{0}}` exactly when the message has a payload")]
    Template { label: String, direction: Side },
    #[error("no rule for `{label}` sent by the {direction}")]
    MissingRule { label: String, direction: Side },
    #[error("more than one rule for `{label}` sent by the {direction}")]
    DuplicateRule { label: String, direction: Side },
    #[error("rule `{label}` ({direction}) does not correspond to any message of the session type")]
    UnexpectedRule { label: String, direction: Side },
    #[error("rule `{label}` ({direction}): payload {rule} does not match the type's {expected}")]
    PayloadMismatch {
        label: String,
        direction: Side,
        rule: String,
        expected: String,
    },
    #[error("`{label}` payload cannot be written on a single line")]
    Unframeable { label: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RuleDoc {
    label: String,
    direction: Side,
    pattern: String,
    payload: Option<Sort>,
    template: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CodecDoc {
    framing: Framing,
    rules: Vec<RuleDoc>,
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub label: String,
    pub direction: Side,
    pub payload: Option<Sort>,
    pub template: String,
    pub pattern: String,
    regex: Regex,
}

impl Rule {
    fn render(&self, payload: Option<&Value>) -> String {
        match payload {
            Some(v) => self.template.replace("{0}", &v.to_string()),
            None => self.template.clone(),
        }
    }
}

/// Result of decoding one de-framed line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    Message(TypedMessage),
    /// No rule applied; the raw text is kept for error reporting and
    /// forwarded untouched.
    Unrecognized {
        direction: Side,
        raw: String,
    },
}

/// The extension point between the transport and the monitor: anything
/// that can turn lines into typed messages and back.
pub trait LineCodec: Send + Sync {
    fn framing(&self) -> Framing;

    fn decode(&self, direction: Side, line: &str) -> Decoded;

    fn encode(&self, msg: &TypedMessage) -> Result<String, CodecError>;
}

#[derive(Debug, Clone)]
pub struct CodecSpec {
    framing: Framing,
    rules: Vec<Rule>,
    warnings: Vec<String>,
}

fn parse_payload(sort: Sort, text: &str) -> Option<Value> {
    match sort {
        Sort::Int => text.parse().ok().map(Value::Int),
        Sort::String => Some(Value::String(text.to_string())),
        Sort::Bool => match text.to_ascii_lowercase().as_str() {
            "true" => Some(Value::Bool(true)),
            "false" => Some(Value::Bool(false)),
            _ => None,
        },
    }
}

fn sample(sort: Sort) -> Value {
    match sort {
        Sort::Int => Value::Int(0),
        Sort::String => Value::String("x".into()),
        Sort::Bool => Value::Bool(true),
    }
}

fn sort_name(s: Option<Sort>) -> String {
    s.map(|s| s.name().to_string())
        .unwrap_or_else(|| "none".into())
}

impl CodecSpec {
    /// Parses a codec document and checks each rule on its own.
    pub fn from_json(text: &str) -> Result<Self, CodecError> {
        let doc: CodecDoc = serde_json::from_str(text)?;
        let mut rules = Vec::with_capacity(doc.rules.len());
        for r in doc.rules {
            let regex = Regex::new(&format!("^(?:{})$", r.pattern)).map_err(|source| {
                CodecError::BadRegex {
                    label: r.label.clone(),
                    direction: r.direction,
                    source,
                }
            })?;
            let captures = regex.captures_len() - 1;
            let expected = usize::from(r.payload.is_some());
            if captures != expected {
                return Err(CodecError::ArityMismatch {
                    label: r.label,
                    direction: r.direction,
                    captures,
                    expected,
                });
            }
            if r.template.contains("{0}") != r.payload.is_some() {
                return Err(CodecError::Template {
                    label: r.label,
                    direction: r.direction,
                });
            }
            rules.push(Rule {
                label: r.label,
                direction: r.direction,
                payload: r.payload,
                template: r.template,
                pattern: r.pattern,
                regex,
            });
        }
        let mut spec = CodecSpec {
            framing: doc.framing,
            rules,
            warnings: Vec::new(),
        };
        spec.warnings = spec.overlap_warnings();
        for w in &spec.warnings {
            tracing::warn!("{w}");
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, CodecError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Loads a codec and cross-checks it against the messages of a type.
    pub fn load_for(
        path: &Path,
        signatures: &[MessageSignature],
        perspective: Side,
    ) -> Result<Self, CodecError> {
        let spec = Self::load(path)?;
        spec.check_against(signatures, perspective)?;
        Ok(spec)
    }

    /// Every `(label, sender)` of the type must have exactly one rule with a
    /// matching payload sort, and no rule may be left over.
    pub fn check_against(
        &self,
        signatures: &[MessageSignature],
        perspective: Side,
    ) -> Result<(), CodecError> {
        let mut needed: BTreeMap<(String, Side), BTreeSet<Option<Sort>>> = BTreeMap::new();
        for sig in signatures {
            let sender = match sig.polarity {
                Polarity::Send => perspective,
                Polarity::Receive => perspective.peer(),
            };
            needed
                .entry((sig.label.clone(), sender))
                .or_default()
                .insert(sig.payload);
        }
        let mut seen = BTreeSet::new();
        for r in &self.rules {
            let key = (r.label.clone(), r.direction);
            let Some(sorts) = needed.get(&key) else {
                return Err(CodecError::UnexpectedRule {
                    label: r.label.clone(),
                    direction: r.direction,
                });
            };
            if !seen.insert(key) {
                return Err(CodecError::DuplicateRule {
                    label: r.label.clone(),
                    direction: r.direction,
                });
            }
            if sorts.len() != 1 || !sorts.contains(&r.payload) {
                return Err(CodecError::PayloadMismatch {
                    label: r.label.clone(),
                    direction: r.direction,
                    rule: sort_name(r.payload),
                    expected: sorts
                        .iter()
                        .map(|s| sort_name(*s))
                        .collect::<Vec<_>>()
                        .join(" / "),
                });
            }
        }
        if let Some((label, direction)) = needed.into_keys().find(|k| !seen.contains(k)) {
            return Err(CodecError::MissingRule { label, direction });
        }
        Ok(())
    }

    fn overlap_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, r) in self.rules.iter().enumerate() {
            let rendered = r.render(r.payload.map(sample).as_ref());
            for (j, other) in self.rules.iter().enumerate() {
                if i != j && other.direction == r.direction && other.regex.is_match(&rendered) {
                    let note = if j < i { "shadows" } else { "also matches" };
                    out.push(format!(
                        "codec rule `{}` {note} the rendering {rendered:?} of rule `{}` ({})",
                        other.label, r.label, r.direction
                    ));
                }
            }
        }
        out
    }

    pub fn framing(&self) -> Framing {
        self.framing
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn decode(&self, direction: Side, line: &str) -> Decoded {
        let unrecognized = || Decoded::Unrecognized {
            direction,
            raw: line.to_string(),
        };
        let Some((rule, caps)) = self
            .rules
            .iter()
            .filter(|r| r.direction == direction)
            .find_map(|r| r.regex.captures(line).map(|c| (r, c)))
        else {
            return unrecognized();
        };
        let payload = match rule.payload {
            None => None,
            Some(sort) => {
                let text = caps.get(1).map(|m| m.as_str()).unwrap_or("");
                match parse_payload(sort, text) {
                    Some(v) => Some(v),
                    None => return unrecognized(),
                }
            }
        };
        Decoded::Message(TypedMessage {
            direction,
            label: rule.label.clone(),
            payload,
        })
    }

    /// Renders a message without the line terminator.
    pub fn encode(&self, msg: &TypedMessage) -> Result<String, CodecError> {
        let rule = self
            .rules
            .iter()
            .find(|r| r.label == msg.label && r.direction == msg.direction)
            .ok_or_else(|| CodecError::MissingRule {
                label: msg.label.clone(),
                direction: msg.direction,
            })?;
        let line = rule.render(msg.payload.as_ref());
        if line.contains(['\n', '\r']) {
            return Err(CodecError::Unframeable {
                label: msg.label.clone(),
            });
        }
        Ok(line)
    }

    /// Encodes and appends the line terminator.
    pub fn encode_framed(&self, msg: &TypedMessage) -> Result<String, CodecError> {
        let mut line = self.encode(msg)?;
        line.push_str(self.framing.terminator());
        Ok(line)
    }
}

impl LineCodec for CodecSpec {
    fn framing(&self) -> Framing {
        self.framing
    }

    fn decode(&self, direction: Side, line: &str) -> Decoded {
        CodecSpec::decode(self, direction, line)
    }

    fn encode(&self, msg: &TypedMessage) -> Result<String, CodecError> {
        CodecSpec::encode(self, msg)
    }
}

/// SMTP message bodies travel as one line: newlines become a literal `\n`
/// and backslashes are doubled.
pub fn escape_body(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    for c in body.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_body(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAME: &str = r#"{ "framing": "LF", "rules": [
        { "label": "Guess", "direction": "client", "pattern": "GUESS (-?[0-9]+)", "payload": "Int", "template": "GUESS {0}" },
        { "label": "Correct", "direction": "server", "pattern": "CORRECT", "payload": null, "template": "CORRECT" },
        { "label": "Flag", "direction": "server", "pattern": "FLAG (\\w+)", "payload": "Bool", "template": "FLAG {0}" }
    ]}"#;

    #[test]
    fn decode_examples() {
        let spec = CodecSpec::from_json(GAME).unwrap();
        assert_eq!(
            spec.decode(Side::Client, "GUESS 23"),
            Decoded::Message(TypedMessage::new(
                Side::Client,
                "Guess",
                Some(Value::Int(23))
            ))
        );
        assert_eq!(
            spec.decode(Side::Server, "CORRECT"),
            Decoded::Message(TypedMessage::unit(Side::Server, "Correct"))
        );
        assert_eq!(
            spec.decode(Side::Client, "FROBNICATE"),
            Decoded::Unrecognized {
                direction: Side::Client,
                raw: "FROBNICATE".into()
            }
        );
        // direction matters
        assert!(matches!(
            spec.decode(Side::Server, "GUESS 1"),
            Decoded::Unrecognized { .. }
        ));
        // implicit anchoring
        assert!(matches!(
            spec.decode(Side::Server, "CORRECT!"),
            Decoded::Unrecognized { .. }
        ));
        assert!(matches!(
            spec.decode(Side::Client, "GUESS 99999999999999999999"),
            Decoded::Unrecognized { .. }
        ));
        assert_eq!(
            spec.decode(Side::Server, "FLAG TRUE"),
            Decoded::Message(TypedMessage::new(
                Side::Server,
                "Flag",
                Some(Value::Bool(true))
            ))
        );
        assert!(matches!(
            spec.decode(Side::Server, "FLAG yes"),
            Decoded::Unrecognized { .. }
        ));
    }

    #[test]
    fn encode_examples() {
        let spec = CodecSpec::from_json(GAME).unwrap();
        assert_eq!(
            spec.encode(&TypedMessage::unit(Side::Server, "Correct"))
                .unwrap(),
            "CORRECT"
        );
        assert_eq!(
            spec.encode(&TypedMessage::new(
                Side::Client,
                "Guess",
                Some(Value::Int(23))
            ))
            .unwrap(),
            "GUESS 23"
        );
        assert_eq!(
            spec.encode_framed(&TypedMessage::unit(Side::Server, "Correct"))
                .unwrap(),
            "CORRECT\n"
        );
        assert!(matches!(
            spec.encode(&TypedMessage::unit(Side::Client, "Correct")),
            Err(CodecError::MissingRule { .. })
        ));
    }

    #[test]
    fn arity_and_template_errors() {
        let bad = r#"{ "framing": "LF", "rules": [
            { "label": "A", "direction": "client", "pattern": "A", "payload": "Int", "template": "A {0}" } ]}"#;
        assert!(matches!(
            CodecSpec::from_json(bad),
            Err(CodecError::ArityMismatch { .. })
        ));
        let bad = r#"{ "framing": "LF", "rules": [
            { "label": "A", "direction": "client", "pattern": "A (\\d+)", "payload": "Int", "template": "A" } ]}"#;
        assert!(matches!(
            CodecSpec::from_json(bad),
            Err(CodecError::Template { .. })
        ));
        let bad = r#"{ "framing": "LF", "rules": [
            { "label": "A", "direction": "client", "pattern": "A (", "payload": null, "template": "A" } ]}"#;
        assert!(matches!(
            CodecSpec::from_json(bad),
            Err(CodecError::BadRegex { .. })
        ));
    }

    #[test]
    fn overlap_is_reported() {
        let doc = r#"{ "framing": "CRLF", "rules": [
            { "label": "Any", "direction": "client", "pattern": ".*", "payload": null, "template": "ANY" },
            { "label": "Quit", "direction": "client", "pattern": "QUIT", "payload": null, "template": "QUIT" } ]}"#;
        let spec = CodecSpec::from_json(doc).unwrap();
        assert!(spec.warnings().iter().any(|w| w.contains("shadows")));
    }

    #[test]
    fn body_escaping() {
        let body = "line one\nline \\two\n.";
        assert_eq!(escape_body(body), "line one\\nline \\\\two\\n.");
        assert_eq!(unescape_body(&escape_body(body)), body);
    }

    #[test]
    fn framing_strip() {
        assert_eq!(Framing::strip("HELO x\r\n"), "HELO x");
        assert_eq!(Framing::strip("HELO x\n"), "HELO x");
        assert_eq!(Framing::strip("HELO x"), "HELO x");
    }
}
