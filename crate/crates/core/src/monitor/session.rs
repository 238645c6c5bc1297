use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use thiserror::Error;

use super::automaton::{ChoiceState, MonitorAutomaton, State, StateId, END_ID};
use super::event::{MonitorEvent, Verdict};
use super::message::{Side, TypedMessage};
use super::sink::EventSink;
use crate::pst::{Polarity, Sort};
use crate::stats::{Assessment, ChoiceStats, CiMethod, FlagChange};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorConfig {
    pub method: CiMethod,
    /// Which network side plays the endpoint the type is written for.
    pub perspective: Side,
    /// Visits required at a choice point before warnings may be raised.
    pub min_samples: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            method: CiMethod::default(),
            perspective: Side::Server,
            min_samples: 1,
        }
    }
}

impl MonitorConfig {
    pub fn with_perspective(perspective: Side) -> Self {
        MonitorConfig {
            perspective,
            ..Default::default()
        }
    }

    /// Side expected to send at a state of the given polarity.
    pub fn sender(&self, polarity: Polarity) -> Side {
        match polarity {
            Polarity::Send => self.perspective,
            Polarity::Receive => self.perspective.peer(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    UnexpectedLabel {
        got: String,
    },
    WrongDirection {
        label: String,
        got: Side,
    },
    PayloadSort {
        label: String,
        expected: Option<Sort>,
        got: Option<Sort>,
    },
    Unrecognized {
        raw: String,
    },
    AfterEnd {
        got: String,
    },
}

/// A hard protocol breach. `expected` lists the labels acceptable at the
/// point of failure (empty once the session has ended).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub choice_point_id: String,
    pub kind: ViolationKind,
    pub expected: Vec<String>,
    pub expected_sender: Option<Side>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let expected = format!("{{{}}}", self.expected.join(", "));
        match &self.kind {
            ViolationKind::UnexpectedLabel { got } => {
                write!(
                    f,
                    "at {}: unexpected `{got}`, expected one of {expected}",
                    self.choice_point_id
                )
            }
            ViolationKind::WrongDirection { label, got } => write!(
                f,
                "at {}: `{label}` sent by {got}, expected {} to send one of {expected}",
                self.choice_point_id,
                got.peer()
            ),
            ViolationKind::PayloadSort {
                label,
                expected: e,
                got,
            } => write!(
                f,
                "at {}: `{label}` payload is {}, expected {}",
                self.choice_point_id,
                got.map(Sort::name).unwrap_or("empty"),
                e.map(Sort::name).unwrap_or("empty")
            ),
            ViolationKind::Unrecognized { raw } => {
                write!(
                    f,
                    "at {}: unrecognised message {raw:?}, expected one of {expected}",
                    self.choice_point_id
                )
            }
            ViolationKind::AfterEnd { got } => {
                write!(f, "`{got}` received after the session ended")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("session {0} is closed")]
pub struct SessionClosed(pub u64);

/// Everything one message produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub events: Vec<MonitorEvent>,
    pub violation: Option<Violation>,
}

impl StepOutcome {
    pub fn is_violation(&self) -> bool {
        self.violation.is_some()
    }

    pub fn reached_end(&self) -> bool {
        self.events.iter().any(|e| e.verdict == Verdict::SessionEnd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionVerdict {
    Completed,
    Violation,
    Aborted,
}

impl fmt::Display for SessionVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionVerdict::Completed => "completed",
            SessionVerdict::Violation => "violation",
            SessionVerdict::Aborted => "aborted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchSummary {
    pub label: String,
    pub count: u64,
    pub p_hat: Option<f64>,
    pub warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChoicePointSummary {
    pub choice_point_id: String,
    pub n: u64,
    pub branches: Vec<BranchSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub session_id: u64,
    pub verdict: SessionVerdict,
    pub choice_points: Vec<ChoicePointSummary>,
    pub events: u64,
}

impl SessionSummary {
    pub fn choice_point(&self, id: &str) -> Option<&ChoicePointSummary> {
        self.choice_points.iter().find(|c| c.choice_point_id == id)
    }

    pub fn warnings_active(&self) -> bool {
        self.choice_points
            .iter()
            .any(|c| c.branches.iter().any(|b| b.warning))
    }
}

/// Cross-session counters maintained alongside the per-session ones.
/// Reported only; verdicts never consult them.
#[derive(Debug, Default)]
pub struct AggregateStats {
    counts: Mutex<BTreeMap<String, BTreeMap<String, u64>>>,
}

impl AggregateStats {
    pub fn new() -> Self {
        Self::default()
    }

    fn observe(&self, choice_point_id: &str, label: &str) {
        let mut counts = self.counts.lock().expect("aggregate lock");
        *counts
            .entry(choice_point_id.to_string())
            .or_default()
            .entry(label.to_string())
            .or_default() += 1;
    }

    pub fn snapshot(&self) -> BTreeMap<String, BTreeMap<String, u64>> {
        self.counts.lock().expect("aggregate lock").clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cursor {
    At(StateId),
    Ended,
    Violated,
    Aborted,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Monitor state for one connection.
pub struct Session {
    id: u64,
    automaton: Arc<MonitorAutomaton>,
    config: MonitorConfig,
    cursor: Cursor,
    stats: Vec<Option<ChoiceStats>>,
    seq: u64,
    aggregate: Option<Arc<AggregateStats>>,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("cursor", &self.cursor)
            .field("seq", &self.seq)
            .finish()
    }
}

impl Session {
    pub fn new(id: u64, automaton: Arc<MonitorAutomaton>, config: MonitorConfig) -> Self {
        let stats = automaton
            .states
            .iter()
            .map(|s| match s {
                State::Choice(c) => Some(ChoiceStats::new(
                    c.id.clone(),
                    c.transitions
                        .iter()
                        .map(|t| (t.label.clone(), t.prob.as_f64())),
                )),
                State::End => None,
            })
            .collect();
        let cursor = match automaton.states[automaton.initial] {
            State::End => Cursor::Ended,
            State::Choice(_) => Cursor::At(automaton.initial),
        };
        Session {
            id,
            automaton,
            config,
            cursor,
            stats,
            seq: 0,
            aggregate: None,
        }
    }

    pub fn with_aggregate(mut self, aggregate: Arc<AggregateStats>) -> Self {
        self.aggregate = Some(aggregate);
        self
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn is_closed(&self) -> bool {
        !matches!(self.cursor, Cursor::At(_))
    }

    pub fn has_ended(&self) -> bool {
        self.cursor == Cursor::Ended
    }

    pub fn is_violated(&self) -> bool {
        self.cursor == Cursor::Violated
    }

    /// Labels acceptable next, with the side expected to send them.
    pub fn expected(&self) -> Option<(Side, Vec<String>)> {
        match self.cursor {
            Cursor::At(s) => match &self.automaton.states[s] {
                State::Choice(c) => Some((self.config.sender(c.polarity), c.labels())),
                State::End => None,
            },
            _ => None,
        }
    }

    fn event(
        &mut self,
        direction: Option<Side>,
        choice_point_id: &str,
        label: &str,
        verdict: Verdict,
    ) -> MonitorEvent {
        self.seq += 1;
        MonitorEvent {
            session_id: self.id,
            seq: self.seq,
            direction,
            choice_point_id: choice_point_id.to_string(),
            label: label.to_string(),
            n: None,
            p_hat: None,
            ci_lo: None,
            ci_hi: None,
            verdict,
            timestamp_ms: now_ms(),
        }
    }

    fn assessed_event(
        &mut self,
        direction: Side,
        cp: &str,
        a: &Assessment,
        n: u64,
    ) -> MonitorEvent {
        let verdict = match a.change {
            Some(FlagChange::Raised) => Verdict::WarningRaised,
            Some(FlagChange::Retracted) => Verdict::WarningRetracted,
            None => Verdict::Ok,
        };
        let mut e = self.event(Some(direction), cp, &a.label, verdict);
        e.n = Some(n);
        e.p_hat = Some(a.p_hat);
        e.ci_lo = Some(a.lo);
        e.ci_hi = Some(a.hi);
        e
    }

    fn violate(&mut self, direction: Side, label: &str, violation: Violation) -> StepOutcome {
        let cp = violation.choice_point_id.clone();
        let e = self.event(Some(direction), &cp, label, Verdict::Violation);
        self.cursor = Cursor::Violated;
        StepOutcome {
            events: vec![e],
            violation: Some(violation),
        }
    }

    fn current_choice<'a>(
        &self,
        automaton: &'a MonitorAutomaton,
    ) -> Option<(StateId, &'a ChoiceState)> {
        match self.cursor {
            Cursor::At(s) => match &automaton.states[s] {
                State::Choice(c) => Some((s, c)),
                State::End => None,
            },
            _ => None,
        }
    }

    fn after_end(&mut self, direction: Side, label: &str) -> StepOutcome {
        self.violate(
            direction,
            label,
            Violation {
                choice_point_id: END_ID.to_string(),
                kind: ViolationKind::AfterEnd {
                    got: label.to_string(),
                },
                expected: Vec::new(),
                expected_sender: None,
            },
        )
    }

    /// Advances the monitor by one message.
    pub fn step(&mut self, msg: &TypedMessage) -> Result<StepOutcome, SessionClosed> {
        if matches!(self.cursor, Cursor::Violated | Cursor::Aborted) {
            return Err(SessionClosed(self.id));
        }
        let automaton = Arc::clone(&self.automaton);
        let Some((state_id, choice)) = self.current_choice(&automaton) else {
            return Ok(self.after_end(msg.direction, &msg.label));
        };
        let sender = self.config.sender(choice.polarity);
        let cp = choice.id.clone();
        let violation = |kind| Violation {
            choice_point_id: choice.id.clone(),
            kind,
            expected: choice.labels(),
            expected_sender: Some(sender),
        };
        let Some((index, transition)) = choice.transition(&msg.label) else {
            let v = violation(ViolationKind::UnexpectedLabel {
                got: msg.label.clone(),
            });
            return Ok(self.violate(msg.direction, &msg.label, v));
        };
        if msg.direction != sender {
            let v = violation(ViolationKind::WrongDirection {
                label: msg.label.clone(),
                got: msg.direction,
            });
            return Ok(self.violate(msg.direction, &msg.label, v));
        }
        let got_sort = msg.payload.as_ref().map(|v| v.sort());
        if got_sort != transition.payload {
            let v = violation(ViolationKind::PayloadSort {
                label: msg.label.clone(),
                expected: transition.payload,
                got: got_sort,
            });
            return Ok(self.violate(msg.direction, &msg.label, v));
        }
        let target = transition.target;
        let singleton = choice.is_singleton();
        let spec_prob = transition.prob.as_f64();

        if let Some(agg) = &self.aggregate {
            agg.observe(&cp, &msg.label);
        }
        let method = self.config.method;
        let min_samples = self.config.min_samples;
        let stats = self.stats[state_id]
            .as_mut()
            .expect("choice state has stats");
        stats.observe_index(index);
        let n = stats.n();

        let mut events = Vec::new();
        if singleton {
            let mut e = self.event(Some(msg.direction), &cp, &msg.label, Verdict::Ok);
            e.n = Some(n);
            e.p_hat = Some(1.0);
            e.ci_lo = Some(spec_prob);
            e.ci_hi = Some(spec_prob);
            events.push(e);
        } else {
            let assessments = if n >= min_samples {
                stats.evaluate(&method)
            } else {
                stats.assess(&method)
            };
            let order =
                std::iter::once(index).chain((0..assessments.len()).filter(|&i| i != index));
            for i in order {
                let e = self.assessed_event(msg.direction, &cp, &assessments[i], n);
                events.push(e);
            }
        }

        self.cursor = Cursor::At(target);
        if matches!(automaton.states[target], State::End) {
            let e = self.event(Some(msg.direction), END_ID, &msg.label, Verdict::SessionEnd);
            events.push(e);
            self.cursor = Cursor::Ended;
        }
        Ok(StepOutcome {
            events,
            violation: None,
        })
    }

    /// A line the codec could not translate. Always a violation.
    pub fn step_unrecognized(
        &mut self,
        direction: Side,
        raw: &str,
    ) -> Result<StepOutcome, SessionClosed> {
        if matches!(self.cursor, Cursor::Violated | Cursor::Aborted) {
            return Err(SessionClosed(self.id));
        }
        let automaton = Arc::clone(&self.automaton);
        let Some((_, choice)) = self.current_choice(&automaton) else {
            return Ok(self.after_end(direction, raw));
        };
        let v = Violation {
            choice_point_id: choice.id.clone(),
            kind: ViolationKind::Unrecognized {
                raw: raw.to_string(),
            },
            expected: choice.labels(),
            expected_sender: Some(self.config.sender(choice.polarity)),
        };
        Ok(self.violate(direction, raw, v))
    }

    /// Marks a session that stopped before `end`. Emits an `aborted`
    /// event only if at least one message was monitored.
    pub fn abort(&mut self) -> Option<MonitorEvent> {
        let Cursor::At(state) = self.cursor else {
            return None;
        };
        self.cursor = Cursor::Aborted;
        if self.seq == 0 {
            return None;
        }
        let cp = match &self.automaton.states[state] {
            State::Choice(c) => c.id.clone(),
            State::End => END_ID.to_string(),
        };
        Some(self.event(None, &cp, "", Verdict::Aborted))
    }

    pub fn summary(&self) -> SessionSummary {
        let verdict = match self.cursor {
            Cursor::Ended => SessionVerdict::Completed,
            Cursor::Violated => SessionVerdict::Violation,
            Cursor::At(_) | Cursor::Aborted => SessionVerdict::Aborted,
        };
        let choice_points = self
            .stats
            .iter()
            .flatten()
            .map(|s| ChoicePointSummary {
                choice_point_id: s.choice_point_id().to_string(),
                n: s.n(),
                branches: s
                    .branches()
                    .iter()
                    .map(|b| BranchSummary {
                        label: b.label.clone(),
                        count: b.count,
                        p_hat: (s.n() > 0).then(|| b.count as f64 / s.n() as f64),
                        warning: b.warning,
                    })
                    .collect(),
            })
            .collect();
        SessionSummary {
            session_id: self.id,
            verdict,
            choice_points,
            events: self.seq,
        }
    }

    pub fn stats(&self, choice_point_id: &str) -> Option<&ChoiceStats> {
        self.stats
            .iter()
            .flatten()
            .find(|s| s.choice_point_id() == choice_point_id)
    }
}

/// Drives a fresh session over `source` until the type ends, a violation
/// occurs or the source runs dry. Every event goes to `sink` in order.
pub fn run_session<I>(
    session_id: u64,
    automaton: Arc<MonitorAutomaton>,
    config: MonitorConfig,
    sink: &dyn EventSink,
    source: I,
) -> SessionSummary
where
    I: IntoIterator<Item = io::Result<TypedMessage>>,
{
    let mut session = Session::new(session_id, automaton, config);
    for item in source {
        let msg = match item {
            Ok(m) => m,
            Err(err) => {
                tracing::warn!(session = session_id, %err, "message source failed");
                break;
            }
        };
        let Ok(outcome) = session.step(&msg) else {
            break;
        };
        for e in &outcome.events {
            sink.record(e);
        }
        if session.is_closed() {
            break;
        }
    }
    if let Some(e) = session.abort() {
        sink.record(&e);
    }
    session.summary()
}
