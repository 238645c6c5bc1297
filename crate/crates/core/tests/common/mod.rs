//! Reference implementations used as oracles by the integration tests.
//!
//! Nothing here calls into the library's statistics or automaton code: the
//! interval maths is recomputed from an erf series, and the reference
//! monitor walks the session-type syntax tree directly.

#![allow(dead_code)]

use std::collections::HashMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pstmon::monitor::{MonitorEvent, Side, TypedMessage, Value, Verdict};
use pstmon::pst::{Branch, ChoiceKind, Probability, SessionType, Sort, PROB_SCALE};

// ---------------------------------------------------------------- intervals

/// erf via the positive-term series
/// erf(x) = 2/√π · e^{−x²} · Σ 2ⁿ x^{2n+1} / (1·3·…·(2n+1)).
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x == 0.0 {
        return 0.0;
    }
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x * x / (2.0 * n + 1.0);
        sum += term;
        if term <= sum * 1e-18 {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn quantile(q: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn z_two_sided(level: f64) -> f64 {
    quantile(1.0 - (1.0 - level) / 2.0)
}

pub fn z_one_sided(level: f64) -> f64 {
    quantile(level)
}

pub fn wald(p: f64, n: u64, z: f64) -> (f64, f64) {
    let half = z * (p * (1.0 - p) / n as f64).sqrt();
    ((p - half).max(0.0), (p + half).min(1.0))
}

/// Textbook Wilson score interval.
pub fn wilson(p: f64, n: u64, z: f64) -> (f64, f64) {
    let n = n as f64;
    let denom = 1.0 + z * z / n;
    let centre = p + z * z / (2.0 * n);
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt();
    (
        ((centre - half) / denom).max(0.0),
        ((centre + half) / denom).min(1.0),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleCi {
    Wald(f64),
    Wilson(f64),
}

impl OracleCi {
    pub fn bounds(self, p: f64, n: u64) -> (f64, f64) {
        match self {
            OracleCi::Wald(z) => wald(p, n, z),
            OracleCi::Wilson(z) => wilson(p, n, z),
        }
    }
}

/// Length of the shortest all-one-branch prefix at which that branch's
/// estimate (1.0) falls outside the interval around `p`.
pub fn first_deviation(p: f64, ci: OracleCi) -> u64 {
    (1..10_000)
        .find(|&n| {
            let (lo, hi) = ci.bounds(p, n);
            1.0 < lo || 1.0 > hi
        })
        .expect("deviates eventually")
}

// -------------------------------------------------------- reference monitor

struct EnvNode<'a> {
    var: String,
    body: &'a SessionType,
    path: String,
    parent: Env<'a>,
}

type Env<'a> = Option<Rc<EnvNode<'a>>>;

fn lookup<'a>(env: &Env<'a>, var: &str) -> Rc<EnvNode<'a>> {
    let mut cur = env.clone();
    while let Some(node) = cur {
        if node.var == var {
            return node;
        }
        cur = node.parent.clone();
    }
    panic!("unbound variable {var}")
}

enum Pos<'a> {
    At {
        choice: &'a pstmon::pst::Choice,
        path: String,
        env: Env<'a>,
    },
    Ended,
    Dead,
}

fn resolve<'a>(mut t: &'a SessionType, mut path: String, mut env: Env<'a>) -> Pos<'a> {
    loop {
        match t {
            SessionType::End => return Pos::Ended,
            SessionType::Choice(choice) => return Pos::At { choice, path, env },
            SessionType::Rec { var, body, .. } => {
                env = Some(Rc::new(EnvNode {
                    var: var.clone(),
                    body,
                    path: path.clone(),
                    parent: env,
                }));
                t = body;
            }
            SessionType::Var { name, .. } => {
                let node = lookup(&env, name);
                t = node.body;
                path = node.path.clone();
                env = Some(node);
            }
        }
    }
}

/// Expected event content, without timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Expected {
    pub seq: u64,
    pub direction: Option<Side>,
    pub choice_point_id: String,
    pub label: String,
    pub n: Option<u64>,
    pub p_hat: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub verdict: Verdict,
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9,
        _ => false,
    }
}

impl Expected {
    pub fn matches(&self, e: &MonitorEvent) -> bool {
        self.seq == e.seq
            && self.direction == e.direction
            && self.choice_point_id == e.choice_point_id
            && self.label == e.label
            && self.n == e.n
            && close(self.p_hat, e.p_hat)
            && close(self.ci_lo, e.ci_lo)
            && close(self.ci_hi, e.ci_hi)
            && self.verdict == e.verdict
    }
}

/// A label the next message may carry, with its payload sort.
pub type Offer = (String, Option<Sort>);

/// Re-simulates monitoring from the syntax tree, recomputing every
/// estimate and interval from raw counts on each step.
pub struct ReferenceMonitor<'a> {
    perspective: Side,
    ci: OracleCi,
    pos: Pos<'a>,
    counts: HashMap<String, Vec<u64>>,
    flags: HashMap<String, Vec<bool>>,
    seq: u64,
}

impl<'a> ReferenceMonitor<'a> {
    pub fn new(t: &'a SessionType, perspective: Side, ci: OracleCi) -> Self {
        ReferenceMonitor {
            perspective,
            ci,
            pos: resolve(t, "root".into(), None),
            counts: HashMap::new(),
            flags: HashMap::new(),
            seq: 0,
        }
    }

    fn sender(&self, kind: ChoiceKind) -> Side {
        match kind {
            ChoiceKind::Internal => self.perspective,
            ChoiceKind::External => self.perspective.peer(),
        }
    }

    /// Labels, senders and payload sorts acceptable next.
    pub fn expected(&self) -> Option<(Side, Vec<Offer>)> {
        match &self.pos {
            Pos::At { choice, .. } => Some((
                self.sender(choice.kind),
                choice
                    .branches
                    .iter()
                    .map(|b| (b.label.clone(), b.payload.as_ref().map(|p| p.sort)))
                    .collect(),
            )),
            _ => None,
        }
    }

    pub fn spec_probs(&self) -> Option<Vec<f64>> {
        match &self.pos {
            Pos::At { choice, .. } => {
                Some(choice.branches.iter().map(|b| b.prob.as_f64()).collect())
            }
            _ => None,
        }
    }

    pub fn is_ended(&self) -> bool {
        matches!(self.pos, Pos::Ended)
    }

    pub fn is_dead(&self) -> bool {
        matches!(self.pos, Pos::Dead)
    }

    fn bare(&mut self, direction: Side, cp: &str, label: &str, verdict: Verdict) -> Expected {
        self.seq += 1;
        Expected {
            seq: self.seq,
            direction: Some(direction),
            choice_point_id: cp.into(),
            label: label.into(),
            n: None,
            p_hat: None,
            ci_lo: None,
            ci_hi: None,
            verdict,
        }
    }

    /// Closing the connection before `end`: one `aborted` event, but only
    /// if something was logged before.
    pub fn abort(&mut self) -> Option<Expected> {
        let Pos::At { path, .. } = std::mem::replace(&mut self.pos, Pos::Dead) else {
            return None;
        };
        if self.seq == 0 {
            return None;
        }
        self.seq += 1;
        Some(Expected {
            seq: self.seq,
            direction: None,
            choice_point_id: path,
            label: String::new(),
            n: None,
            p_hat: None,
            ci_lo: None,
            ci_hi: None,
            verdict: Verdict::Aborted,
        })
    }

    /// `None` once the session is closed by a violation.
    pub fn step(&mut self, msg: &TypedMessage) -> Option<Vec<Expected>> {
        let pos = std::mem::replace(&mut self.pos, Pos::Dead);
        let (choice, path, env) = match pos {
            Pos::Dead => return None,
            Pos::Ended => {
                return Some(vec![self.bare(
                    msg.direction,
                    "end",
                    &msg.label,
                    Verdict::Violation,
                )])
            }
            Pos::At { choice, path, env } => (choice, path, env),
        };
        let Some(index) = choice.branches.iter().position(|b| b.label == msg.label) else {
            return Some(vec![self.bare(
                msg.direction,
                &path,
                &msg.label,
                Verdict::Violation,
            )]);
        };
        let branch = &choice.branches[index];
        let sort = msg.payload.as_ref().map(Value::sort);
        if msg.direction != self.sender(choice.kind)
            || sort != branch.payload.as_ref().map(|p| p.sort)
        {
            return Some(vec![self.bare(
                msg.direction,
                &path,
                &msg.label,
                Verdict::Violation,
            )]);
        }
        let k = choice.branches.len();
        let counts = self
            .counts
            .entry(path.clone())
            .or_insert_with(|| vec![0; k]);
        counts[index] += 1;
        let counts = counts.clone();
        let n: u64 = counts.iter().sum();
        let mut out = Vec::new();
        if k == 1 {
            let p = branch.prob.as_f64();
            let mut e = self.bare(msg.direction, &path, &msg.label, Verdict::Ok);
            e.n = Some(n);
            e.p_hat = Some(1.0);
            e.ci_lo = Some(p);
            e.ci_hi = Some(p);
            out.push(e);
        } else {
            let flags = self
                .flags
                .entry(path.clone())
                .or_insert_with(|| vec![false; k])
                .clone();
            let mut new_flags = flags.clone();
            let order = std::iter::once(index).chain((0..k).filter(|&j| j != index));
            for j in order {
                let b = &choice.branches[j];
                let p_hat = counts[j] as f64 / n as f64;
                let (lo, hi) = self.ci.bounds(b.prob.as_f64(), n);
                let deviating = p_hat < lo || p_hat > hi;
                let verdict = match (flags[j], deviating) {
                    (false, true) => Verdict::WarningRaised,
                    (true, false) => Verdict::WarningRetracted,
                    _ => Verdict::Ok,
                };
                new_flags[j] = deviating;
                let mut e = self.bare(msg.direction, &path, &b.label, verdict);
                e.n = Some(n);
                e.p_hat = Some(p_hat);
                e.ci_lo = Some(lo);
                e.ci_hi = Some(hi);
                out.push(e);
            }
            self.flags.insert(path.clone(), new_flags);
        }
        self.pos = resolve(&branch.cont, format!("{path}.{}", branch.label), env);
        if self.is_ended() {
            out.push(self.bare(msg.direction, "end", &msg.label, Verdict::SessionEnd));
        }
        Some(out)
    }
}

// --------------------------------------------------------------- generators

const LABELS: &[&str] = &["A", "B", "C", "D", "E", "F"];
const SORTS: &[Option<Sort>] = &[None, Some(Sort::Int), Some(Sort::String), Some(Sort::Bool)];

/// Splits probability mass 1 into `k` positive multiples of 0.05.
fn split_mass(rng: &mut ChaCha8Rng, k: usize) -> Vec<Probability> {
    let mut parts = vec![1u64; k];
    for _ in k..20 {
        parts[rng.random_range(0..k)] += 1;
    }
    parts
        .into_iter()
        .map(|p| Probability::from_units(p * (PROB_SCALE / 20)).unwrap())
        .collect()
}

fn gen_choice(rng: &mut ChaCha8Rng, budget: &mut usize, vars: &mut Vec<String>) -> SessionType {
    *budget -= 1;
    let bind = rng.random_bool(0.6);
    if bind {
        vars.push(format!("X{}", vars.len()));
    }
    let kind = if rng.random_bool(0.5) {
        ChoiceKind::Internal
    } else {
        ChoiceKind::External
    };
    let polarity = kind.polarity();
    let k = rng.random_range(1..=4);
    let mut labels: Vec<&str> = LABELS.to_vec();
    let probs = split_mass(rng, k);
    let mut branches = Vec::new();
    for prob in probs {
        let label = labels.remove(rng.random_range(0..labels.len()));
        let sort = SORTS[rng.random_range(0..SORTS.len())];
        let roll = rng.random_range(0..10);
        let cont = if *budget > 0 && roll < 4 {
            gen_choice(rng, budget, vars)
        } else if !vars.is_empty() && roll < 8 {
            SessionType::var(vars[rng.random_range(0..vars.len())].clone())
        } else {
            SessionType::End
        };
        branches.push(Branch::new(
            polarity,
            label,
            sort.map(|s| ("v", s)),
            prob,
            cont,
        ));
    }
    let body = SessionType::choice(kind, branches);
    if bind {
        let var = vars.pop().unwrap();
        SessionType::rec(var, body)
    } else {
        body
    }
}

/// Random well-formed type with at most `max_choices` choice occurrences
/// and at most four branches per choice.
pub fn random_type(rng: &mut ChaCha8Rng, max_choices: usize) -> SessionType {
    let mut budget = max_choices;
    gen_choice(rng, &mut budget, &mut Vec::new())
}

fn value_of(rng: &mut ChaCha8Rng, sort: Option<Sort>) -> Option<Value> {
    sort.map(|s| match s {
        Sort::Int => Value::Int(rng.random_range(-1000..1000)),
        Sort::String => Value::String(format!("s{}", rng.random_range(0..100))),
        Sort::Bool => Value::Bool(rng.random_bool(0.5)),
    })
}

/// Random message trace for `t`: mostly legal, biased towards the first
/// branch in its first half (to raise warnings) and following the
/// specified frequencies afterwards (to retract them), with occasional
/// protocol breaches and messages after the end.
pub fn random_trace(rng: &mut ChaCha8Rng, t: &SessionType, perspective: Side) -> Vec<TypedMessage> {
    let len = rng.random_range(1..=80);
    let mut walker = ReferenceMonitor::new(t, perspective, OracleCi::Wald(1.96));
    let mut out = Vec::new();
    while out.len() < len {
        let Some((sender, options)) = walker.expected() else {
            if walker.is_ended() && rng.random_bool(0.3) {
                out.push(TypedMessage::unit(sender_any(rng), "A"));
            }
            break;
        };
        let probs = walker.spec_probs().unwrap();
        let index = if out.len() < len / 2 && rng.random_bool(0.8) {
            0
        } else {
            let mut r: f64 = rng.random();
            probs
                .iter()
                .position(|p| {
                    r -= p;
                    r < 0.0
                })
                .unwrap_or(probs.len() - 1)
        };
        let (label, sort) = options[index].clone();
        let msg = match rng.random_range(0..100) {
            0 => TypedMessage::unit(sender, "Zzz"),
            1 => TypedMessage::new(sender.peer(), label, value_of(rng, sort)),
            2 => {
                let other = SORTS.iter().copied().find(|s| *s != sort).unwrap();
                TypedMessage::new(sender, label, value_of(rng, other))
            }
            _ => TypedMessage::new(sender, label, value_of(rng, sort)),
        };
        let violated = walker
            .step(&msg)
            .is_some_and(|ev| ev.iter().any(|e| e.verdict == Verdict::Violation));
        out.push(msg);
        if violated {
            // occasionally keep sending after the violation
            if rng.random_bool(0.3) {
                out.push(TypedMessage::unit(sender, "A"));
            }
            break;
        }
    }
    out
}

fn sender_any(rng: &mut ChaCha8Rng) -> Side {
    if rng.random_bool(0.5) {
        Side::Client
    } else {
        Side::Server
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ------------------------------------------------------------- fixtures

pub const GAME_PST: &str = include_str!("../../examples/game.pst");
pub const SMTP_PST: &str = include_str!("../../examples/smtp.pst");

pub mod net;
