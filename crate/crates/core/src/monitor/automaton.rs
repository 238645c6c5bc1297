use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pst::{
    validate, MessageSignature, Polarity, Probability, SessionType, Sort, WellFormednessError,
    PROB_SCALE, PROB_SUM_TOLERANCE,
};

pub type StateId = usize;

/// Choice-point id of the root state.
pub const ROOT_ID: &str = "root";
/// Choice-point id reported for the terminal state.
pub const END_ID: &str = "end";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub label: String,
    pub payload: Option<Sort>,
    pub prob: Probability,
    pub target: StateId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceState {
    /// Dotted label path from the root, e.g. `root.Guess`.
    pub id: String,
    pub polarity: Polarity,
    pub transitions: Vec<Transition>,
}

impl ChoiceState {
    pub fn is_singleton(&self) -> bool {
        self.transitions.len() == 1
    }

    pub fn labels(&self) -> Vec<String> {
        self.transitions.iter().map(|t| t.label.clone()).collect()
    }

    pub fn transition(&self, label: &str) -> Option<(usize, &Transition)> {
        self.transitions
            .iter()
            .enumerate()
            .find(|(_, t)| t.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum State {
    Choice(ChoiceState),
    End,
}

/// Finite state machine compiled from a session type. Recursion becomes
/// back-edges, so the number of states equals the number of syntactic
/// choice occurrences plus one shared end state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorAutomaton {
    pub states: Vec<State>,
    pub initial: StateId,
}

#[derive(Debug, Error)]
pub enum AutomatonError {
    #[error("session type is not well-formed:\n{}", format_errors(.0))]
    IllFormed(Vec<WellFormednessError>),
    #[error("malformed automaton document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid automaton: {0}")]
    Invalid(String),
}

fn format_errors(errors: &[WellFormednessError]) -> String {
    errors
        .iter()
        .map(|e| format!("  {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

const END_STATE: StateId = 0;

struct Compiler {
    states: Vec<State>,
}

impl Compiler {
    /// State a type denotes once leading `rec` binders are peeled off.
    fn entry_of(&self, t: &SessionType, env: &HashMap<String, StateId>) -> StateId {
        crate::pst::grow(|| self.entry_of_inner(t, env))
    }

    fn entry_of_inner(&self, t: &SessionType, env: &HashMap<String, StateId>) -> StateId {
        match t {
            SessionType::End => END_STATE,
            SessionType::Var { name, .. } => env[name],
            SessionType::Rec { body, .. } => self.entry_of(body, env),
            // the next allocated slot
            SessionType::Choice(_) => self.states.len(),
        }
    }

    fn compile(
        &mut self,
        t: &SessionType,
        env: &mut HashMap<String, StateId>,
        path: &str,
    ) -> StateId {
        crate::pst::grow(|| self.compile_inner(t, env, path))
    }

    fn compile_inner(
        &mut self,
        t: &SessionType,
        env: &mut HashMap<String, StateId>,
        path: &str,
    ) -> StateId {
        match t {
            SessionType::End => END_STATE,
            SessionType::Var { name, .. } => env[name],
            SessionType::Rec { var, body, .. } => {
                let entry = self.entry_of(body, env);
                let shadowed = env.insert(var.clone(), entry);
                let id = self.compile(body, env, path);
                debug_assert_eq!(id, entry);
                match shadowed {
                    Some(prev) => env.insert(var.clone(), prev),
                    None => env.remove(var),
                };
                id
            }
            SessionType::Choice(choice) => {
                let id = self.states.len();
                self.states.push(State::End); // placeholder until children are compiled
                let transitions = choice
                    .branches
                    .iter()
                    .map(|b| Transition {
                        label: b.label.clone(),
                        payload: b.payload.as_ref().map(|p| p.sort),
                        prob: b.prob,
                        target: self.compile(&b.cont, env, &format!("{path}.{}", b.label)),
                    })
                    .collect();
                self.states[id] = State::Choice(ChoiceState {
                    id: path.to_string(),
                    polarity: choice.kind.polarity(),
                    transitions,
                });
                id
            }
        }
    }
}

/// Validates `t` and compiles it.
pub fn compile(t: &SessionType) -> Result<MonitorAutomaton, AutomatonError> {
    let errors = validate(t);
    if !errors.is_empty() {
        return Err(AutomatonError::IllFormed(errors));
    }
    let mut compiler = Compiler {
        states: vec![State::End],
    };
    let initial = compiler.compile(t, &mut HashMap::new(), ROOT_ID);
    Ok(MonitorAutomaton {
        states: compiler.states,
        initial,
    })
}

impl MonitorAutomaton {
    pub fn choice_states(&self) -> impl Iterator<Item = (StateId, &ChoiceState)> {
        self.states.iter().enumerate().filter_map(|(i, s)| match s {
            State::Choice(c) => Some((i, c)),
            State::End => None,
        })
    }

    pub fn choice_count(&self) -> usize {
        self.choice_states().count()
    }

    /// Choice states with more than one branch.
    pub fn branching_count(&self) -> usize {
        self.choice_states()
            .filter(|(_, c)| !c.is_singleton())
            .count()
    }

    pub fn state_by_choice_id(&self, id: &str) -> Option<&ChoiceState> {
        self.choice_states().map(|(_, c)| c).find(|c| c.id == id)
    }

    pub fn signatures(&self) -> Vec<MessageSignature> {
        let mut out: Vec<_> = self
            .choice_states()
            .flat_map(|(_, c)| {
                c.transitions.iter().map(|t| MessageSignature {
                    label: t.label.clone(),
                    polarity: c.polarity,
                    payload: t.payload,
                })
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("automaton serialises")
    }

    /// Loads a dumped automaton and re-checks its structural invariants.
    pub fn from_json(text: &str) -> Result<Self, AutomatonError> {
        let automaton: MonitorAutomaton = serde_json::from_str(text)?;
        automaton.check()?;
        Ok(automaton)
    }

    fn check(&self) -> Result<(), AutomatonError> {
        let invalid = |m: String| Err(AutomatonError::Invalid(m));
        if self.initial >= self.states.len() {
            return invalid(format!("initial state {} out of range", self.initial));
        }
        let mut ids = HashSet::new();
        for (_, c) in self.choice_states() {
            if !ids.insert(c.id.as_str()) {
                return invalid(format!("duplicate choice point id `{}`", c.id));
            }
            if c.transitions.is_empty() {
                return invalid(format!("choice point `{}` has no transitions", c.id));
            }
            let mut labels = HashSet::new();
            let mut sum: u128 = 0;
            for t in &c.transitions {
                if !labels.insert(t.label.as_str()) {
                    return invalid(format!("duplicate label `{}` at `{}`", t.label, c.id));
                }
                if t.target >= self.states.len() {
                    return invalid(format!(
                        "transition `{}` at `{}` targets missing state",
                        t.label, c.id
                    ));
                }
                sum += u128::from(t.prob.units());
            }
            let total = sum as f64 / PROB_SCALE as f64;
            if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
                return invalid(format!("probabilities at `{}` sum to {total}", c.id));
            }
        }
        Ok(())
    }
}

impl fmt::Display for MonitorAutomaton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, state) in self.states.iter().enumerate() {
            let marker = if i == self.initial { "->" } else { "  " };
            match state {
                State::End => writeln!(f, "{marker} [{i}] end")?,
                State::Choice(c) => {
                    writeln!(f, "{marker} [{i}] {} ({})", c.id, c.polarity.symbol())?;
                    for t in &c.transitions {
                        let payload = t.payload.map(|s| s.name()).unwrap_or("");
                        writeln!(
                            f,
                            "        {}({payload})[{}] -> {}",
                            t.label, t.prob, t.target
                        )?;
                    }
                }
            }
        }
        Ok(())
    }
}
