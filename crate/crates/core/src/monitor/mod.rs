//! Monitor synthesis and execution.
//!
//! A validated session type compiles to a [`MonitorAutomaton`]; each
//! connection then gets its own [`Session`], which checks every message
//! against the automaton and keeps per-choice-point statistics.

mod automaton;
mod event;
mod log;
mod message;
mod session;
mod sink;

pub use automaton::{
    compile, AutomatonError, ChoiceState, MonitorAutomaton, State, StateId, Transition, END_ID,
    ROOT_ID,
};
pub use event::{MonitorEvent, Verdict};
pub use log::{branch_series, read_csv_log, write_series_csv, LogError, SeriesRow};
pub use message::{Side, TypedMessage, Value};
pub use session::{
    run_session, AggregateStats, BranchSummary, ChoicePointSummary, MonitorConfig, Session,
    SessionClosed, SessionSummary, SessionVerdict, StepOutcome, Violation, ViolationKind,
};
pub use sink::{EventSink, LogFormat, LogSink, MemorySink, NullSink, Tee};
