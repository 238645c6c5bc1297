//! Probabilistic session types: syntax tree, parser, well-formedness checks
//! and a pretty printer whose output parses back to the same tree.

mod ast;
mod parser;
mod print;
mod validate;

pub use ast::{
    Branch, Choice, ChoiceKind, MessageSignature, Payload, Polarity, Probability, ProbabilityError,
    SessionType, Sort, Span, PROB_SCALE,
};
pub use parser::{parse_pst, ParseError};
pub use print::pretty_print;
pub use validate::{validate, ErrorKind, WellFormednessError, PROB_SUM_TOLERANCE};

/// Runs a recursive step, moving to a fresh stack segment when the current
/// one is nearly exhausted, so deeply nested types do not overflow.
pub(crate) fn grow<R>(f: impl FnOnce() -> R) -> R {
    stacker::maybe_grow(64 * 1024, 1024 * 1024, f)
}
