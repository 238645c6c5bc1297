//! Scripted endpoints for the two shipped protocols and the overhead
//! benchmark built on them.

pub mod bench;
mod channel;
pub mod game;
pub mod smtp;

pub use channel::{CodecChannel, TypedChannel};
pub use game::{BehaviorError, Policy, ScriptedBehavior};
