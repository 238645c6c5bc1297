//! Runtime monitors synthesised from probabilistic session types.
//!
//! The pipeline: parse a type ([`pst`]), compile it into a monitor
//! automaton ([`monitor`]), translate wire lines to typed messages
//! ([`codec`]) and run the monitor between two live endpoints ([`proxy`]).
//! Branch frequencies are checked against confidence intervals from
//! [`stats`]. [`sim`] holds scripted endpoints and the benchmark harness.

pub mod builtin;
pub mod cli;
pub mod codec;
pub mod monitor;
pub mod proxy;
pub mod pst;
pub mod sim;
pub mod stats;
