//! The two protocols shipped with the tool: the guessing game and the SMTP
//! fragment, each with its session type and codec.

use std::sync::Arc;

use crate::codec::CodecSpec;
use crate::monitor::{compile, MonitorAutomaton, Side};
use crate::pst::{parse_pst, SessionType};

pub const GAME_PST: &str = include_str!("../examples/game.pst");
pub const GAME_CODEC: &str = include_str!("../examples/game.codec.json");
pub const SMTP_PST: &str = include_str!("../examples/smtp.pst");
pub const SMTP_CODEC: &str = include_str!("../examples/smtp.codec.json");

/// The game type is written for the client, the SMTP type for the server.
pub const GAME_PERSPECTIVE: Side = Side::Client;
pub const SMTP_PERSPECTIVE: Side = Side::Server;

pub fn game_type() -> SessionType {
    parse_pst(GAME_PST).expect("shipped game type parses")
}

pub fn smtp_type() -> SessionType {
    parse_pst(SMTP_PST).expect("shipped SMTP type parses")
}

pub fn game_automaton() -> Arc<MonitorAutomaton> {
    Arc::new(compile(&game_type()).expect("shipped game type is well-formed"))
}

pub fn smtp_automaton() -> Arc<MonitorAutomaton> {
    Arc::new(compile(&smtp_type()).expect("shipped SMTP type is well-formed"))
}

pub fn game_codec() -> Arc<CodecSpec> {
    let codec = CodecSpec::from_json(GAME_CODEC).expect("shipped game codec loads");
    codec
        .check_against(&game_automaton().signatures(), GAME_PERSPECTIVE)
        .expect("shipped game codec covers the game type");
    Arc::new(codec)
}

pub fn smtp_codec() -> Arc<CodecSpec> {
    let codec = CodecSpec::from_json(SMTP_CODEC).expect("shipped SMTP codec loads");
    codec
        .check_against(&smtp_automaton().signatures(), SMTP_PERSPECTIVE)
        .expect("shipped SMTP codec covers the SMTP type");
    Arc::new(codec)
}
