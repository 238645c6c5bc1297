use std::sync::Arc;

use pstmon::builtin::{self, GAME_PERSPECTIVE, SMTP_PERSPECTIVE};
use pstmon::codec::LineCodec;
use pstmon::monitor::{run_session, MemorySink, MonitorConfig, SessionVerdict, TypedMessage};
use pstmon::sim::game::{run_game_client, serve_game};
use pstmon::sim::smtp::{run_smtp_client, serve_smtp_stub};
use pstmon::sim::{BehaviorError, Policy, ScriptedBehavior};
use tokio::net::TcpListener;

async fn game_trace(behavior: &ScriptedBehavior, server_seed: u64) -> Vec<TypedMessage> {
    let codec: Arc<dyn LineCodec> = builtin::game_codec();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(serve_game(listener, server_seed, Arc::clone(&codec)));
    let trace = run_game_client(addr, behavior, codec).await.unwrap();
    server.abort();
    trace
}

fn labels(trace: &[TypedMessage]) -> Vec<&str> {
    trace.iter().map(|m| m.label.as_str()).collect()
}

fn replay(trace: &[TypedMessage], game: bool) -> (pstmon::monitor::SessionSummary, MemorySink) {
    let sink = MemorySink::new();
    let (automaton, perspective) = if game {
        (builtin::game_automaton(), GAME_PERSPECTIVE)
    } else {
        (builtin::smtp_automaton(), SMTP_PERSPECTIVE)
    };
    let summary = run_session(
        1,
        automaton,
        MonitorConfig::with_perspective(perspective),
        &sink,
        trace.iter().cloned().map(Ok),
    );
    (summary, sink)
}

#[tokio::test]
async fn seeded_games_are_reproducible() {
    let behavior = ScriptedBehavior::compliant(7, Some(40));
    let a = game_trace(&behavior, 99).await;
    let b = game_trace(&behavior, 99).await;
    assert_eq!(a, b);
    // 40 rounds of request and reply, then Quit
    assert_eq!(a.len(), 81);
    assert_eq!(a.last().unwrap().label, "Quit");
}

#[tokio::test]
async fn simulated_game_conforms_to_its_type() {
    let trace = game_trace(&ScriptedBehavior::compliant(3, Some(25)), 5).await;
    let (summary, _) = replay(&trace, true);
    assert_eq!(summary.verdict, SessionVerdict::Completed);
}

#[tokio::test]
async fn help_spammer_sends_only_help() {
    let trace = game_trace(
        &ScriptedBehavior::new(1, Policy::HelpSpammer { rounds: 3 }),
        1,
    )
    .await;
    assert_eq!(
        labels(&trace),
        ["Help", "Hint", "Help", "Hint", "Help", "Hint", "Quit"]
    );
}

#[test]
fn phases_concatenate_without_intermediate_quits() {
    let plan = ScriptedBehavior::new(
        0,
        Policy::Phases(vec![
            Policy::HelpSpammer { rounds: 2 },
            Policy::Sequence(vec!["Guess".into(), "Quit".into()]),
            Policy::HelpSpammer { rounds: 1 },
        ]),
    )
    .plan()
    .unwrap();
    assert_eq!(plan, ["Help", "Help", "Guess", "Help", "Quit"]);
}

#[test]
fn bad_behaviours_are_rejected() {
    let bad = ScriptedBehavior::new(
        0,
        Policy::FixedFrequencies {
            weights: vec![("Guess".into(), 0.5)],
            rounds: None,
        },
    );
    assert!(matches!(bad.plan(), Err(BehaviorError::BadWeights(_))));
    let endless = ScriptedBehavior::new(
        0,
        Policy::FixedFrequencies {
            weights: vec![("Guess".into(), 1.0)],
            rounds: None,
        },
    );
    assert_eq!(endless.plan(), Err(BehaviorError::NeverQuits));
}

#[tokio::test]
async fn one_mail_one_recipient_wire_sequence() {
    let codec: Arc<dyn LineCodec> = builtin::smtp_codec();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(serve_smtp_stub(listener, Arc::clone(&codec)));
    let report = run_smtp_client(addr, 1, 1, codec).await.unwrap();
    server.abort();
    assert_eq!(
        labels(&report.trace),
        [
            "M220", "Helo", "M250", "MailFrom", "M250", "RcptTo", "M250", "Data", "M354",
            "Content", "M250", "Quit", "M221"
        ]
    );
    assert_eq!(
        report.response_ms.len(),
        pstmon::sim::bench::request_count(1, 1)
    );

    // the client labels agree with the scripted mail loop
    let plan = ScriptedBehavior::new(
        0,
        Policy::MailLoop {
            emails: 1,
            recipients: 1,
        },
    )
    .plan()
    .unwrap();
    let sent: Vec<_> = report
        .trace
        .iter()
        .skip(1)
        .step_by(2)
        .map(|m| m.label.clone())
        .collect();
    assert_eq!(sent, plan);
}

#[tokio::test]
async fn smtp_stub_conforms_to_its_type() {
    let codec: Arc<dyn LineCodec> = builtin::smtp_codec();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(serve_smtp_stub(listener, Arc::clone(&codec)));
    for (emails, recipients) in [(0, 0), (1, 1), (3, 2), (5, 0)] {
        let report = run_smtp_client(addr, emails, recipients, Arc::clone(&codec))
            .await
            .unwrap();
        let (summary, sink) = replay(&report.trace, false);
        assert_eq!(
            summary.verdict,
            SessionVerdict::Completed,
            "{emails}x{recipients}"
        );
        assert!(sink
            .events()
            .iter()
            .all(|e| e.verdict != pstmon::monitor::Verdict::Violation));
    }
    server.abort();
}
