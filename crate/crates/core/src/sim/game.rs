//! The guessing game: the server picks a number between 1 and 100, the
//! client guesses, asks for hints or quits.

use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::{bail, Result};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use tokio::net::TcpListener;

use super::channel::{CodecChannel, TypedChannel};
use crate::codec::LineCodec;
use crate::monitor::{Side, TypedMessage, Value};

pub const SECRET_MAX: i64 = 100;

/// Label that ends a scripted game or mail session.
pub const TERMINAL: &str = "Quit";

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Draw each outer choice from the given distribution. Without
    /// `rounds` the session lasts until `Quit` is drawn; with it, exactly
    /// `rounds` non-terminal labels are drawn (weights renormalised) and
    /// then the session quits.
    FixedFrequencies {
        weights: Vec<(String, f64)>,
        rounds: Option<u64>,
    },
    Sequence(Vec<String>),
    /// `rounds` consecutive `Help` requests.
    HelpSpammer {
        rounds: u64,
    },
    /// SMTP client: `emails` mails with `recipients` recipients each.
    MailLoop {
        emails: u64,
        recipients: u64,
    },
    /// Run the given policies back to back in one session.
    Phases(Vec<Policy>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedBehavior {
    pub seed: u64,
    pub policy: Policy,
}

#[derive(Debug, Error, PartialEq)]
pub enum BehaviorError {
    #[error("frequencies must be non-negative and sum to 1 (got {0})")]
    BadWeights(f64),
    #[error("an unbounded session needs a positive `{TERMINAL}` weight")]
    NeverQuits,
}

impl ScriptedBehavior {
    pub fn new(seed: u64, policy: Policy) -> Self {
        ScriptedBehavior { seed, policy }
    }

    /// Guess 0.75, Help 0.2, Quit 0.05: the frequencies the game type
    /// specifies.
    pub fn compliant(seed: u64, rounds: Option<u64>) -> Self {
        Self::new(
            seed,
            Policy::FixedFrequencies {
                weights: vec![
                    ("Guess".into(), 0.75),
                    ("Help".into(), 0.2),
                    (TERMINAL.into(), 0.05),
                ],
                rounds,
            },
        )
    }

    /// Client labels for the whole session, ending with `Quit`.
    pub fn plan(&self) -> Result<Vec<String>, BehaviorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = plan_policy(&self.policy, &mut rng)?;
        if out.last().map(String::as_str) != Some(TERMINAL) {
            out.push(TERMINAL.into());
        }
        Ok(out)
    }
}

fn plan_policy(policy: &Policy, rng: &mut ChaCha8Rng) -> Result<Vec<String>, BehaviorError> {
    Ok(match policy {
        Policy::FixedFrequencies { weights, rounds } => {
            let sum: f64 = weights.iter().map(|(_, w)| w).sum();
            if weights.iter().any(|(_, w)| *w < 0.0 || !w.is_finite()) || (sum - 1.0).abs() > 1e-9 {
                return Err(BehaviorError::BadWeights(sum));
            }
            match rounds {
                Some(rounds) => {
                    let live: Vec<_> = weights.iter().filter(|(l, _)| l != TERMINAL).collect();
                    let dist = WeightedIndex::new(live.iter().map(|(_, w)| *w))
                        .map_err(|_| BehaviorError::BadWeights(sum))?;
                    (0..*rounds)
                        .map(|_| live[dist.sample(rng)].0.clone())
                        .collect()
                }
                None => {
                    if !weights.iter().any(|(l, w)| l == TERMINAL && *w > 0.0) {
                        return Err(BehaviorError::NeverQuits);
                    }
                    let dist = WeightedIndex::new(weights.iter().map(|(_, w)| *w))
                        .map_err(|_| BehaviorError::BadWeights(sum))?;
                    let mut out = Vec::new();
                    loop {
                        let label = &weights[dist.sample(rng)].0;
                        out.push(label.clone());
                        if label == TERMINAL {
                            break out;
                        }
                    }
                }
            }
        }
        Policy::Sequence(labels) => labels.clone(),
        Policy::HelpSpammer { rounds } => vec!["Help".to_string(); *rounds as usize],
        Policy::MailLoop { emails, recipients } => {
            let mut out = vec!["Helo".to_string()];
            for _ in 0..*emails {
                out.push("MailFrom".into());
                out.extend((0..*recipients).map(|_| "RcptTo".to_string()));
                out.push("Data".into());
                out.push("Content".into());
            }
            out
        }
        Policy::Phases(phases) => {
            let mut out = Vec::new();
            for p in phases {
                let mut part = plan_policy(p, rng)?;
                if part.last().map(String::as_str) == Some(TERMINAL) {
                    part.pop();
                }
                out.extend(part);
            }
            out
        }
    })
}

fn hint(secret: i64) -> String {
    if secret % 2 == 0 {
        "the number is even".into()
    } else {
        "the number is odd".into()
    }
}

/// Server side of one game. Returns the message trace.
pub async fn game_server<C: TypedChannel>(chan: &mut C, seed: u64) -> Result<Vec<TypedMessage>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut secret = rng.random_range(1..=SECRET_MAX);
    let mut trace = Vec::new();
    loop {
        let msg = chan.receive().await?;
        trace.push(msg.clone());
        let reply = match (msg.label.as_str(), &msg.payload) {
            ("Guess", Some(Value::Int(n))) if *n == secret => {
                secret = rng.random_range(1..=SECRET_MAX);
                TypedMessage::unit(Side::Server, "Correct")
            }
            ("Guess", _) => TypedMessage::unit(Side::Server, "Incorrect"),
            ("Help", _) => {
                TypedMessage::new(Side::Server, "Hint", Some(Value::String(hint(secret))))
            }
            ("Quit", _) => return Ok(trace),
            (other, _) => bail!("game server: unexpected `{other}`"),
        };
        chan.send(reply.clone()).await?;
        trace.push(reply);
    }
}

/// Client side of one game following `plan`. Guesses are uniform in
/// 1..=100, drawn from a generator derived from `seed`.
pub async fn game_client<C: TypedChannel>(
    chan: &mut C,
    plan: &[String],
    seed: u64,
) -> Result<Vec<TypedMessage>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut trace = Vec::new();
    for label in plan {
        let msg = match label.as_str() {
            "Guess" => TypedMessage::new(
                Side::Client,
                "Guess",
                Some(Value::Int(rng.random_range(1..=SECRET_MAX))),
            ),
            other => TypedMessage::unit(Side::Client, other),
        };
        chan.send(msg.clone()).await?;
        trace.push(msg);
        if label == TERMINAL {
            break;
        }
        let reply = chan.receive().await?;
        trace.push(reply);
    }
    Ok(trace)
}

/// Serves games forever; connection `i` uses seed `seed + i`.
pub async fn serve_game(listener: TcpListener, seed: u64, codec: Arc<dyn LineCodec>) -> Result<()> {
    let mut i = 0u64;
    loop {
        let (stream, _) = listener.accept().await?;
        let codec = Arc::clone(&codec);
        let s = seed.wrapping_add(i);
        i += 1;
        tokio::spawn(async move {
            let mut chan = CodecChannel::new(stream, Side::Server, codec);
            if let Err(err) = game_server(&mut chan, s).await {
                tracing::debug!(%err, "game session ended early");
            }
            chan.close().await;
        });
    }
}

pub async fn run_game_client(
    addr: SocketAddr,
    behavior: &ScriptedBehavior,
    codec: Arc<dyn LineCodec>,
) -> Result<Vec<TypedMessage>> {
    let plan = behavior.plan()?;
    let mut chan = CodecChannel::connect(addr, Side::Client, codec).await?;
    let trace = game_client(&mut chan, &plan, behavior.seed).await?;
    chan.close().await;
    Ok(trace)
}
