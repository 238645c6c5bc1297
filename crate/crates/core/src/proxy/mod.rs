//! Deploying a monitor between two live endpoints.
//!
//! [`Proxy`] is the black-box setup: a TCP man-in-the-middle that starts a
//! fresh monitor session for every accepted connection. [`MonitoredEndpoint`]
//! is the grey-box setup: the monitor sits in-process with one component,
//! which exchanges typed messages with it directly.

mod endpoint;

pub use endpoint::{embed, EndpointError, MonitoredEndpoint};

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tokio::io::{AsyncBufReadExt, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinSet;
use tokio::time::Instant;

use crate::codec::{Decoded, Framing, LineCodec};
use crate::monitor::{
    AggregateStats, EventSink, MonitorAutomaton, MonitorConfig, Session, SessionSummary, Side,
    StepOutcome,
};

pub struct ProxyConfig {
    pub listen: SocketAddr,
    pub upstream: SocketAddr,
    pub automaton: Arc<MonitorAutomaton>,
    pub codec: Arc<dyn LineCodec>,
    pub monitor: MonitorConfig,
    pub sink: Arc<dyn EventSink>,
    /// Also count branch choices across sessions (reported, never judged).
    pub aggregate: Option<Arc<AggregateStats>>,
    pub session_timeout: Option<Duration>,
}

impl ProxyConfig {
    pub fn new(
        listen: SocketAddr,
        upstream: SocketAddr,
        automaton: Arc<MonitorAutomaton>,
        codec: Arc<dyn LineCodec>,
        sink: Arc<dyn EventSink>,
    ) -> Self {
        ProxyConfig {
            listen,
            upstream,
            automaton,
            codec,
            monitor: MonitorConfig::default(),
            sink,
            aggregate: None,
            session_timeout: None,
        }
    }
}

pub struct Proxy {
    listener: TcpListener,
    config: Arc<ProxyConfig>,
    next_id: AtomicU64,
}

impl Proxy {
    pub async fn bind(config: ProxyConfig) -> io::Result<Proxy> {
        if config.listen == config.upstream {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "listen and upstream addresses must differ",
            ));
        }
        let listener = TcpListener::bind(config.listen).await?;
        Ok(Proxy {
            listener,
            config: Arc::new(config),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until `shutdown` resolves. Sessions still open at
    /// that point are closed and recorded as aborted.
    pub async fn run_until(self, shutdown: impl Future<Output = ()>) -> io::Result<()> {
        let (stop_tx, stop_rx) = watch::channel(false);
        let mut tasks = JoinSet::new();
        tokio::pin!(shutdown);
        loop {
            tokio::select! {
                _ = &mut shutdown => break,
                accepted = self.listener.accept() => {
                    let (client, peer) = match accepted {
                        Ok(c) => c,
                        Err(err) => {
                            tracing::warn!(%err, "accept failed");
                            continue;
                        }
                    };
                    let id = self.next_id.fetch_add(1, Ordering::Relaxed);
                    tracing::debug!(session = id, %peer, "accepted");
                    let config = Arc::clone(&self.config);
                    let stop = stop_rx.clone();
                    tasks.spawn(async move {
                        if let Some(summary) = handle_connection(id, client, &config, stop).await {
                            tracing::info!(
                                session = id,
                                verdict = %summary.verdict,
                                events = summary.events,
                                "session closed"
                            );
                        }
                    });
                }
                Some(_) = tasks.join_next(), if !tasks.is_empty() => {}
            }
        }
        let _ = stop_tx.send(true);
        while tasks.join_next().await.is_some() {}
        self.config.sink.flush();
        Ok(())
    }

    pub async fn run(self) -> io::Result<()> {
        self.run_until(std::future::pending()).await
    }
}

/// Binds and serves until interrupted (Ctrl-C).
pub async fn serve(config: ProxyConfig) -> io::Result<()> {
    let proxy = Proxy::bind(config).await?;
    tracing::info!(addr = %proxy.local_addr()?, "proxy listening");
    proxy
        .run_until(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

enum Flow {
    Continue,
    Stop,
}

/// Decodes one raw line (terminator included), steps the monitor and
/// forwards the original bytes when the message was accepted.
async fn relay_line<W: AsyncWrite + Unpin + ?Sized>(
    session: &mut Session,
    codec: &dyn LineCodec,
    sink: &dyn EventSink,
    direction: Side,
    raw: &[u8],
    out: &mut W,
) -> Flow {
    let text = String::from_utf8_lossy(raw);
    let line = Framing::strip(&text);
    let outcome = match codec.decode(direction, line) {
        Decoded::Message(msg) => session.step(&msg),
        Decoded::Unrecognized { direction, raw } => session.step_unrecognized(direction, &raw),
    };
    let Ok(StepOutcome { events, violation }) = outcome else {
        return Flow::Stop;
    };
    for e in &events {
        sink.record(e);
    }
    if let Some(v) = violation {
        tracing::warn!(session = session.id(), %direction, "violation {v}");
        return Flow::Stop;
    }
    if let Err(err) = out.write_all(raw).await {
        tracing::debug!(session = session.id(), %err, "forwarding failed");
        return Flow::Stop;
    }
    Flow::Continue
}

async fn handle_connection(
    id: u64,
    client: TcpStream,
    config: &ProxyConfig,
    mut stop: watch::Receiver<bool>,
) -> Option<SessionSummary> {
    let upstream = match TcpStream::connect(config.upstream).await {
        Ok(s) => s,
        Err(err) => {
            tracing::warn!(session = id, upstream = %config.upstream, %err, "upstream dial failed; dropping client");
            return None;
        }
    };
    let _ = client.set_nodelay(true);
    let _ = upstream.set_nodelay(true);
    let (client_r, mut client_w) = client.into_split();
    let (upstream_r, mut upstream_w) = upstream.into_split();
    let mut client_r = BufReader::new(client_r);
    let mut upstream_r = BufReader::new(upstream_r);
    // Buffers outlive each select! round so a cancelled read loses nothing.
    let mut from_client = Vec::new();
    let mut from_server = Vec::new();

    let mut session = Session::new(id, Arc::clone(&config.automaton), config.monitor);
    if let Some(agg) = &config.aggregate {
        session = session.with_aggregate(Arc::clone(agg));
    }
    let sink = config.sink.as_ref();
    let codec = config.codec.as_ref();
    let deadline = config.session_timeout.map(|d| Instant::now() + d);

    loop {
        let flow = tokio::select! {
            r = client_r.read_until(b'\n', &mut from_client) => match r {
                Ok(0) | Err(_) => Flow::Stop,
                Ok(_) => {
                    let raw = std::mem::take(&mut from_client);
                    relay_line(&mut session, codec, sink, Side::Client, &raw, &mut upstream_w).await
                }
            },
            r = upstream_r.read_until(b'\n', &mut from_server) => match r {
                Ok(0) | Err(_) => Flow::Stop,
                Ok(_) => {
                    let raw = std::mem::take(&mut from_server);
                    relay_line(&mut session, codec, sink, Side::Server, &raw, &mut client_w).await
                }
            },
            _ = async {
                match deadline {
                    Some(d) => tokio::time::sleep_until(d).await,
                    None => std::future::pending().await,
                }
            } => {
                tracing::info!(session = id, "session timed out");
                Flow::Stop
            }
            _ = stop.changed() => Flow::Stop,
        };
        if matches!(flow, Flow::Stop) {
            break;
        }
    }
    // A trailing fragment without terminator still counts as a line.
    for (direction, rest) in [(Side::Client, &from_client), (Side::Server, &from_server)] {
        if !rest.is_empty() && !session.is_closed() {
            let out: &mut (dyn AsyncWrite + Unpin + Send) = match direction {
                Side::Client => &mut upstream_w,
                Side::Server => &mut client_w,
            };
            let _ = relay_line(&mut session, codec, sink, direction, rest, out).await;
        }
    }
    let _ = client_w.shutdown().await;
    let _ = upstream_w.shutdown().await;
    if let Some(e) = session.abort() {
        sink.record(&e);
    }
    if let Some(agg) = &config.aggregate {
        tracing::info!(session = id, counts = ?agg.snapshot(), "aggregate branch counts");
    }
    Some(session.summary())
}
