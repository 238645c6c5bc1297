//! Loopback plumbing for the proxy tests.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use pstmon::codec::LineCodec;
use pstmon::monitor::{MemorySink, MonitorAutomaton, MonitorConfig, MonitorEvent, Verdict};
use pstmon::proxy::{Proxy, ProxyConfig};
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub struct RunningProxy {
    pub addr: SocketAddr,
    pub sink: Arc<MemorySink>,
    stop: oneshot::Sender<()>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl RunningProxy {
    pub async fn start(
        upstream: SocketAddr,
        automaton: Arc<MonitorAutomaton>,
        codec: Arc<dyn LineCodec>,
        monitor: MonitorConfig,
    ) -> Self {
        let sink = Arc::new(MemorySink::new());
        let mut config = ProxyConfig::new(
            "127.0.0.1:0".parse().unwrap(),
            upstream,
            automaton,
            codec,
            sink.clone(),
        );
        config.monitor = monitor;
        let proxy = Proxy::bind(config).await.unwrap();
        let addr = proxy.local_addr().unwrap();
        let (stop, rx) = oneshot::channel();
        let handle = tokio::spawn(proxy.run_until(async {
            let _ = rx.await;
        }));
        RunningProxy {
            addr,
            sink,
            stop,
            handle,
        }
    }

    /// Waits until `sessions` sessions have logged their closing event.
    pub async fn settle(&self, sessions: usize) {
        let closed = || {
            self.sink
                .events()
                .iter()
                .filter(|e| {
                    matches!(
                        e.verdict,
                        Verdict::SessionEnd | Verdict::Violation | Verdict::Aborted
                    )
                })
                .count()
        };
        let deadline = tokio::time::Instant::now() + std::time::Duration::from_secs(10);
        while closed() < sessions && tokio::time::Instant::now() < deadline {
            tokio::time::sleep(std::time::Duration::from_millis(5)).await;
        }
    }

    /// Stops accepting, waits for open sessions to wind down and hands
    /// back everything that was logged.
    pub async fn finish(self) -> Arc<MemorySink> {
        let _ = self.stop.send(());
        self.handle.await.unwrap().unwrap();
        self.sink
    }
}

/// A hand-written game server that answers from a fixed script and keeps
/// every byte it receives. Any other line closes the connection.
pub async fn raw_game_server(reply_to_guess: &'static str) -> (SocketAddr, Arc<Mutex<Vec<u8>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    tokio::spawn(async move {
        loop {
            let Ok((stream, _)) = listener.accept().await else {
                return;
            };
            let log = log.clone();
            tokio::spawn(async move {
                let (r, mut w) = stream.into_split();
                let mut r = BufReader::new(r);
                let mut line = Vec::new();
                loop {
                    line.clear();
                    if r.read_until(b'\n', &mut line).await.unwrap_or(0) == 0 {
                        return;
                    }
                    log.lock().unwrap().extend_from_slice(&line);
                    let reply: &[u8] = if line.starts_with(b"GUESS") {
                        reply_to_guess.as_bytes()
                    } else if line.starts_with(b"HELP") {
                        b"HINT the number  is\todd \xc3\xa9\n"
                    } else {
                        let _ = w.shutdown().await;
                        return;
                    };
                    if w.write_all(reply).await.is_err() {
                        return;
                    }
                }
            });
        }
    });
    (addr, seen)
}

/// Sends each line and waits for one reply line, except after the last
/// line, where it reads until the peer closes. With `greeting` the server
/// speaks first. Returns the bytes received.
pub async fn raw_exchange(addr: SocketAddr, greeting: bool, lines: &[&str]) -> Vec<u8> {
    let stream = TcpStream::connect(addr).await.unwrap();
    let (r, mut w) = stream.into_split();
    let mut r = BufReader::new(r);
    let mut received = Vec::new();
    if greeting && r.read_until(b'\n', &mut received).await.unwrap_or(0) == 0 {
        return received;
    }
    for (i, line) in lines.iter().enumerate() {
        if w.write_all(line.as_bytes()).await.is_err() {
            break;
        }
        if i + 1 < lines.len() && r.read_until(b'\n', &mut received).await.unwrap_or(0) == 0 {
            break;
        }
    }
    let _ = r.read_to_end(&mut received).await;
    received
}

/// Events with the parts that legitimately differ between runs zeroed.
pub fn normalise(events: &[MonitorEvent]) -> Vec<MonitorEvent> {
    events
        .iter()
        .map(|e| MonitorEvent {
            session_id: 0,
            timestamp_ms: 0,
            ..e.clone()
        })
        .collect()
}

/// A transparent TCP relay in front of `target` that keeps every byte the
/// target receives.
pub async fn tap(target: SocketAddr) -> (SocketAddr, Arc<Mutex<Vec<u8>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    tokio::spawn(async move {
        loop {
            let Ok((inbound, _)) = listener.accept().await else {
                return;
            };
            let Ok(outbound) = TcpStream::connect(target).await else {
                return;
            };
            let log = log.clone();
            let (mut in_r, mut in_w) = inbound.into_split();
            let (mut out_r, mut out_w) = outbound.into_split();
            tokio::spawn(async move {
                let _ = tokio::io::copy(&mut out_r, &mut in_w).await;
                let _ = in_w.shutdown().await;
            });
            tokio::spawn(async move {
                let mut buf = [0u8; 4096];
                loop {
                    let n = in_r.read(&mut buf).await.unwrap_or(0);
                    if n == 0 {
                        let _ = out_w.shutdown().await;
                        return;
                    }
                    log.lock().unwrap().extend_from_slice(&buf[..n]);
                    if out_w.write_all(&buf[..n]).await.is_err() {
                        return;
                    }
                }
            });
        }
    });
    (addr, seen)
}
