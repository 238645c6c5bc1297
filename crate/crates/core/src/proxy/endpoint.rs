use std::io;
use std::sync::Arc;

use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

use crate::codec::{CodecError, Decoded, Framing, LineCodec};
use crate::monitor::{
    compile, AutomatonError, EventSink, MonitorAutomaton, MonitorConfig, Session, SessionSummary,
    Side, TypedMessage, Violation,
};
use crate::pst::SessionType;

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("protocol violation: {0}")]
    Violation(Violation),
    #[error("connection closed by peer")]
    PeerClosed,
    #[error("session already closed")]
    Closed,
}

/// One side of a session with the monitor inline.
///
/// The local component hands typed messages to [`send`](Self::send) and
/// gets them from [`receive`](Self::receive); only the remote peer goes
/// through the codec and TCP. Messages are checked before they leave or
/// after they arrive, and a violating message is never delivered.
pub struct MonitoredEndpoint {
    local: Side,
    reader: BufReader<OwnedReadHalf>,
    writer: OwnedWriteHalf,
    buf: Vec<u8>,
    codec: Arc<dyn LineCodec>,
    session: Session,
    sink: Arc<dyn EventSink>,
}

/// Validates and compiles `pst`, then wraps `stream` in a monitored
/// endpoint for the component playing `local`.
pub fn embed(
    pst: &SessionType,
    codec: Arc<dyn LineCodec>,
    local: Side,
    stream: TcpStream,
    config: MonitorConfig,
    sink: Arc<dyn EventSink>,
    session_id: u64,
) -> Result<MonitoredEndpoint, AutomatonError> {
    let automaton = Arc::new(compile(pst)?);
    Ok(MonitoredEndpoint::new(
        stream, local, automaton, codec, config, sink, session_id,
    ))
}

impl MonitoredEndpoint {
    pub fn new(
        stream: TcpStream,
        local: Side,
        automaton: Arc<MonitorAutomaton>,
        codec: Arc<dyn LineCodec>,
        config: MonitorConfig,
        sink: Arc<dyn EventSink>,
        session_id: u64,
    ) -> Self {
        let _ = stream.set_nodelay(true);
        let (r, w) = stream.into_split();
        MonitoredEndpoint {
            local,
            reader: BufReader::new(r),
            writer: w,
            buf: Vec::new(),
            codec,
            session: Session::new(session_id, automaton, config),
            sink,
        }
    }

    pub fn local_side(&self) -> Side {
        self.local
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    fn check(&mut self, outcome: crate::monitor::StepOutcome) -> Result<(), EndpointError> {
        for e in &outcome.events {
            self.sink.record(e);
        }
        match outcome.violation {
            Some(v) => Err(EndpointError::Violation(v)),
            None => Ok(()),
        }
    }

    pub async fn send(&mut self, msg: TypedMessage) -> Result<(), EndpointError> {
        let msg = TypedMessage {
            direction: self.local,
            ..msg
        };
        let line = self.codec.encode(&msg)?;
        let outcome = self.session.step(&msg).map_err(|_| EndpointError::Closed)?;
        self.check(outcome)?;
        let framed = format!("{line}{}", self.codec.framing().terminator());
        self.writer.write_all(framed.as_bytes()).await?;
        Ok(())
    }

    pub async fn receive(&mut self) -> Result<TypedMessage, EndpointError> {
        if self.session.is_violated() {
            return Err(EndpointError::Closed);
        }
        self.buf.clear();
        let n = self.reader.read_until(b'\n', &mut self.buf).await?;
        if n == 0 {
            self.abort();
            return Err(EndpointError::PeerClosed);
        }
        let text = String::from_utf8_lossy(&self.buf).into_owned();
        let line = Framing::strip(&text);
        let remote = self.local.peer();
        match self.codec.decode(remote, line) {
            Decoded::Message(msg) => {
                let outcome = self.session.step(&msg).map_err(|_| EndpointError::Closed)?;
                self.check(outcome)?;
                Ok(msg)
            }
            Decoded::Unrecognized { direction, raw } => {
                let outcome = self
                    .session
                    .step_unrecognized(direction, &raw)
                    .map_err(|_| EndpointError::Closed)?;
                self.check(outcome)?;
                unreachable!("unrecognised input is always a violation")
            }
        }
    }

    fn abort(&mut self) {
        if let Some(e) = self.session.abort() {
            self.sink.record(&e);
        }
    }

    /// Shuts the connection down; an unfinished session is recorded as
    /// aborted.
    pub async fn close(mut self) -> SessionSummary {
        self.abort();
        let _ = self.writer.shutdown().await;
        self.sink.flush();
        self.session.summary()
    }
}
