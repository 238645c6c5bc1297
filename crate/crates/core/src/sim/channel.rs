use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

use crate::codec::{Decoded, Framing, LineCodec};
use crate::monitor::{Side, TypedMessage};
use crate::proxy::MonitoredEndpoint;

/// What a scripted component talks through: typed messages in and out,
/// with or without a monitor in between.
pub trait TypedChannel {
    fn send(&mut self, msg: TypedMessage) -> impl Future<Output = Result<()>> + Send;

    fn receive(&mut self) -> impl Future<Output = Result<TypedMessage>> + Send;
}

/// Plain codec over TCP, no monitoring.
pub struct CodecChannel {
    local: Side,
    reader: BufReader<OwnedReadHalf>,
    writer: OwnedWriteHalf,
    buf: Vec<u8>,
    codec: Arc<dyn LineCodec>,
}

impl CodecChannel {
    pub fn new(stream: TcpStream, local: Side, codec: Arc<dyn LineCodec>) -> Self {
        let _ = stream.set_nodelay(true);
        let (r, w) = stream.into_split();
        CodecChannel {
            local,
            reader: BufReader::new(r),
            writer: w,
            buf: Vec::new(),
            codec,
        }
    }

    pub async fn connect(addr: SocketAddr, local: Side, codec: Arc<dyn LineCodec>) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .await
            .with_context(|| format!("connecting to {addr}"))?;
        Ok(Self::new(stream, local, codec))
    }

    pub async fn close(mut self) {
        let _ = self.writer.shutdown().await;
    }
}

impl TypedChannel for CodecChannel {
    async fn send(&mut self, msg: TypedMessage) -> Result<()> {
        let msg = TypedMessage {
            direction: self.local,
            ..msg
        };
        let line = self.codec.encode(&msg)?;
        let framed = format!("{line}{}", self.codec.framing().terminator());
        self.writer
            .write_all(framed.as_bytes())
            .await
            .with_context(|| format!("sending {msg}"))?;
        Ok(())
    }

    async fn receive(&mut self) -> Result<TypedMessage> {
        self.buf.clear();
        let n = self.reader.read_until(b'\n', &mut self.buf).await?;
        if n == 0 {
            bail!("connection closed by peer");
        }
        let text = String::from_utf8_lossy(&self.buf);
        match self.codec.decode(self.local.peer(), Framing::strip(&text)) {
            Decoded::Message(m) => Ok(m),
            Decoded::Unrecognized { raw, .. } => bail!("malformed message from peer: {raw:?}"),
        }
    }
}

impl TypedChannel for MonitoredEndpoint {
    async fn send(&mut self, msg: TypedMessage) -> Result<()> {
        Ok(MonitoredEndpoint::send(self, msg).await?)
    }

    async fn receive(&mut self) -> Result<TypedMessage> {
        Ok(MonitoredEndpoint::receive(self).await?)
    }
}
