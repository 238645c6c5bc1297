//! A stub mail server that accepts and discards everything, and a client
//! that sends a fixed number of mails while timing each request.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Result};
use serde::Serialize;
use tokio::net::TcpListener;

use super::channel::{CodecChannel, TypedChannel};
use crate::codec::{escape_body, LineCodec};
use crate::monitor::{Side, TypedMessage, Value};

fn reply(label: &str, text: &str) -> TypedMessage {
    TypedMessage::new(Side::Server, label, Some(Value::String(text.into())))
}

/// Serves one SMTP session. Returns the message trace.
pub async fn smtp_stub<C: TypedChannel>(chan: &mut C) -> Result<Vec<TypedMessage>> {
    let mut trace = Vec::new();
    let greeting = reply("M220", "stub.local ESMTP ready");
    chan.send(greeting.clone()).await?;
    trace.push(greeting);
    loop {
        let msg = chan.receive().await?;
        let answer = match msg.label.as_str() {
            "Helo" => reply("M250", "stub.local"),
            "MailFrom" | "RcptTo" => reply("M250", "OK"),
            "Data" => reply("M354", "End data with <CR><LF>.<CR><LF>"),
            "Content" => reply("M250", "OK: queued"),
            "Quit" => reply("M221", "Bye"),
            other => bail!("smtp stub: unexpected `{other}`"),
        };
        let done = msg.label == "Quit";
        trace.push(msg);
        chan.send(answer.clone()).await?;
        trace.push(answer);
        if done {
            return Ok(trace);
        }
    }
}

/// Accepts SMTP sessions forever.
pub async fn serve_smtp_stub(listener: TcpListener, codec: Arc<dyn LineCodec>) -> Result<()> {
    loop {
        let (stream, _) = listener.accept().await?;
        let codec = Arc::clone(&codec);
        tokio::spawn(async move {
            let mut chan = CodecChannel::new(stream, Side::Server, codec);
            if let Err(err) = smtp_stub(&mut chan).await {
                tracing::debug!(%err, "smtp session ended early");
            }
            chan.close().await;
        });
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClientReport {
    pub emails: u64,
    pub recipients: u64,
    /// Write-to-reply latency of every request, in milliseconds.
    pub response_ms: Vec<f64>,
    #[serde(skip)]
    pub trace: Vec<TypedMessage>,
}

impl ClientReport {
    pub fn mean_response_ms(&self) -> Option<f64> {
        if self.response_ms.is_empty() {
            None
        } else {
            Some(self.response_ms.iter().sum::<f64>() / self.response_ms.len() as f64)
        }
    }
}

fn text(label: &str, s: String) -> TypedMessage {
    TypedMessage::new(Side::Client, label, Some(Value::String(s)))
}

/// Sends `emails` mails with `recipients` recipients each, then quits.
pub async fn smtp_client<C: TypedChannel>(
    chan: &mut C,
    emails: u64,
    recipients: u64,
) -> Result<ClientReport> {
    let mut report = ClientReport {
        emails,
        recipients,
        response_ms: Vec::new(),
        trace: Vec::new(),
    };
    let greeting = chan.receive().await?;
    if greeting.label != "M220" {
        bail!("expected a 220 greeting, got `{}`", greeting.label);
    }
    report.trace.push(greeting);

    let mut requests = vec![(text("Helo", "client.local".into()), "M250")];
    for i in 0..emails {
        requests.push((
            text("MailFrom", format!("<sender{i}@client.local>")),
            "M250",
        ));
        for j in 0..recipients {
            requests.push((text("RcptTo", format!("<rcpt{j}@stub.local>")), "M250"));
        }
        requests.push((TypedMessage::unit(Side::Client, "Data"), "M354"));
        let body = format!("Subject: message {i}\n\nThis is test message {i}.");
        requests.push((text("Content", escape_body(&body)), "M250"));
    }
    requests.push((TypedMessage::unit(Side::Client, "Quit"), "M221"));

    for (msg, expected) in requests {
        let started = Instant::now();
        chan.send(msg.clone()).await?;
        let answer = chan.receive().await?;
        report
            .response_ms
            .push(started.elapsed().as_secs_f64() * 1e3);
        if answer.label != expected {
            bail!(
                "`{}` answered with `{}`, expected `{expected}`",
                msg.label,
                answer.label
            );
        }
        report.trace.push(msg);
        report.trace.push(answer);
    }
    Ok(report)
}

pub async fn run_smtp_client(
    addr: SocketAddr,
    emails: u64,
    recipients: u64,
    codec: Arc<dyn LineCodec>,
) -> Result<ClientReport> {
    let mut chan = CodecChannel::connect(addr, Side::Client, codec).await?;
    let report = smtp_client(&mut chan, emails, recipients).await?;
    chan.close().await;
    Ok(report)
}
