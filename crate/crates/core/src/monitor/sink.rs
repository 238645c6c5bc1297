use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use super::event::MonitorEvent;

/// Destination for monitor events. Shared by all sessions of a proxy, so
/// implementations serialise concurrent writers themselves.
pub trait EventSink: Send + Sync {
    fn record(&self, event: &MonitorEvent);

    fn flush(&self) {}
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl EventSink for NullSink {
    fn record(&self, _event: &MonitorEvent) {}
}

/// Keeps events in memory, mostly for tests.
#[derive(Debug, Default)]
pub struct MemorySink {
    events: Mutex<Vec<MonitorEvent>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<MonitorEvent> {
        self.events.lock().expect("sink lock").clone()
    }

    pub fn session(&self, session_id: u64) -> Vec<MonitorEvent> {
        self.events()
            .into_iter()
            .filter(|e| e.session_id == session_id)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("sink lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl EventSink for MemorySink {
    fn record(&self, event: &MonitorEvent) {
        self.events.lock().expect("sink lock").push(event.clone());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Csv,
    Jsonl,
}

/// CSV or JSON-lines event log. Each record is flushed as it is written so
/// the log can be followed live.
pub struct LogSink {
    format: LogFormat,
    out: Mutex<Box<dyn Write + Send>>,
}

impl LogSink {
    pub fn new(format: LogFormat, mut out: Box<dyn Write + Send>) -> io::Result<Self> {
        if format == LogFormat::Csv {
            writeln!(out, "{}", MonitorEvent::CSV_HEADER)?;
            out.flush()?;
        }
        Ok(LogSink {
            format,
            out: Mutex::new(out),
        })
    }

    pub fn create(path: &Path, format: LogFormat) -> io::Result<Self> {
        let file = File::create(path)?;
        Self::new(format, Box::new(BufWriter::new(file)))
    }
}

impl EventSink for LogSink {
    fn record(&self, event: &MonitorEvent) {
        let line = match self.format {
            LogFormat::Csv => event.to_csv_row(),
            LogFormat::Jsonl => event.to_json_line(),
        };
        let mut out = self.out.lock().expect("log lock");
        if let Err(err) = writeln!(out, "{line}").and_then(|_| out.flush()) {
            tracing::error!(%err, "failed to write monitor event");
        }
    }

    fn flush(&self) {
        let _ = self.out.lock().expect("log lock").flush();
    }
}

/// Sends each event to several sinks.
pub struct Tee(pub Vec<std::sync::Arc<dyn EventSink>>);

impl EventSink for Tee {
    fn record(&self, event: &MonitorEvent) {
        for s in &self.0 {
            s.record(event);
        }
    }

    fn flush(&self) {
        for s in &self.0 {
            s.flush();
        }
    }
}
