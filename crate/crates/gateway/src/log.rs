use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Retry,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub request_id: u64,
    pub kind: String,
    pub attempt: u32,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub elapsed_ms: u64,
}

/// Structured request log kept in memory and optionally mirrored to a
/// JSON-lines file.
#[derive(Debug, Clone, Default)]
pub struct RequestLog {
    entries: Arc<Mutex<Vec<LogEntry>>>,
    sink: Option<Arc<Mutex<File>>>,
}

impl RequestLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn to_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: Arc::default(),
            sink: Some(Arc::new(Mutex::new(file))),
        })
    }

    pub fn record(&self, entry: LogEntry) {
        match entry.outcome {
            Outcome::Ok => log::debug!("request {} attempt {} ok", entry.request_id, entry.attempt),
            _ => log::warn!(
                "request {} attempt {} {:?}: {}",
                entry.request_id,
                entry.attempt,
                entry.outcome,
                entry.error.as_deref().unwrap_or("")
            ),
        }
        if let Some(sink) = &self.sink {
            if let (Ok(mut f), Ok(line)) = (sink.lock(), serde_json::to_string(&entry)) {
                let _ = writeln!(f, "{line}");
            }
        }
        self.entries.lock().expect("request log poisoned").push(entry);
    }

    pub fn entries(&self) -> Vec<LogEntry> {
        self.entries.lock().expect("request log poisoned").clone()
    }

    pub fn for_request(&self, request_id: u64) -> Vec<LogEntry> {
        self.entries().into_iter().filter(|e| e.request_id == request_id).collect()
    }
}
