use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tokio::sync::watch;

const KEEP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Info,
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub seq: u64,
    /// Wall clock, epoch seconds.
    pub time: f64,
    pub level: Level,
    pub source: String,
    pub message: String,
}

/// Recent backend log lines for the operator log pane. Lines also go to
/// `tracing`.
pub struct LogHub {
    lines: Mutex<VecDeque<LogLine>>,
    latest: watch::Sender<u64>,
}

impl Default for LogHub {
    fn default() -> Self {
        Self { lines: Mutex::new(VecDeque::new()), latest: watch::channel(0).0 }
    }
}

pub fn now_epoch() -> f64 {
    chrono::Utc::now().timestamp_micros() as f64 / 1e6
}

impl LogHub {
    pub fn push(&self, level: Level, source: &str, message: impl Into<String>) -> LogLine {
        let message = message.into();
        match level {
            Level::Info => tracing::info!(source, "{message}"),
            Level::Warn => tracing::warn!(source, "{message}"),
            Level::Error => tracing::error!(source, "{message}"),
        }
        let mut lines = self.lines.lock().unwrap();
        let seq = lines.back().map_or(1, |l| l.seq + 1);
        let line = LogLine { seq, time: now_epoch(), level, source: source.into(), message };
        lines.push_back(line.clone());
        if lines.len() > KEEP {
            lines.pop_front();
        }
        drop(lines);
        self.latest.send_replace(seq);
        line
    }

    pub fn info(&self, source: &str, message: impl Into<String>) -> LogLine {
        self.push(Level::Info, source, message)
    }

    pub fn warn(&self, source: &str, message: impl Into<String>) -> LogLine {
        self.push(Level::Warn, source, message)
    }

    pub fn error(&self, source: &str, message: impl Into<String>) -> LogLine {
        self.push(Level::Error, source, message)
    }

    /// Retained lines with `seq > after`.
    pub fn since(&self, after: u64) -> Vec<LogLine> {
        self.lines.lock().unwrap().iter().filter(|l| l.seq > after).cloned().collect()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.latest.subscribe()
    }
}
