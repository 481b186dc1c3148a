//! Append-only JSON Lines event log for session persistence.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use comatch_core::{CasePair, HumanDecision};
use serde::{Deserialize, Serialize};

pub const LOG_FILE: &str = "sessions.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        at: DateTime<Utc>,
        pair: CasePair,
        machine: Vec<Vec<f64>>,
        embeddings: Vec<Vec<f64>>,
    },
    Decisions {
        session_id: String,
        at: DateTime<Utc>,
        decisions: Vec<HumanDecision>,
    },
    Matched {
        session_id: String,
        at: DateTime<Utc>,
        fill_machine: bool,
    },
}

impl Event {
    pub fn session_id(&self) -> &str {
        match self {
            Event::Created { session_id, .. }
            | Event::Decisions { session_id, .. }
            | Event::Matched { session_id, .. } => session_id,
        }
    }
}

pub struct EventLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl EventLog {
    /// Open (creating if needed) the log under `dir`.
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(EventLog { path, file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Every readable event in write order. A torn final line is skipped.
    pub fn read(&self) -> std::io::Result<Vec<Event>> {
        let reader = BufReader::new(File::open(&self.path)?);
        let mut events = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line) {
                Ok(e) => events.push(e),
                Err(e) => log::warn!("{} line {}: skipping unreadable event: {e}", self.path.display(), i + 1),
            }
        }
        Ok(events)
    }

    /// Write one event and flush it to the operating system.
    pub fn append(&self, event: &Event) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(&line)?;
        f.flush()
    }

    pub fn sync(&self) -> std::io::Result<()> {
        self.file.lock().unwrap_or_else(|p| p.into_inner()).sync_all()
    }
}
