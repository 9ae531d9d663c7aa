//! Append-only session journal (`<results_dir>/journal.csv`) used to resume
//! an injection session after the engine restarts.
//!
//! ```text
//! session;<session id>;<epoch unix ms>
//! accept;<workload row>
//! done;<seqNum>
//! end
//! ```

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::task::{format_task_row, parse_task_row, Task};

pub const JOURNAL_FILE: &str = "journal.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    Session { id: u64, epoch_ms: i64 },
    Accept(Task),
    Done(u64),
    End,
}

impl Record {
    fn to_line(&self) -> String {
        match self {
            Record::Session { id, epoch_ms } => format!("session;{id};{epoch_ms}"),
            Record::Accept(t) => format!("accept;{}", format_task_row(t)),
            Record::Done(seq) => format!("done;{seq}"),
            Record::End => "end".into(),
        }
    }

    fn parse(line: &str) -> Result<Record, String> {
        let (kind, rest) = line.split_once(';').unwrap_or((line, ""));
        match kind {
            "session" => {
                let (id, epoch) = rest.split_once(';').ok_or("session record needs two fields")?;
                Ok(Record::Session {
                    id: id.parse().map_err(|_| format!("bad session id {id:?}"))?,
                    epoch_ms: epoch.parse().map_err(|_| format!("bad epoch {epoch:?}"))?,
                })
            }
            "accept" => parse_task_row(rest).map(Record::Accept),
            "done" => rest.parse().map(Record::Done).map_err(|_| format!("bad seqNum {rest:?}")),
            "end" if rest.is_empty() => Ok(Record::End),
            _ => Err(format!("unknown record {line:?}")),
        }
    }
}

/// The state a journal describes once replayed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionSnapshot {
    pub session_id: u64,
    pub epoch_ms: i64,
    pub accepted: BTreeMap<u64, Task>,
    pub completed: Vec<u64>,
    pub ended: bool,
}

impl SessionSnapshot {
    /// Accepted tasks without a completion mark.
    pub fn pending(&self) -> Vec<&Task> {
        self.accepted.values().filter(|t| !self.completed.contains(&t.seq_num)).collect()
    }
}

/// Replays journal text. `Ok(None)` for an empty journal.
pub fn replay(text: &str) -> Result<Option<SessionSnapshot>, String> {
    let mut snap: Option<SessionSnapshot> = None;
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let rec = Record::parse(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        match rec {
            Record::Session { id, epoch_ms } => {
                snap = Some(SessionSnapshot {
                    session_id: id,
                    epoch_ms,
                    ..Default::default()
                })
            }
            other => {
                let s = snap.as_mut().ok_or_else(|| format!("line {}: record before session header", i + 1))?;
                match other {
                    Record::Accept(t) => {
                        s.accepted.insert(t.seq_num, t);
                    }
                    Record::Done(seq) => {
                        if !s.completed.contains(&seq) {
                            s.completed.push(seq);
                        }
                    }
                    Record::End => s.ended = true,
                    Record::Session { .. } => unreachable!(),
                }
            }
        }
    }
    Ok(snap)
}

pub struct Journal {
    path: PathBuf,
    file: Option<File>,
}

impl Journal {
    pub fn new(results_dir: &Path) -> Self {
        Journal {
            path: results_dir.join(JOURNAL_FILE),
            file: None,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Loads the existing journal. Missing file → `Ok(None)`.
    pub fn load(&self) -> Result<Option<SessionSnapshot>, String> {
        match std::fs::read_to_string(&self.path) {
            Ok(text) => replay(&text),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.to_string()),
        }
    }

    /// Starts a fresh journal for a new session, discarding the old one.
    pub fn begin(&mut self, id: u64, epoch_ms: i64) -> io::Result<()> {
        if let Some(parent) = self.path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = File::create(&self.path)?;
        writeln!(f, "{}", Record::Session { id, epoch_ms }.to_line())?;
        f.sync_all()?;
        self.file = Some(f);
        Ok(())
    }

    /// Continues appending to the journal left by a previous run.
    pub fn reopen(&mut self) -> io::Result<()> {
        self.file = Some(OpenOptions::new().append(true).open(&self.path)?);
        Ok(())
    }

    /// Appends a record; `durable` forces an fsync.
    pub fn append(&mut self, rec: &Record, durable: bool) -> io::Result<()> {
        let Some(f) = self.file.as_mut() else {
            return Ok(());
        };
        writeln!(f, "{}", rec.to_line())?;
        f.flush()?;
        if durable {
            f.sync_data()?;
        }
        Ok(())
    }
}
