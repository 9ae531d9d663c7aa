//! Execution logs: one semicolon-separated file per target host holding every
//! status change reported during a session.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOG_HEADER: &str = "timestamp;host;seqNum;event;detail";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    TaskStart,
    TaskEnd,
    TaskRestart,
    Error,
    ConnectionLost,
    ConnectionRestored,
    SessionStart,
    SessionEnd,
}

impl Event {
    pub const ALL: [Event; 8] = [
        Event::TaskStart,
        Event::TaskEnd,
        Event::TaskRestart,
        Event::Error,
        Event::ConnectionLost,
        Event::ConnectionRestored,
        Event::SessionStart,
        Event::SessionEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Event::TaskStart => "task_start",
            Event::TaskEnd => "task_end",
            Event::TaskRestart => "task_restart",
            Event::Error => "error",
            Event::ConnectionLost => "connection_lost",
            Event::ConnectionRestored => "connection_restored",
            Event::SessionStart => "session_start",
            Event::SessionEnd => "session_end",
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Event {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Event::ALL
            .iter()
            .copied()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| format!("unknown event {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionLogEntry {
    /// UNIX seconds on the reporting host.
    pub abs_timestamp: i64,
    pub host: String,
    pub seq_num: Option<u64>,
    pub event: Event,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

// Details are free text; newlines and backslashes are escaped so that one
// entry always occupies exactly one line.
fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

impl ExecutionLogEntry {
    pub fn to_row(&self) -> String {
        format!(
            "{};{};{};{};{}",
            self.abs_timestamp,
            self.host.replace(';', "_"),
            self.seq_num.map(|s| s.to_string()).unwrap_or_default(),
            self.event,
            escape(&self.detail)
        )
    }

    pub fn from_row(row: &str) -> Result<Self, String> {
        let f: Vec<&str> = row.splitn(5, ';').collect();
        if f.len() != 5 {
            return Err(format!("expected 5 fields, found {}", f.len()));
        }
        let abs_timestamp = f[0].parse().map_err(|_| format!("bad timestamp {:?}", f[0]))?;
        let seq_num = if f[2].is_empty() {
            None
        } else {
            Some(f[2].parse().map_err(|_| format!("bad seqNum {:?}", f[2]))?)
        };
        Ok(ExecutionLogEntry {
            abs_timestamp,
            host: f[1].to_string(),
            seq_num,
            event: f[3].parse()?,
            detail: unescape(f[4]),
        })
    }
}

pub fn parse_log(text: &str) -> Result<Vec<ExecutionLogEntry>, LogError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || (i == 0 && line == LOG_HEADER) {
            continue;
        }
        out.push(ExecutionLogEntry::from_row(line).map_err(|reason| LogError::Parse { line: i + 1, reason })?);
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<Vec<ExecutionLogEntry>, LogError> {
    parse_log(&std::fs::read_to_string(path)?)
}

/// Log file name for one host and session: `<host>_<unixtime>.log.csv`, with
/// path-hostile characters in the host replaced by `_`.
pub fn log_file_name(host: &str, session_start: i64) -> String {
    let safe: String = host
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{safe}_{session_start}.log.csv")
}

/// Append-only writer; every entry is flushed before `append` returns.
pub struct ExecutionLogWriter {
    path: PathBuf,
    out: BufWriter<File>,
    lines: usize,
}

impl ExecutionLogWriter {
    pub fn create(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let exists = path.exists() && std::fs::metadata(&path)?.len() > 0;
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let mut out = BufWriter::new(file);
        if !exists {
            writeln!(out, "{LOG_HEADER}")?;
            out.flush()?;
        }
        Ok(ExecutionLogWriter { path, out, lines: 0 })
    }

    pub fn append(&mut self, entry: &ExecutionLogEntry) -> io::Result<()> {
        writeln!(self.out, "{}", entry.to_row())?;
        self.out.flush()?;
        self.lines += 1;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries_written(&self) -> usize {
        self.lines
    }
}
