//! Tasks, workloads and the semicolon-separated workload file format.
//!
//! A workload file looks like this:
//!
//! ```text
//! timestamp;duration;seqNum;isFault;cores;args
//! 0;1723;1;False;0-7;./hpl lininput
//! 355;244;2;True;6;sudo ./cpufreq 258
//! 914;291;3;True;4;./leak 316
//! ```
//!
//! `args` is always the last column and may itself contain semicolons.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WORKLOAD_HEADER: &str = "timestamp;duration;seqNum;isFault;cores;args";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid core list {input:?}: {reason}")]
    CoreList { input: String, reason: String },
    #[error("duplicate seqNum {0}")]
    DuplicateSeqNum(u64),
    #[error("task {seq_num}: {reason}")]
    InvalidTask { seq_num: u64, reason: String },
    #[error("fault tasks {first} and {second} overlap")]
    FaultOverlap { first: u64, second: u64 },
}

/// One scheduled execution of an application or a fault-triggering program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    /// Full shell command line.
    pub args: String,
    /// Start offset in seconds from the beginning of the session.
    pub timestamp: u64,
    /// Maximum (or exact) duration in seconds.
    pub duration: u64,
    pub is_fault: bool,
    pub seq_num: u64,
    /// Cores the task may run on; `None` means no pinning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cores: Option<Vec<usize>>,
}

impl Task {
    pub fn new(seq_num: u64, timestamp: u64, duration: u64, is_fault: bool, args: impl Into<String>) -> Self {
        Task {
            args: args.into(),
            timestamp,
            duration,
            is_fault,
            seq_num,
            cores: None,
        }
    }

    pub fn with_cores(mut self, cores: Vec<usize>) -> Self {
        self.cores = Some(cores);
        self
    }

    /// Exclusive end offset of the task window.
    pub fn end(&self) -> u64 {
        self.timestamp + self.duration
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let invalid = |reason: &str| WorkloadError::InvalidTask {
            seq_num: self.seq_num,
            reason: reason.to_string(),
        };
        if self.seq_num == 0 {
            return Err(invalid("seqNum must be positive"));
        }
        if self.duration == 0 {
            return Err(invalid("duration must be positive"));
        }
        if self.args.trim().is_empty() {
            return Err(invalid("empty args"));
        }
        if self.args.contains('\n') || self.args.contains('\r') {
            return Err(invalid("args must be a single line"));
        }
        if let Some(cores) = &self.cores {
            let unique: HashSet<_> = cores.iter().collect();
            if unique.len() != cores.len() {
                return Err(invalid("duplicate core index"));
            }
        }
        Ok(())
    }
}

/// A validated, time-ordered list of tasks.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Workload {
    tasks: Vec<Task>,
}

impl Workload {
    /// Sorts by `(timestamp, seq_num)` and checks every workload invariant.
    pub fn new(mut tasks: Vec<Task>) -> Result<Self, WorkloadError> {
        tasks.sort_by_key(|t| (t.timestamp, t.seq_num));
        let mut seen = HashSet::new();
        for t in &tasks {
            t.validate()?;
            if !seen.insert(t.seq_num) {
                return Err(WorkloadError::DuplicateSeqNum(t.seq_num));
            }
        }
        if let Some((a, b)) = find_fault_overlap(&tasks) {
            return Err(WorkloadError::FaultOverlap { first: a, second: b });
        }
        Ok(Workload { tasks })
    }

    pub fn empty() -> Self {
        Workload::default()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn into_tasks(self) -> Vec<Task> {
        self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, seq_num: u64) -> Option<&Task> {
        self.tasks.iter().find(|t| t.seq_num == seq_num)
    }

    /// Offset at which the last task ends.
    pub fn span(&self) -> u64 {
        self.tasks.iter().map(Task::end).max().unwrap_or(0)
    }
}

/// Returns the first pair of overlapping fault tasks, if any. `tasks` must be
/// sorted by timestamp.
fn find_fault_overlap(tasks: &[Task]) -> Option<(u64, u64)> {
    let mut last: Option<&Task> = None;
    for t in tasks.iter().filter(|t| t.is_fault) {
        if let Some(prev) = last {
            if prev.end() > t.timestamp {
                return Some((prev.seq_num, t.seq_num));
            }
            if t.end() <= prev.end() {
                continue;
            }
        }
        last = Some(t);
    }
    None
}

pub fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "True" | "true" => Some(true),
        "False" | "false" => Some(false),
        _ => None,
    }
}

fn format_bool(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

/// Expands a core list such as `0-3,6` into an ascending, deduplicated list.
/// The empty string means "no pinning".
pub fn parse_core_list(s: &str) -> Result<Option<Vec<usize>>, WorkloadError> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    let err = |reason: String| WorkloadError::CoreList {
        input: s.to_string(),
        reason,
    };
    let num = |tok: &str| -> Result<usize, WorkloadError> {
        tok.trim()
            .parse::<usize>()
            .map_err(|_| err(format!("{:?} is not a core index", tok.trim())))
    };
    let mut cores = BTreeSet::new();
    for token in s.split(',') {
        match token.split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if lo > hi {
                    return Err(err(format!("range {lo}-{hi} is reversed")));
                }
                cores.extend(lo..=hi);
            }
            None => {
                cores.insert(num(token)?);
            }
        }
    }
    Ok(Some(cores.into_iter().collect()))
}

/// Compresses a core list back into range notation (`[0,1,2,5]` -> `0-2,5`).
pub fn format_core_list(cores: &[usize]) -> String {
    let mut sorted = cores.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out = String::new();
    let mut i = 0;
    while i < sorted.len() {
        let start = sorted[i];
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[j] + 1 {
            j += 1;
        }
        if !out.is_empty() {
            out.push(',');
        }
        if j > i {
            let _ = write!(out, "{}-{}", start, sorted[j]);
        } else {
            let _ = write!(out, "{start}");
        }
        i = j + 1;
    }
    out
}

/// Parses one data row of a workload file (without validation).
pub fn parse_task_row(row: &str) -> Result<Task, String> {
    let fields: Vec<&str> = row.splitn(6, ';').collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    }
    let int = |name: &str, v: &str| -> Result<u64, String> {
        v.trim()
            .parse::<u64>()
            .map_err(|_| format!("{name} {:?} is not a non-negative integer", v.trim()))
    };
    let timestamp = int("timestamp", fields[0])?;
    let duration = int("duration", fields[1])?;
    let seq_num = int("seqNum", fields[2])?;
    let is_fault = parse_bool(fields[3].trim()).ok_or_else(|| format!("isFault {:?} is not a boolean", fields[3].trim()))?;
    let cores = parse_core_list(fields[4]).map_err(|e| e.to_string())?;
    let args = fields[5].trim().to_string();
    Ok(Task {
        args,
        timestamp,
        duration,
        is_fault,
        seq_num,
        cores,
    })
}

pub fn format_task_row(t: &Task) -> String {
    format!(
        "{};{};{};{};{};{}",
        t.timestamp,
        t.duration,
        t.seq_num,
        format_bool(t.is_fault),
        t.cores.as_deref().map(format_core_list).unwrap_or_default(),
        t.args
    )
}

/// Parses a workload document. Blank lines are ignored; line numbers in errors
/// are 1-based and count the header.
pub fn parse_workload(text: &str) -> Result<Workload, WorkloadError> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break (i, l),
            None => {
                return Err(WorkloadError::Parse {
                    line: 1,
                    reason: "missing header".into(),
                })
            }
        }
    };
    let cols: Vec<&str> = header.1.split(';').map(str::trim).collect();
    if cols.join(";") != WORKLOAD_HEADER {
        return Err(WorkloadError::Parse {
            line: header.0 + 1,
            reason: format!("expected header {WORKLOAD_HEADER:?}"),
        });
    }
    let mut tasks = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let task = parse_task_row(line).map_err(|reason| WorkloadError::Parse { line: i + 1, reason })?;
        tasks.push(task);
    }
    Workload::new(tasks)
}

pub fn write_workload(w: &Workload) -> String {
    let mut out = String::with_capacity(64 * (w.len() + 1));
    out.push_str(WORKLOAD_HEADER);
    out.push('\n');
    for t in w.tasks() {
        out.push_str(&format_task_row(t));
        out.push('\n');
    }
    out
}
