//! Orchestrates an injection session across engines.
//!
//! One channel per host, one receiver thread per channel writing that host's
//! execution log, and the calling thread acting as dispatcher: it sends each
//! task [`DISPATCH_LEAD`] before its start and then waits for every task to
//! reach a terminal status on every reachable host.

use std::collections::{BTreeMap, HashSet};
use std::io;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{info, warn};
use thiserror::Error;

use crate::clock::unix_now;
use crate::config::ToolConfig;
use crate::engine::{is_terminal, signal_group, split_args, SESSION_LEAD};
use crate::execlog::{log_file_name, Event, ExecutionLogEntry, ExecutionLogWriter};
use crate::protocol::{
    connect_with_retry, ChannelCloser, ChannelError, ChannelOptions, ChannelSender, Message, Status,
    DEFAULT_QUEUE_BOUND,
};
use crate::task::Workload;

pub const DISPATCH_LEAD: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("no target host reachable: {0}")]
    NoHostReachable(String),
    #[error("no target hosts given")]
    NoHosts,
    #[error("cannot write execution log {path}: {source}")]
    Log { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone)]
pub struct ControllerOptions {
    pub log_dir: PathBuf,
    /// Limit for reaching each host when the session starts.
    pub connect_timeout: Duration,
    pub retry_interval: Duration,
    /// A host unreachable for this long mid-session is abandoned.
    pub outage_give_up: Option<Duration>,
    /// Extra wait after the last task's nominal end before giving up on
    /// missing terminal statuses.
    pub end_grace: Duration,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        ControllerOptions {
            log_dir: PathBuf::from("."),
            connect_timeout: Duration::from_secs(10),
            retry_interval: Duration::from_secs(1),
            outage_give_up: Some(Duration::from_secs(600)),
            end_grace: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SessionSummary {
    pub session_id: u64,
    pub logs: Vec<PathBuf>,
    /// Hosts that could not be reached at session start.
    pub unreachable: Vec<String>,
    /// Hosts given up on mid-session.
    pub lost: Vec<String>,
    pub counts: BTreeMap<Event, usize>,
    /// (host, seqNum) pairs that never reached a terminal status.
    pub unfinished: Vec<(String, u64)>,
}

impl SessionSummary {
    pub fn count(&self, e: Event) -> usize {
        self.counts.get(&e).copied().unwrap_or(0)
    }

    pub fn render(&self) -> String {
        let mut out = format!("session {:016x}\n", self.session_id);
        for e in Event::ALL {
            out.push_str(&format!("  {:<20} {}\n", e.as_str(), self.count(e)));
        }
        for h in &self.unreachable {
            out.push_str(&format!("  unreachable: {h}\n"));
        }
        for h in &self.lost {
            out.push_str(&format!("  lost: {h}\n"));
        }
        if !self.unfinished.is_empty() {
            out.push_str(&format!("  unfinished tasks: {}\n", self.unfinished.len()));
        }
        for l in &self.logs {
            out.push_str(&format!("  log: {}\n", l.display()));
        }
        out
    }
}

/// Appends one status to a host log.
pub fn record_status(w: &mut ExecutionLogWriter, host: &str, s: &Status) -> io::Result<ExecutionLogEntry> {
    let entry = ExecutionLogEntry {
        abs_timestamp: s.abs_timestamp,
        host: host.to_string(),
        seq_num: s.seq_num,
        event: s.event,
        detail: s.detail.clone(),
    };
    w.append(&entry)?;
    Ok(entry)
}

enum Inbound {
    Status(usize, Status),
    GaveUp(usize, ChannelError),
    LogFailed(PathBuf, io::Error),
}

struct Host {
    addr: String,
    sender: ChannelSender,
    closer: ChannelCloser,
    receiver: JoinHandle<()>,
    log: PathBuf,
    alive: bool,
    ended: bool,
}

fn spawn_receiver(
    idx: usize,
    addr: String,
    rx: crate::protocol::ChannelReceiver,
    mut writer: ExecutionLogWriter,
    tx: Sender<Inbound>,
) -> JoinHandle<()> {
    thread::spawn(move || loop {
        match rx.recv() {
            Ok(Message::Status(s)) => {
                if let Err(e) = record_status(&mut writer, &addr, &s) {
                    let _ = tx.send(Inbound::LogFailed(writer.path().to_path_buf(), e));
                    return;
                }
                if tx.send(Inbound::Status(idx, s)).is_err() {
                    return;
                }
            }
            Ok(Message::Command(_)) => {}
            Err(ChannelError::Closed) => return,
            Err(e) => {
                let s = Status {
                    event: Event::Error,
                    seq_num: None,
                    abs_timestamp: unix_now(),
                    detail: format!("host abandoned: {e}"),
                };
                let _ = record_status(&mut writer, &addr, &s);
                let _ = tx.send(Inbound::GaveUp(idx, e));
                return;
            }
        }
    })
}

fn start_companions(cmds: &[String]) -> Vec<Child> {
    let mut out = Vec::new();
    for c in cmds {
        let argv = match split_args(c) {
            Ok(a) => a,
            Err(e) => {
                warn!("companion {c:?}: {e}");
                continue;
            }
        };
        let spawned = std::process::Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .process_group(0)
            .spawn();
        match spawned {
            Ok(child) => out.push(child),
            Err(e) => warn!("companion {c:?} failed to start: {e}"),
        }
    }
    out
}

fn stop_companions(children: Vec<Child>) {
    for mut c in children {
        let _ = signal_group(c.id(), libc::SIGTERM);
        let end = Instant::now() + Duration::from_secs(2);
        loop {
            match c.try_wait() {
                Ok(Some(_)) => break,
                Ok(None) if Instant::now() < end => thread::sleep(Duration::from_millis(20)),
                _ => {
                    let _ = signal_group(c.id(), libc::SIGKILL);
                    let _ = c.wait();
                    break;
                }
            }
        }
    }
}

struct Tracker {
    outstanding: HashSet<(usize, u64)>,
    summary: SessionSummary,
    log_error: Option<ControllerError>,
}

impl Tracker {
    fn handle(&mut self, hosts: &mut [Host], msg: Inbound) {
        match msg {
            Inbound::Status(i, s) => {
                *self.summary.counts.entry(s.event).or_default() += 1;
                if is_terminal(&s) {
                    self.outstanding.remove(&(i, s.seq_num.unwrap_or_default()));
                }
                if s.event == Event::SessionEnd {
                    hosts[i].ended = true;
                }
            }
            Inbound::GaveUp(i, e) => {
                warn!("host {} abandoned: {e}", hosts[i].addr);
                *self.summary.counts.entry(Event::Error).or_default() += 1;
                hosts[i].alive = false;
                self.summary.lost.push(hosts[i].addr.clone());
                self.outstanding.retain(|(h, _)| *h != i);
            }
            Inbound::LogFailed(path, source) => {
                self.log_error.get_or_insert(ControllerError::Log { path, source });
            }
        }
    }

    /// Drains inbound traffic until `until`, or until `done` holds.
    fn pump(&mut self, hosts: &mut [Host], rx: &Receiver<Inbound>, until: Instant, done: impl Fn(&Self, &[Host]) -> bool) {
        while self.log_error.is_none() && !done(self, hosts) {
            let left = until.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return;
            }
            match rx.recv_timeout(left) {
                Ok(m) => self.handle(hosts, m),
                Err(RecvTimeoutError::Timeout) => return,
                Err(RecvTimeoutError::Disconnected) => return,
            }
        }
    }
}

/// Runs a whole session: connect, dispatch, collect, end.
pub fn run_session(
    workload: &Workload,
    host_addrs: &[String],
    cfg: &ToolConfig,
    opts: &ControllerOptions,
) -> Result<SessionSummary, ControllerError> {
    if host_addrs.is_empty() {
        return Err(ControllerError::NoHosts);
    }
    let session_id: u64 = rand::random();
    let log_err = |path: &Path, source| ControllerError::Log {
        path: path.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(&opts.log_dir).map_err(|e| log_err(&opts.log_dir, e))?;

    let chan_opts = ChannelOptions {
        retry_interval: opts.retry_interval,
        give_up_after: opts.outage_give_up,
        initial_timeout: Some(opts.connect_timeout),
        hello: Some(Message::greet(session_id)),
        // Room for every command of the session, so none is ever dropped.
        queue_bound: DEFAULT_QUEUE_BOUND.max(workload.len() + 16),
        ..Default::default()
    };
    let attempts: Vec<_> = host_addrs
        .iter()
        .map(|a| {
            let a = a.clone();
            let o = chan_opts.clone();
            thread::spawn(move || connect_with_retry(&a, o))
        })
        .collect();
    let clock0_unix = unix_now();
    let clock0 = Instant::now() + SESSION_LEAD;

    let (tx, rx) = mpsc::channel();
    let mut hosts = Vec::new();
    let mut summary = SessionSummary {
        session_id,
        ..Default::default()
    };
    let mut reasons = Vec::new();
    for (addr, attempt) in host_addrs.iter().zip(attempts) {
        match attempt.join().expect("connect thread") {
            Ok(chan) => {
                let log = opts.log_dir.join(log_file_name(addr, clock0_unix));
                let writer = ExecutionLogWriter::create(&log).map_err(|e| log_err(&log, e))?;
                let (sender, receiver, closer) = chan.split();
                let idx = hosts.len();
                let handle = spawn_receiver(idx, addr.clone(), receiver, writer, tx.clone());
                summary.logs.push(log.clone());
                hosts.push(Host {
                    addr: addr.clone(),
                    sender,
                    closer,
                    receiver: handle,
                    log,
                    alive: true,
                    ended: false,
                });
            }
            Err(e) => {
                warn!("{addr}: {e}");
                reasons.push(format!("{addr}: {e}"));
                summary.unreachable.push(addr.clone());
            }
        }
    }
    drop(tx);
    if hosts.is_empty() {
        return Err(ControllerError::NoHostReachable(reasons.join("; ")));
    }
    info!("session {session_id:016x} started with {} host(s)", hosts.len());

    let mut tracker = Tracker {
        outstanding: HashSet::new(),
        summary,
        log_error: None,
    };
    let companions = if workload.is_empty() {
        Vec::new()
    } else {
        start_companions(&cfg.companion_commands)
    };

    for task in workload.tasks() {
        let send_at = (clock0 + Duration::from_secs(task.timestamp)).checked_sub(DISPATCH_LEAD).unwrap_or(clock0);
        tracker.pump(&mut hosts, &rx, send_at, |_, _| false);
        if let Some(e) = tracker.log_error.take() {
            stop_companions(companions);
            return Err(e);
        }
        for (i, h) in hosts.iter().enumerate().filter(|(_, h)| h.alive) {
            h.sender.send(Message::start_task(task.clone()));
            tracker.outstanding.insert((i, task.seq_num));
        }
    }

    let last_end = clock0 + Duration::from_secs(workload.span()) + opts.end_grace;
    tracker.pump(&mut hosts, &rx, last_end, |t, _| t.outstanding.is_empty());
    stop_companions(companions);

    for h in hosts.iter().filter(|h| h.alive) {
        h.sender.send(Message::end_session());
    }
    let end_wait = Instant::now() + Duration::from_secs(10);
    tracker.pump(&mut hosts, &rx, end_wait, |_, hs| hs.iter().all(|h| !h.alive || h.ended));

    let mut summary = tracker.summary;
    let mut unfinished: Vec<(String, u64)> =
        tracker.outstanding.iter().map(|(i, seq)| (hosts[*i].addr.clone(), *seq)).collect();
    unfinished.sort();
    summary.unfinished = unfinished;
    for h in hosts {
        h.closer.close();
        let _ = h.receiver.join();
        drop(h.sender);
        info!("log written to {}", h.log.display());
    }
    // Statuses that raced with the shutdown are already in the logs.
    while let Ok(m) = rx.try_recv() {
        if let Inbound::Status(_, s) = m {
            *summary.counts.entry(s.event).or_default() += 1;
        }
    }
    if let Some(e) = tracker.log_error {
        return Err(e);
    }
    Ok(summary)
}
