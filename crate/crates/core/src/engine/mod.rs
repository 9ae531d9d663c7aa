//! The engine daemon running on target nodes.
//!
//! Threads:
//! - an acceptor plus one reader per controller connection;
//! - a scheduler that releases accepted tasks at `epoch + timestamp`;
//! - `pool_size` workers that run tasks to completion;
//! - an emitter that owns every outbound socket and the journal, so status
//!   emission and journal writes are totally ordered.
//!
//! The first controller to greet becomes the session master; later greeters
//! only observe. Statuses produced while the master is disconnected are kept
//! in a bounded backlog and replayed when it greets again.

mod journal;
mod process;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::io::{self, BufReader};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};

pub use journal::{replay as replay_journal, Journal, Record, SessionSnapshot, JOURNAL_FILE};
pub use process::{affinity_of, online_cpus, pin_cores, signal_group, spawn_task, split_args, PinOutcome};

use crate::clock::{instant_at_unix_ms, unix_now, unix_now_ms};
use crate::config::ToolConfig;
use crate::execlog::Event;
use crate::protocol::{write_message, Action, Command, FrameReader, Message, Status};
use crate::task::Task;

const BACKLOG_BOUND: usize = 1024;
/// Offset between receiving a new session's greet and its epoch, so the
/// controller can send even the first task ahead of its start.
pub const SESSION_LEAD: Duration = Duration::from_secs(2);
const TERMINATE_GRACE: Duration = Duration::from_secs(2);
const MIN_RESTART_GAP: Duration = Duration::from_millis(100);

/// Detail prefix marking an `error` status that does not end its task.
pub const WARNING_PREFIX: &str = "warning:";

/// True when `s` closes a task: `task_end`, or an `error` tied to a task that
/// is not a mere warning.
pub fn is_terminal(s: &Status) -> bool {
    match s.event {
        Event::TaskEnd => s.seq_num.is_some(),
        Event::Error => s.seq_num.is_some() && !s.detail.starts_with(WARNING_PREFIX),
        _ => false,
    }
}

/// Value of `key=value` inside a status detail (space separated; `args=`
/// always runs to the end of the detail).
pub fn detail_field<'a>(detail: &'a str, key: &str) -> Option<&'a str> {
    if let Some(pos) = detail.find(" args=").map(|p| p + 1).or_else(|| detail.starts_with("args=").then_some(0)) {
        if key == "args" {
            return Some(&detail[pos + 5..]);
        }
        return detail[..pos].split_whitespace().find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='));
    }
    detail.split_whitespace().find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub bind: String,
    pub pool_size: usize,
    pub exact_duration_mode: bool,
    pub results_dir: PathBuf,
}

impl EngineConfig {
    pub fn from_tool(cfg: &ToolConfig) -> Self {
        EngineConfig {
            bind: format!("0.0.0.0:{}", cfg.listen_port),
            pool_size: cfg.pool_size,
            exact_duration_mode: cfg.exact_duration_mode,
            results_dir: cfg.results_dir.clone(),
        }
    }

    /// Loopback engine on an ephemeral port.
    pub fn local(results_dir: impl Into<PathBuf>) -> Self {
        EngineConfig {
            bind: "127.0.0.1:0".into(),
            pool_size: 8,
            exact_duration_mode: false,
            results_dir: results_dir.into(),
        }
    }
}

type ConnId = u64;

enum Emit {
    Register(ConnId, TcpStream),
    Unregister(ConnId),
    AttachMaster(ConnId, Message),
    Broadcast(Message),
    Direct(ConnId, Message),
    Journal(Record, bool),
    BeginJournal(u64, i64),
    Stop,
}

enum Ctl {
    Exited(Option<i32>),
    Terminate,
    Abort,
}

struct Job {
    task: Task,
    scheduled: Instant,
    epoch: Instant,
}

struct SessionInfo {
    id: u64,
    epoch_ms: i64,
    epoch: Instant,
    recovered: bool,
    ended: bool,
}

#[derive(Default)]
struct EngineState {
    session: Option<SessionInfo>,
    master_conn: Option<ConnId>,
    accepted: HashSet<u64>,
    pending: HashMap<u64, Task>,
    queue: BinaryHeap<Reverse<(Instant, u64)>>,
    active: HashMap<u64, Sender<Ctl>>,
    resumed: usize,
    warnings: Vec<String>,
}

struct Inner {
    cfg: EngineConfig,
    state: Mutex<EngineState>,
    wake: Condvar,
    emit: Mutex<Sender<Emit>>,
    jobs: Mutex<Sender<Option<Job>>>,
    busy: AtomicUsize,
    shutdown: AtomicBool,
    next_conn: AtomicU64,
}

impl Inner {
    fn send(&self, e: Emit) {
        let _ = self.emit.lock().unwrap().send(e);
    }

    fn broadcast(&self, event: Event, seq: Option<u64>, detail: String) {
        self.send(Emit::Broadcast(Message::status(event, seq, unix_now(), detail)));
    }
}

/// A running engine. Dropping it does not stop it; call [`EngineHandle::shutdown`].
pub struct EngineHandle {
    inner: Arc<Inner>,
    local_addr: SocketAddr,
    threads: Vec<JoinHandle<()>>,
}

impl EngineHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Number of tasks currently executing.
    pub fn active_tasks(&self) -> usize {
        self.inner.state.lock().unwrap().active.len()
    }

    /// Blocks until the engine stops.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Stops abruptly: running tasks are killed, connections dropped and the
    /// journal left as is, as if the node had gone down.
    pub fn shutdown(mut self) {
        let inner = &self.inner;
        inner.shutdown.store(true, Ordering::SeqCst);
        {
            let st = inner.state.lock().unwrap();
            for tx in st.active.values() {
                let _ = tx.send(Ctl::Abort);
            }
        }
        inner.wake.notify_all();
        for _ in 0..inner.cfg.pool_size {
            let _ = inner.jobs.lock().unwrap().send(None);
        }
        let _ = TcpStream::connect(self.local_addr);
        inner.send(Emit::Stop);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Binds the listening socket, recovers any journaled session and starts all
/// engine threads.
pub fn start(cfg: EngineConfig) -> io::Result<EngineHandle> {
    if cfg.pool_size == 0 {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "pool_size must be at least 1"));
    }
    std::fs::create_dir_all(&cfg.results_dir)?;
    let listener = TcpListener::bind(&cfg.bind)?;
    let local_addr = listener.local_addr()?;
    let (emit_tx, emit_rx) = mpsc::channel();
    let (job_tx, job_rx) = mpsc::channel();
    let mut journal = Journal::new(&cfg.results_dir);
    let inner = Arc::new(Inner {
        cfg: cfg.clone(),
        state: Mutex::new(EngineState::default()),
        wake: Condvar::new(),
        emit: Mutex::new(emit_tx),
        jobs: Mutex::new(job_tx),
        busy: AtomicUsize::new(0),
        shutdown: AtomicBool::new(false),
        next_conn: AtomicU64::new(1),
    });

    recover_session(&inner, &mut journal);

    let mut threads = Vec::new();
    threads.push(thread::Builder::new().name("engine-emit".into()).spawn(move || emitter(emit_rx, journal))?);
    let job_rx = Arc::new(Mutex::new(job_rx));
    for i in 0..cfg.pool_size {
        let inner = inner.clone();
        let rx = job_rx.clone();
        threads.push(thread::Builder::new().name(format!("engine-worker-{i}")).spawn(move || worker(inner, rx))?);
    }
    {
        let inner = inner.clone();
        threads.push(thread::Builder::new().name("engine-sched".into()).spawn(move || scheduler(inner))?);
    }
    {
        let inner = inner.clone();
        threads.push(thread::Builder::new().name("engine-accept".into()).spawn(move || acceptor(inner, listener))?);
    }
    info!("engine listening on {local_addr}");
    Ok(EngineHandle {
        inner,
        local_addr,
        threads,
    })
}

fn recover_session(inner: &Inner, journal: &mut Journal) {
    let mut st = inner.state.lock().unwrap();
    match journal.load() {
        Ok(Some(snap)) if !snap.ended => {
            if let Err(e) = journal.reopen() {
                st.warnings.push(format!("{WARNING_PREFIX} cannot reopen journal: {e}"));
            }
            let epoch = instant_at_unix_ms(snap.epoch_ms);
            let now_ms = unix_now_ms();
            for t in snap.pending() {
                st.accepted.insert(t.seq_num);
                let start_ms = snap.epoch_ms + (t.timestamp as i64) * 1000;
                if start_ms > now_ms {
                    st.pending.insert(t.seq_num, t.clone());
                    st.queue.push(Reverse((epoch + Duration::from_secs(t.timestamp), t.seq_num)));
                    st.resumed += 1;
                } else {
                    inner.broadcast(Event::Error, Some(t.seq_num), "interrupted by engine restart".into());
                }
            }
            for seq in snap.accepted.keys() {
                st.accepted.insert(*seq);
            }
            info!("recovered session {} with {} pending task(s)", snap.session_id, st.resumed);
            st.session = Some(SessionInfo {
                id: snap.session_id,
                epoch_ms: snap.epoch_ms,
                epoch,
                recovered: true,
                ended: false,
            });
        }
        Ok(_) => {}
        Err(e) => {
            warn!("journal unreadable: {e}");
            st.warnings.push(format!("{WARNING_PREFIX} journal corrupt, starting fresh: {e}"));
        }
    }
}

fn acceptor(inner: Arc<Inner>, listener: TcpListener) {
    let mut readers = Vec::new();
    for conn in listener.incoming() {
        if inner.shutdown.load(Ordering::SeqCst) {
            break;
        }
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                debug!("accept: {e}");
                continue;
            }
        };
        let id = inner.next_conn.fetch_add(1, Ordering::SeqCst);
        let inner = inner.clone();
        readers.push(thread::spawn(move || serve_connection(inner, id, stream)));
    }
    for r in readers {
        let _ = r.join();
    }
}

fn serve_connection(inner: Arc<Inner>, id: ConnId, stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let Ok(writer) = stream.try_clone() else {
        return;
    };
    let _ = writer.set_write_timeout(Some(Duration::from_secs(5)));
    inner.send(Emit::Register(id, writer));
    let mut reader = FrameReader::new(BufReader::new(stream));
    loop {
        match reader.read_message() {
            Ok(Some(Message::Command(cmd))) => handle_command(&inner, id, cmd),
            Ok(Some(Message::Status(_))) => {}
            Ok(None) => break,
            Err(e) => {
                debug!("connection {id}: {e}");
                break;
            }
        }
    }
    let _ = reader.get_ref().get_ref().shutdown(Shutdown::Both);
    {
        let mut st = inner.state.lock().unwrap();
        if st.master_conn == Some(id) {
            st.master_conn = None;
        }
    }
    inner.send(Emit::Unregister(id));
}

fn handle_command(inner: &Arc<Inner>, conn: ConnId, cmd: Command) {
    if cmd.action == Action::Greet {
        accept_master(inner, conn, cmd.session_id.unwrap_or_default());
        return;
    }
    let is_master = inner.state.lock().unwrap().master_conn == Some(conn);
    if !is_master {
        let seq = cmd.task.as_ref().map(|t| t.seq_num);
        let msg = Message::status(Event::Error, seq, unix_now(), format!("not_master: {:?} rejected", cmd.action));
        inner.send(Emit::Direct(conn, msg));
        return;
    }
    match (cmd.action, cmd.task) {
        (Action::StartTask, Some(task)) => accept_task(inner, task),
        (Action::TerminateTask, Some(task)) => terminate_task(inner, task.seq_num),
        (Action::EndSession, _) => end_session(inner),
        _ => {}
    }
}

/// Decides whether the greeting controller becomes master or observer.
fn accept_master(inner: &Arc<Inner>, conn: ConnId, session_id: u64) {
    let mut st = inner.state.lock().unwrap();
    let live = st.session.as_ref().filter(|s| !s.ended).map(|s| (s.id, s.recovered, s.epoch_ms));
    match live {
        Some((id, recovered, epoch_ms)) if id == session_id => {
            st.master_conn = Some(conn);
            let resumed = st.resumed;
            if let Some(s) = st.session.as_mut() {
                s.recovered = false;
            }
            let detail = format!("session={id} role=master epoch_ms={epoch_ms} recovered={recovered} resumed={resumed}");
            inner.send(Emit::AttachMaster(conn, Message::status(Event::SessionStart, None, unix_now(), detail)));
        }
        Some((id, _, _)) => {
            let detail = format!("session={session_id} role=observer master_session={id}");
            inner.send(Emit::Direct(conn, Message::status(Event::SessionStart, None, unix_now(), detail)));
        }
        None => {
            let epoch_ms = unix_now_ms() + SESSION_LEAD.as_millis() as i64;
            st.session = Some(SessionInfo {
                id: session_id,
                epoch_ms,
                epoch: Instant::now() + SESSION_LEAD,
                recovered: false,
                ended: false,
            });
            st.master_conn = Some(conn);
            st.accepted.clear();
            st.pending.clear();
            st.queue.clear();
            st.resumed = 0;
            inner.send(Emit::BeginJournal(session_id, epoch_ms));
            let detail = format!("session={session_id} role=master epoch_ms={epoch_ms} recovered=false resumed=0");
            inner.send(Emit::AttachMaster(conn, Message::status(Event::SessionStart, None, unix_now(), detail)));
            for w in st.warnings.drain(..) {
                inner.broadcast(Event::Error, None, w);
            }
        }
    }
}

fn accept_task(inner: &Arc<Inner>, task: Task) {
    let mut st = inner.state.lock().unwrap();
    let Some(epoch) = st.session.as_ref().filter(|s| !s.ended).map(|s| s.epoch) else {
        drop(st);
        inner.broadcast(Event::Error, Some(task.seq_num), "no active session".into());
        return;
    };
    if !st.accepted.insert(task.seq_num) {
        debug!("duplicate start_task {}", task.seq_num);
        return;
    }
    let at = epoch + Duration::from_secs(task.timestamp);
    st.queue.push(Reverse((at, task.seq_num)));
    st.pending.insert(task.seq_num, task.clone());
    drop(st);
    inner.send(Emit::Journal(Record::Accept(task), false));
    inner.wake.notify_all();
}

fn terminate_task(inner: &Arc<Inner>, seq: u64) {
    let mut st = inner.state.lock().unwrap();
    if st.pending.remove(&seq).is_some() {
        drop(st);
        inner.broadcast(Event::Error, Some(seq), "terminated before start".into());
        return;
    }
    if let Some(tx) = st.active.get(&seq) {
        let _ = tx.send(Ctl::Terminate);
    }
}

fn end_session(inner: &Arc<Inner>) {
    let mut st = inner.state.lock().unwrap();
    let dropped: Vec<u64> = st.pending.drain().map(|(seq, _)| seq).collect();
    st.queue.clear();
    for tx in st.active.values() {
        let _ = tx.send(Ctl::Terminate);
    }
    drop(st);
    for seq in dropped {
        inner.broadcast(Event::Error, Some(seq), "terminated before start: session ended".into());
    }
    let inner = inner.clone();
    thread::spawn(move || {
        let deadline = Instant::now() + TERMINATE_GRACE + Duration::from_secs(3);
        while Instant::now() < deadline && !inner.state.lock().unwrap().active.is_empty() {
            thread::sleep(Duration::from_millis(20));
        }
        let mut st = inner.state.lock().unwrap();
        let id = match st.session.as_mut() {
            Some(s) => {
                s.ended = true;
                s.id
            }
            None => return,
        };
        drop(st);
        inner.send(Emit::Journal(Record::End, true));
        inner.broadcast(Event::SessionEnd, None, format!("session={id}"));
    });
}

fn scheduler(inner: Arc<Inner>) {
    let mut st = inner.state.lock().unwrap();
    loop {
        if inner.shutdown.load(Ordering::SeqCst) {
            return;
        }
        let now = Instant::now();
        match st.queue.peek().copied() {
            None => st = inner.wake.wait(st).unwrap(),
            Some(Reverse((at, _))) if at > now => st = inner.wake.wait_timeout(st, at - now).unwrap().0,
            Some(Reverse((at, seq))) => {
                st.queue.pop();
                let Some(task) = st.pending.remove(&seq) else {
                    continue;
                };
                let epoch = st.session.as_ref().map(|s| s.epoch).unwrap_or(at);
                drop(st);
                dispatch(&inner, task, at, epoch);
                st = inner.state.lock().unwrap();
            }
        }
    }
}

fn dispatch(inner: &Inner, task: Task, scheduled: Instant, epoch: Instant) {
    let pool = inner.cfg.pool_size;
    let claimed = inner
        .busy
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| (b < pool).then_some(b + 1))
        .is_ok();
    if !claimed {
        inner.broadcast(Event::Error, Some(task.seq_num), format!("pool_exhausted: all {pool} workers busy"));
        return;
    }
    let _ = inner.jobs.lock().unwrap().send(Some(Job { task, scheduled, epoch }));
}

fn worker(inner: Arc<Inner>, jobs: Arc<Mutex<Receiver<Option<Job>>>>) {
    loop {
        let job = jobs.lock().unwrap().recv();
        match job {
            Ok(Some(job)) => {
                execute_task(&inner, job);
                inner.busy.fetch_sub(1, Ordering::SeqCst);
            }
            _ => return,
        }
    }
}

enum Finish {
    Exited(Option<i32>),
    Deadline,
    Terminated,
    Aborted,
}

fn exit_text(code: Option<i32>) -> String {
    code.map(|c| c.to_string()).unwrap_or_else(|| "signal".into())
}

/// Runs one task through its whole life cycle: spawn, pin, wait until exit or
/// deadline, restart in exact-duration mode, and report.
fn execute_task(inner: &Arc<Inner>, job: Job) {
    let Job { task, scheduled, epoch } = job;
    let seq = task.seq_num;
    let out_dir = inner.cfg.results_dir.join(seq.to_string());
    let (ctl_tx, ctl_rx) = mpsc::channel();
    inner.state.lock().unwrap().active.insert(seq, ctl_tx.clone());
    let started = Instant::now();
    let deadline = started + Duration::from_secs(task.duration);
    let mut attempt = 1u32;
    let mut cancelled = false;
    loop {
        let spawned_at = Instant::now();
        let mut child = match spawn_task(&task.args, &out_dir) {
            Ok(c) => c,
            Err(e) => {
                inner.broadcast(Event::Error, Some(seq), format!("spawn failed attempt={attempt}: {e}"));
                break;
            }
        };
        let pid = child.id();
        let pin = task.cores.as_deref().map(|cores| (cores, pin_cores(pid, cores)));
        if let Some((cores, PinOutcome::Invalid(reason))) = &pin {
            inner.broadcast(
                Event::Error,
                Some(seq),
                format!("{WARNING_PREFIX} pin failed cores={} running unpinned: {reason}", crate::task::format_core_list(cores)),
            );
        }
        if attempt == 1 {
            let delay_ms = started.saturating_duration_since(scheduled).as_millis();
            let offset_ms = started.saturating_duration_since(epoch).as_millis();
            let pin_text = pin.as_ref().map(|(_, p)| p.describe()).unwrap_or_else(|| "none".into());
            let cores = task.cores.as_deref().map(crate::task::format_core_list).unwrap_or_else(|| "all".into());
            inner.broadcast(
                Event::TaskStart,
                Some(seq),
                format!(
                    "attempt=1 offset_ms={offset_ms} delay_ms={delay_ms} pin={pin_text} cores={cores} fault={} args={}",
                    task.is_fault, task.args
                ),
            );
        }
        let waiter_tx = ctl_tx.clone();
        thread::spawn(move || {
            let code = child.wait().ok().and_then(|s| s.code());
            let _ = waiter_tx.send(Ctl::Exited(code));
        });
        let finish = wait_for_finish(inner, seq, pid, deadline, &ctl_rx, &mut cancelled);
        let runtime_ms = started.elapsed().as_millis();
        match finish {
            Finish::Exited(code) if inner.cfg.exact_duration_mode && !cancelled && Instant::now() < deadline => {
                attempt += 1;
                inner.broadcast(
                    Event::TaskRestart,
                    Some(seq),
                    format!("attempt={attempt} exit={} runtime_ms={runtime_ms}", exit_text(code)),
                );
                let next = spawned_at + MIN_RESTART_GAP;
                if let Some(gap) = next.checked_duration_since(Instant::now()) {
                    thread::sleep(gap.min(deadline.saturating_duration_since(Instant::now())));
                }
                if Instant::now() >= deadline {
                    inner.broadcast(
                        Event::TaskEnd,
                        Some(seq),
                        format!("reason=killed_deadline attempt={attempt} exit=none runtime_ms={}", started.elapsed().as_millis()),
                    );
                    break;
                }
                continue;
            }
            Finish::Exited(code) => {
                let reason = if cancelled { "terminated" } else { "completed" };
                inner.broadcast(
                    Event::TaskEnd,
                    Some(seq),
                    format!("reason={reason} attempt={attempt} exit={} runtime_ms={runtime_ms}", exit_text(code)),
                );
            }
            Finish::Deadline => inner.broadcast(
                Event::TaskEnd,
                Some(seq),
                format!("reason=killed_deadline attempt={attempt} exit=signal runtime_ms={runtime_ms}"),
            ),
            Finish::Terminated => inner.broadcast(
                Event::TaskEnd,
                Some(seq),
                format!("reason=terminated attempt={attempt} exit=signal runtime_ms={runtime_ms}"),
            ),
            Finish::Aborted => {}
        }
        break;
    }
    inner.state.lock().unwrap().active.remove(&seq);
}

fn wait_for_finish(
    inner: &Inner,
    seq: u64,
    pid: u32,
    deadline: Instant,
    ctl: &Receiver<Ctl>,
    cancelled: &mut bool,
) -> Finish {
    let kill = |sig| {
        if let Err(e) = signal_group(pid, sig) {
            inner.broadcast(Event::Error, Some(seq), format!("{WARNING_PREFIX} kill failed: {e}"));
        }
    };
    let wait_exit = |limit: Option<Duration>| -> bool {
        let end = limit.map(|l| Instant::now() + l);
        loop {
            let r = match end {
                Some(e) => ctl.recv_timeout(e.saturating_duration_since(Instant::now())),
                None => ctl.recv().map_err(|_| RecvTimeoutError::Disconnected),
            };
            match r {
                Ok(Ctl::Exited(_)) => return true,
                Ok(_) => continue,
                Err(_) => return false,
            }
        }
    };
    match ctl.recv_timeout(deadline.saturating_duration_since(Instant::now())) {
        Ok(Ctl::Exited(code)) => Finish::Exited(code),
        Ok(Ctl::Terminate) => {
            *cancelled = true;
            kill(libc::SIGTERM);
            if !wait_exit(Some(TERMINATE_GRACE)) {
                kill(libc::SIGKILL);
                wait_exit(None);
            }
            Finish::Terminated
        }
        Ok(Ctl::Abort) => {
            *cancelled = true;
            kill(libc::SIGKILL);
            wait_exit(Some(Duration::from_secs(2)));
            Finish::Aborted
        }
        Err(_) => {
            kill(libc::SIGKILL);
            wait_exit(None);
            Finish::Deadline
        }
    }
}

fn emitter(rx: Receiver<Emit>, mut journal: Journal) {
    let mut conns: HashMap<ConnId, TcpStream> = HashMap::new();
    let mut master: Option<ConnId> = None;
    let mut backlog: VecDeque<Message> = VecDeque::new();

    fn deliver(conns: &mut HashMap<ConnId, TcpStream>, id: ConnId, m: &Message) -> bool {
        let Some(s) = conns.get_mut(&id) else {
            return false;
        };
        if write_message(s, m).is_ok() {
            return true;
        }
        let _ = s.shutdown(Shutdown::Both);
        conns.remove(&id);
        false
    }

    while let Ok(e) = rx.recv() {
        match e {
            Emit::Register(id, s) => {
                conns.insert(id, s);
            }
            Emit::Unregister(id) => {
                conns.remove(&id);
                if master == Some(id) {
                    master = None;
                }
            }
            Emit::AttachMaster(id, greeting) => {
                master = Some(id);
                let mut ok = deliver(&mut conns, id, &greeting);
                while ok {
                    let Some(m) = backlog.pop_front() else { break };
                    if !deliver(&mut conns, id, &m) {
                        backlog.push_front(m);
                        ok = false;
                    }
                }
                if !ok {
                    master = None;
                }
            }
            Emit::Broadcast(m) => {
                if let Some(s) = m.as_status() {
                    if is_terminal(s) {
                        if let Err(err) = journal.append(&Record::Done(s.seq_num.unwrap_or_default()), true) {
                            warn!("journal write failed: {err}");
                        }
                    }
                }
                let ids: Vec<ConnId> = conns.keys().copied().collect();
                let mut master_got_it = false;
                for id in ids {
                    let ok = deliver(&mut conns, id, &m);
                    if Some(id) == master {
                        master_got_it = ok;
                        if !ok {
                            master = None;
                        }
                    }
                }
                if !master_got_it {
                    if backlog.len() >= BACKLOG_BOUND {
                        backlog.pop_front();
                    }
                    backlog.push_back(m);
                }
            }
            Emit::Direct(id, m) => {
                deliver(&mut conns, id, &m);
            }
            Emit::Journal(rec, durable) => {
                if let Err(err) = journal.append(&rec, durable) {
                    warn!("journal write failed: {err}");
                }
            }
            Emit::BeginJournal(id, epoch_ms) => {
                backlog.clear();
                if let Err(err) = journal.begin(id, epoch_ms) {
                    warn!("cannot start journal: {err}");
                }
            }
            Emit::Stop => break,
        }
    }
    for s in conns.values() {
        let _ = s.shutdown(Shutdown::Both);
    }
}

/// Runs an engine until the process is killed.
pub fn run(cfg: EngineConfig) -> io::Result<()> {
    start(cfg)?.wait();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_statuses() {
        let s = |event, seq, detail: &str| Status {
            event,
            seq_num: seq,
            abs_timestamp: 0,
            detail: detail.into(),
        };
        assert!(is_terminal(&s(Event::TaskEnd, Some(1), "reason=completed")));
        assert!(is_terminal(&s(Event::Error, Some(1), "spawn failed")));
        assert!(!is_terminal(&s(Event::Error, Some(1), "warning: pin failed")));
        assert!(!is_terminal(&s(Event::Error, None, "journal")));
        assert!(!is_terminal(&s(Event::TaskStart, Some(1), "")));
    }

    #[test]
    fn detail_fields() {
        let d = "attempt=1 offset_ms=5 pin=none fault=true args=faultlab fault leak --x=1";
        assert_eq!(detail_field(d, "attempt"), Some("1"));
        assert_eq!(detail_field(d, "fault"), Some("true"));
        assert_eq!(detail_field(d, "args"), Some("faultlab fault leak --x=1"));
        assert_eq!(detail_field(d, "x"), None);
        assert_eq!(detail_field("reason=completed exit=0", "reason"), Some("completed"));
        assert_eq!(detail_field("args=a b=c", "b"), None);
    }
}
