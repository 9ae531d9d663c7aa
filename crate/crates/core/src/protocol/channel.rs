//! Client side of the controller/engine link with transparent reconnection.
//!
//! A supervisor thread owns the socket. Outbound messages go through a
//! bounded queue (oldest dropped when full) so nothing blocks while the peer
//! is unreachable; after a reconnect the optional hello message is sent first
//! and then the queue flushes in its original order. Connection loss and
//! recovery surface on the inbound side as locally generated
//! `connection_lost` / `connection_restored` statuses.

use std::collections::VecDeque;
use std::io::BufReader;
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};
use thiserror::Error;

use super::frame::{write_message, FrameReader};
use super::Message;
use crate::clock::unix_now;
use crate::execlog::Event;

pub const DEFAULT_QUEUE_BOUND: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("could not reach {addr} within {waited:?}")]
    GaveUp { addr: String, waited: Duration },
    #[error("bad address {0:?}")]
    BadAddress(String),
    #[error("channel closed")]
    Closed,
}

#[derive(Debug, Clone)]
pub struct ChannelOptions {
    pub retry_interval: Duration,
    /// Give up after this long without a connection; `None` retries forever.
    pub give_up_after: Option<Duration>,
    /// Limit for the very first connection; falls back to `give_up_after`.
    pub initial_timeout: Option<Duration>,
    pub queue_bound: usize,
    /// Sent first on every (re)connection, ahead of queued traffic.
    pub hello: Option<Message>,
}

impl Default for ChannelOptions {
    fn default() -> Self {
        ChannelOptions {
            retry_interval: Duration::from_secs(1),
            give_up_after: None,
            initial_timeout: None,
            queue_bound: DEFAULT_QUEUE_BOUND,
            hello: None,
        }
    }
}

#[derive(Default)]
struct State {
    queue: VecDeque<Message>,
    dropped: u64,
    lost: bool,
    closed: bool,
}

struct Shared {
    state: Mutex<State>,
    cond: Condvar,
}

impl Shared {
    fn mark_lost(&self) {
        self.state.lock().unwrap().lost = true;
        self.cond.notify_all();
    }
}

/// Outbound half. Not `Clone`: one writer per channel.
pub struct ChannelSender {
    shared: Arc<Shared>,
    bound: usize,
}

impl ChannelSender {
    /// Queues a message; never blocks. Returns `false` if an older message had
    /// to be dropped to make room.
    pub fn send(&self, m: Message) -> bool {
        let mut st = self.shared.state.lock().unwrap();
        let mut kept_all = true;
        while st.queue.len() >= self.bound {
            st.queue.pop_front();
            st.dropped += 1;
            kept_all = false;
        }
        st.queue.push_back(m);
        drop(st);
        self.shared.cond.notify_all();
        kept_all
    }

    pub fn dropped(&self) -> u64 {
        self.shared.state.lock().unwrap().dropped
    }

    pub fn queued(&self) -> usize {
        self.shared.state.lock().unwrap().queue.len()
    }
}

/// Inbound half: only whole messages are ever delivered.
pub struct ChannelReceiver {
    inbound: Receiver<Result<Message, ChannelError>>,
}

impl ChannelReceiver {
    pub fn recv(&self) -> Result<Message, ChannelError> {
        self.inbound.recv().unwrap_or(Err(ChannelError::Closed))
    }

    /// `Ok(None)` on timeout.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Message>, ChannelError> {
        match self.inbound.recv_timeout(timeout) {
            Ok(r) => r.map(Some),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(ChannelError::Closed),
        }
    }
}

pub struct Channel {
    addr: String,
    sender: ChannelSender,
    receiver: ChannelReceiver,
    closer: ChannelCloser,
}

impl Channel {
    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn send(&self, m: Message) -> bool {
        self.sender.send(m)
    }

    pub fn recv(&self) -> Result<Message, ChannelError> {
        self.receiver.recv()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Message>, ChannelError> {
        self.receiver.recv_timeout(timeout)
    }

    /// Splits into independently owned halves plus a closer.
    pub fn split(self) -> (ChannelSender, ChannelReceiver, ChannelCloser) {
        (self.sender, self.receiver, self.closer)
    }

    /// Flushes what is queued (best effort) and shuts the connection down.
    pub fn close(self) {
        self.closer.close();
    }
}

pub struct ChannelCloser {
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

impl ChannelCloser {
    pub fn close(mut self) {
        close_shared(&self.shared, self.handle.take());
    }
}

impl Drop for ChannelCloser {
    fn drop(&mut self) {
        if let Some(h) = self.handle.take() {
            close_shared(&self.shared, Some(h));
        }
    }
}

fn close_shared(shared: &Shared, handle: Option<JoinHandle<()>>) {
    shared.state.lock().unwrap().closed = true;
    shared.cond.notify_all();
    if let Some(h) = handle {
        let _ = h.join();
    }
}

fn try_connect(addr: &str, timeout: Duration) -> Result<TcpStream, std::io::Error> {
    let mut last = std::io::Error::new(std::io::ErrorKind::NotFound, "address resolved to nothing");
    for sa in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&sa, timeout) {
            Ok(s) => {
                let _ = s.set_nodelay(true);
                return Ok(s);
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Keeps trying until connected, closed, or past the give-up deadline.
fn connect_loop(addr: &str, opts: &ChannelOptions, shared: Option<&Shared>) -> Result<TcpStream, ChannelError> {
    let started = Instant::now();
    loop {
        if let Some(sh) = shared {
            if sh.state.lock().unwrap().closed {
                return Err(ChannelError::Closed);
            }
        }
        let attempt_timeout = opts.retry_interval.max(Duration::from_millis(200));
        match try_connect(addr, attempt_timeout) {
            Ok(s) => return Ok(s),
            Err(e) => debug!("connect {addr}: {e}"),
        }
        let waited = started.elapsed();
        if let Some(limit) = opts.give_up_after {
            if waited >= limit {
                return Err(ChannelError::GaveUp {
                    addr: addr.to_string(),
                    waited,
                });
            }
        }
        let mut pause = opts.retry_interval;
        if let Some(limit) = opts.give_up_after {
            pause = pause.min(limit.saturating_sub(waited));
        }
        match shared {
            Some(sh) => {
                let st = sh.state.lock().unwrap();
                let _ = sh.cond.wait_timeout_while(st, pause, |s| !s.closed).unwrap();
            }
            None => thread::sleep(pause),
        }
    }
}

/// Connects to `addr`, blocking until the first connection succeeds or
/// `give_up_after` elapses, and returns a self-healing channel.
pub fn connect_with_retry(addr: &str, opts: ChannelOptions) -> Result<Channel, ChannelError> {
    if addr.to_socket_addrs().is_err() && !addr.contains(':') {
        return Err(ChannelError::BadAddress(addr.to_string()));
    }
    let first = ChannelOptions {
        give_up_after: opts.initial_timeout.or(opts.give_up_after),
        ..opts.clone()
    };
    let stream = connect_loop(addr, &first, None)?;
    let shared = Arc::new(Shared {
        state: Mutex::new(State::default()),
        cond: Condvar::new(),
    });
    let (tx, rx) = mpsc::channel();
    let bound = opts.queue_bound.max(1);
    let sup_shared = shared.clone();
    let sup_addr = addr.to_string();
    let handle = thread::Builder::new()
        .name(format!("chan-{addr}"))
        .spawn(move || supervise(sup_addr, opts, sup_shared, stream, tx))
        .expect("spawn channel supervisor");
    Ok(Channel {
        addr: addr.to_string(),
        sender: ChannelSender {
            shared: shared.clone(),
            bound,
        },
        receiver: ChannelReceiver { inbound: rx },
        closer: ChannelCloser {
            shared,
            handle: Some(handle),
        },
    })
}

fn local_status(event: Event, addr: &str) -> Message {
    Message::status(event, None, unix_now(), addr.to_string())
}

enum Outcome {
    Lost,
    Closed,
}

fn supervise(
    addr: String,
    opts: ChannelOptions,
    shared: Arc<Shared>,
    mut stream: TcpStream,
    tx: Sender<Result<Message, ChannelError>>,
) {
    loop {
        shared.state.lock().unwrap().lost = false;
        let reader = spawn_reader(&stream, shared.clone(), tx.clone());
        let outcome = pump(&opts, &shared, &mut stream);
        let _ = stream.shutdown(Shutdown::Both);
        if let Some(r) = reader {
            let _ = r.join();
        }
        if let Outcome::Closed = outcome {
            return;
        }
        if shared.state.lock().unwrap().closed {
            return;
        }
        warn!("connection to {addr} lost");
        let _ = tx.send(Ok(local_status(Event::ConnectionLost, &addr)));
        match connect_loop(&addr, &opts, Some(&shared)) {
            Ok(s) => {
                stream = s;
                let _ = tx.send(Ok(local_status(Event::ConnectionRestored, &addr)));
            }
            Err(ChannelError::Closed) => return,
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        }
    }
}

fn spawn_reader(stream: &TcpStream, shared: Arc<Shared>, tx: Sender<Result<Message, ChannelError>>) -> Option<JoinHandle<()>> {
    let clone = match stream.try_clone() {
        Ok(c) => c,
        Err(_) => {
            shared.mark_lost();
            return None;
        }
    };
    Some(thread::spawn(move || {
        let mut reader = FrameReader::new(BufReader::new(clone));
        loop {
            match reader.read_message() {
                Ok(Some(m)) => {
                    if tx.send(Ok(m)).is_err() {
                        break;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    debug!("read: {e}");
                    break;
                }
            }
        }
        shared.mark_lost();
    }))
}

/// Writes queued messages until the connection is lost or the channel closed.
fn pump(opts: &ChannelOptions, shared: &Shared, stream: &mut TcpStream) -> Outcome {
    if let Some(hello) = &opts.hello {
        if write_message(stream, hello).is_err() {
            return Outcome::Lost;
        }
    }
    loop {
        let mut st = shared.state.lock().unwrap();
        while st.queue.is_empty() && !st.lost && !st.closed {
            st = shared.cond.wait(st).unwrap();
        }
        if st.lost {
            return Outcome::Lost;
        }
        let Some(m) = st.queue.pop_front() else {
            // closed with nothing left to flush
            return Outcome::Closed;
        };
        drop(st);
        if write_message(stream, &m).is_err() {
            shared.state.lock().unwrap().queue.push_front(m);
            return Outcome::Lost;
        }
    }
}
