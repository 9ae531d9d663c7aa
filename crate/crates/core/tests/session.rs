use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use faultlab::clock::{unix_now, unix_now_ms};
use faultlab::config::ToolConfig;
use faultlab::controller::{run_session, ControllerOptions};
use faultlab::engine::{self, detail_field, online_cpus, EngineConfig, Journal, Record};
use faultlab::execlog::{read_log, Event, ExecutionLogEntry};
use faultlab::protocol::{connect_with_retry, write_message, Action, Channel, ChannelOptions, FrameReader, Message, Status};
use faultlab::task::{Task, Workload};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn opts(dir: &std::path::Path) -> ControllerOptions {
    ControllerOptions {
        log_dir: dir.to_path_buf(),
        connect_timeout: Duration::from_secs(5),
        end_grace: Duration::from_secs(10),
        ..Default::default()
    }
}

fn run(cfg: EngineConfig, tasks: Vec<Task>) -> Vec<ExecutionLogEntry> {
    let logs = tempfile::tempdir().unwrap();
    let eng = engine::start(cfg).unwrap();
    let hosts = vec![eng.local_addr().to_string()];
    let summary = run_session(&Workload::new(tasks).unwrap(), &hosts, &ToolConfig::default(), &opts(logs.path())).unwrap();
    eng.shutdown();
    assert!(summary.unfinished.is_empty(), "{summary:?}");
    read_log(&summary.logs[0]).unwrap()
}

fn events(log: &[ExecutionLogEntry], seq: u64) -> Vec<Event> {
    log.iter().filter(|e| e.seq_num == Some(seq)).map(|e| e.event).collect()
}

fn local(dir: &tempfile::TempDir) -> EngineConfig {
    EngineConfig::local(dir.path().join("results"))
}

#[test]
fn sample_workload_runs_to_completion() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = vec![
        Task::new(1, 0, 3, false, "sleep 1"),
        Task::new(2, 1, 3, true, "sleep 1"),
        Task::new(3, 2, 3, false, "sleep 1"),
    ];
    let log = run(local(&dir), tasks);
    assert_eq!(log.first().unwrap().event, Event::SessionStart);
    assert_eq!(log.last().unwrap().event, Event::SessionEnd);
    for seq in 1..=3 {
        assert_eq!(events(&log, seq), vec![Event::TaskStart, Event::TaskEnd], "seq {seq}");
    }
    let end = log.iter().find(|e| e.seq_num == Some(2) && e.event == Event::TaskEnd).unwrap();
    assert_eq!(detail_field(&end.detail, "reason"), Some("completed"));
    assert!(dir.path().join("results/2/stdout.txt").exists());
}

#[test]
fn empty_workload_logs_only_session_events() {
    let dir = tempfile::tempdir().unwrap();
    let log = run(local(&dir), vec![]);
    let ev: Vec<Event> = log.iter().map(|e| e.event).collect();
    assert_eq!(ev, vec![Event::SessionStart, Event::SessionEnd]);
}

#[test]
fn deadline_kill_and_start_offset() {
    let dir = tempfile::tempdir().unwrap();
    let log = run(local(&dir), vec![Task::new(1, 1, 2, true, "sleep 30")]);
    let start = log.iter().find(|e| e.event == Event::TaskStart).unwrap();
    let offset: i64 = detail_field(&start.detail, "offset_ms").unwrap().parse().unwrap();
    assert!((offset - 1000).abs() <= 1000, "offset {offset}");
    let end = log.iter().find(|e| e.event == Event::TaskEnd).unwrap();
    assert_eq!(detail_field(&end.detail, "reason"), Some("killed_deadline"));
    let runtime: i64 = detail_field(&end.detail, "runtime_ms").unwrap().parse().unwrap();
    assert!((runtime - 2000).abs() <= 500, "runtime {runtime}");
}

#[test]
fn exact_mode_restarts_early_exits() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = local(&dir);
    cfg.exact_duration_mode = true;
    let log = run(cfg, vec![Task::new(1, 0, 2, false, "sleep 0.3")]);
    let ev = events(&log, 1);
    assert_eq!(ev.first(), Some(&Event::TaskStart));
    assert_eq!(ev.last(), Some(&Event::TaskEnd));
    assert!(ev.iter().filter(|e| **e == Event::TaskRestart).count() >= 1, "{ev:?}");
    let end = log.iter().find(|e| e.event == Event::TaskEnd).unwrap();
    assert_eq!(detail_field(&end.detail, "reason"), Some("killed_deadline"));
}

#[test]
fn pinning_applied_and_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let last = online_cpus() - 1;
    let log = run(
        local(&dir),
        vec![
            Task::new(1, 0, 2, false, "sleep 0.2").with_cores(vec![last]),
            Task::new(2, 0, 2, false, "sleep 0.2").with_cores(vec![99]),
        ],
    );
    let start1 = log.iter().find(|e| e.seq_num == Some(1) && e.event == Event::TaskStart).unwrap();
    assert_eq!(detail_field(&start1.detail, "pin"), Some("applied"));
    let warn = log.iter().find(|e| e.seq_num == Some(2) && e.event == Event::Error).unwrap();
    assert!(warn.detail.starts_with("warning:"), "{}", warn.detail);
    assert_eq!(events(&log, 2).last(), Some(&Event::TaskEnd));
}

#[test]
fn pool_exhaustion_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = local(&dir);
    cfg.pool_size = 1;
    let log = run(
        cfg,
        vec![Task::new(1, 0, 3, false, "sleep 2"), Task::new(2, 1, 1, false, "sleep 0.1")],
    );
    let err = log.iter().find(|e| e.seq_num == Some(2)).unwrap();
    assert_eq!(err.event, Event::Error);
    assert!(err.detail.starts_with("pool_exhausted"));
}

fn next_status(ch: &Channel, want: Event) -> Status {
    let end = Instant::now() + Duration::from_secs(10);
    while Instant::now() < end {
        if let Some(Message::Status(s)) = ch.recv_timeout(Duration::from_millis(200)).unwrap() {
            if s.event == want {
                return s;
            }
        }
    }
    panic!("no {want} status");
}

fn client(addr: &str, id: u64) -> Channel {
    let o = ChannelOptions {
        hello: Some(Message::greet(id)),
        give_up_after: Some(Duration::from_secs(5)),
        ..Default::default()
    };
    connect_with_retry(addr, o).unwrap()
}

#[test]
fn second_controller_only_observes() {
    let dir = tempfile::tempdir().unwrap();
    let eng = engine::start(local(&dir)).unwrap();
    let addr = eng.local_addr().to_string();
    let master = client(&addr, 1);
    assert!(next_status(&master, Event::SessionStart).detail.contains("role=master"));
    let observer = client(&addr, 2);
    assert!(next_status(&observer, Event::SessionStart).detail.contains("role=observer"));
    observer.send(Message::start_task(Task::new(5, 0, 1, false, "true")));
    let rejected = next_status(&observer, Event::Error);
    assert!(rejected.detail.starts_with("not_master"));
    assert_eq!(rejected.seq_num, Some(5));

    master.send(Message::start_task(Task::new(1, 0, 1, false, "true")));
    assert_eq!(next_status(&observer, Event::TaskStart).seq_num, Some(1));
    assert_eq!(next_status(&master, Event::TaskEnd).seq_num, Some(1));
    master.send(Message::end_session());
    next_status(&master, Event::SessionEnd);
    master.close();
    observer.close();
    eng.shutdown();
}

#[test]
fn terminate_task_sends_term_then_reports() {
    let dir = tempfile::tempdir().unwrap();
    let eng = engine::start(local(&dir)).unwrap();
    let master = client(&eng.local_addr().to_string(), 9);
    next_status(&master, Event::SessionStart);
    let t = Task::new(1, 0, 60, false, "sleep 60");
    master.send(Message::start_task(t.clone()));
    next_status(&master, Event::TaskStart);
    let sent = Instant::now();
    master.send(Message::terminate_task(t));
    let end = next_status(&master, Event::TaskEnd);
    assert_eq!(detail_field(&end.detail, "reason"), Some("terminated"));
    assert!(sent.elapsed() < Duration::from_secs(3));
    master.close();
    eng.shutdown();
}

#[test]
fn master_reconnect_with_same_id_gets_backlog() {
    let dir = tempfile::tempdir().unwrap();
    let eng = engine::start(local(&dir)).unwrap();
    let addr = eng.local_addr().to_string();
    let master = client(&addr, 4);
    next_status(&master, Event::SessionStart);
    master.send(Message::start_task(Task::new(1, 0, 1, false, "sleep 0.2")));
    std::thread::sleep(Duration::from_millis(300));
    master.close();
    std::thread::sleep(Duration::from_secs(3));
    let again = client(&addr, 4);
    assert!(next_status(&again, Event::SessionStart).detail.contains("role=master"));
    assert_eq!(next_status(&again, Event::TaskStart).seq_num, Some(1));
    assert_eq!(next_status(&again, Event::TaskEnd).seq_num, Some(1));
    again.close();
    eng.shutdown();
}

#[test]
fn unreachable_hosts_abort_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = opts(dir.path());
    o.connect_timeout = Duration::from_millis(500);
    let err = run_session(&Workload::empty(), &["127.0.0.1:1".to_string()], &ToolConfig::default(), &o).unwrap_err();
    assert!(err.to_string().contains("127.0.0.1:1"));
}

fn journal_with(dir: &std::path::Path, id: u64, epoch_ms: i64, tasks: &[Task], done: &[u64]) {
    let mut j = Journal::new(dir);
    j.begin(id, epoch_ms).unwrap();
    for t in tasks {
        j.append(&Record::Accept(t.clone()), false).unwrap();
    }
    for &seq in done {
        j.append(&Record::Done(seq), false).unwrap();
    }
}

/// Statuses received within `window`, collected until `until` shows up.
fn collect_until(ch: &Channel, until: Event, window: Duration) -> Vec<Status> {
    let end = Instant::now() + window;
    let mut out = Vec::new();
    while Instant::now() < end {
        if let Some(Message::Status(s)) = ch.recv_timeout(Duration::from_millis(100)).unwrap() {
            let stop = s.event == until;
            out.push(s);
            if stop {
                break;
            }
        }
    }
    out
}

#[test]
fn journal_with_only_completed_tasks_resumes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results");
    let tasks = [Task::new(1, 0, 2, false, "sleep 1"), Task::new(2, 1, 2, true, "sleep 1")];
    journal_with(&results, 42, unix_now_ms() - 20_000, &tasks, &[1, 2]);
    let eng = engine::start(EngineConfig::local(&results)).unwrap();
    let master = client(&eng.local_addr().to_string(), 42);
    let start = next_status(&master, Event::SessionStart);
    assert!(start.detail.contains("role=master"), "{}", start.detail);
    assert!(start.detail.contains("recovered=true"), "{}", start.detail);
    assert!(start.detail.contains("resumed=0"), "{}", start.detail);
    let later = collect_until(&master, Event::SessionEnd, Duration::from_secs(2));
    assert!(later.is_empty(), "{later:?}");
    master.send(Message::end_session());
    next_status(&master, Event::SessionEnd);
    master.close();
    eng.shutdown();
}

#[test]
fn journal_resumes_future_tasks_and_flags_missed_ones() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results");
    let epoch_ms = unix_now_ms() - 10_000;
    let tasks = [
        Task::new(1, 0, 30, false, "sleep 30"),
        Task::new(2, 5, 2, false, "sleep 1"),
        Task::new(3, 15, 2, true, "sleep 1"),
    ];
    journal_with(&results, 7, epoch_ms, &tasks, &[2]);
    let eng = engine::start(EngineConfig::local(&results)).unwrap();
    let master = client(&eng.local_addr().to_string(), 7);
    let start = next_status(&master, Event::SessionStart);
    assert!(start.detail.contains("recovered=true") && start.detail.contains("resumed=1"), "{}", start.detail);
    let seen = collect_until(&master, Event::TaskEnd, Duration::from_secs(15));
    let missed = seen.iter().find(|s| s.event == Event::Error && s.seq_num == Some(1)).expect("missed task reported");
    assert!(missed.detail.contains("interrupted by engine restart"));
    let started = seen.iter().find(|s| s.event == Event::TaskStart).expect("task 3 started");
    assert_eq!(started.seq_num, Some(3));
    let offset: i64 = detail_field(&started.detail, "offset_ms").unwrap().parse().unwrap();
    assert!((offset - 15_000).abs() <= 1000, "offset {offset}");
    assert!((started.abs_timestamp * 1000 - (epoch_ms + 15_000)).abs() <= 2000);
    let end = seen.last().unwrap();
    assert_eq!((end.event, end.seq_num), (Event::TaskEnd, Some(3)));
    assert!(!seen.iter().any(|s| s.seq_num == Some(2)));
    master.send(Message::end_session());
    next_status(&master, Event::SessionEnd);
    master.close();
    eng.shutdown();
}

/// Stands in for an engine: acknowledges the greeting, waits for every task
/// and then answers with a scripted status stream.
fn scripted_engine(listener: TcpListener, n_tasks: usize, script: Vec<Message>) -> thread::JoinHandle<()> {
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut writer = stream.try_clone().unwrap();
        let mut reader = FrameReader::new(stream);
        let mut tasks = 0;
        while let Ok(Some(m)) = reader.read_message() {
            match m {
                Message::Command(c) if c.action == Action::Greet => {
                    let hello = Message::status(Event::SessionStart, None, unix_now(), "session=1 role=master");
                    write_message(&mut writer, &hello).unwrap();
                }
                Message::Command(c) if c.action == Action::StartTask => {
                    tasks += 1;
                    if tasks == n_tasks {
                        for s in &script {
                            write_message(&mut writer, s).unwrap();
                        }
                    }
                }
                Message::Command(c) if c.action == Action::EndSession => {
                    let bye = Message::status(Event::SessionEnd, None, unix_now(), "");
                    write_message(&mut writer, &bye).unwrap();
                    return;
                }
                _ => {}
            }
        }
    })
}

#[test]
fn controller_logs_every_status_in_arrival_order() {
    let n = 5000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ends: Vec<u64> = (1..=n).collect();
    ends.shuffle(&mut rng);
    let t0 = unix_now();
    let mut script = Vec::new();
    for seq in (1..=n).rev() {
        let k = script.len();
        script.push(Message::status(Event::TaskStart, Some(seq), t0 + (k as i64 % 7), format!("attempt=1 n={k}")));
    }
    for &seq in &ends {
        let k = script.len();
        let detail = format!("reason=completed runtime_ms={} n={k} note=a;b\\c", rng.random_range(0..9999));
        script.push(Message::status(Event::TaskEnd, Some(seq), t0 + (k as i64 % 5), detail));
    }
    let emitted: Vec<Status> = script.iter().map(|m| m.as_status().unwrap().clone()).collect();

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let fake = scripted_engine(listener, n as usize, script);
    let logs = tempfile::tempdir().unwrap();
    let tasks: Vec<Task> = (1..=n).map(|s| Task::new(s, 0, 60, false, "sleep 60")).collect();
    let summary = run_session(&Workload::new(tasks).unwrap(), &[addr], &ToolConfig::default(), &opts(logs.path())).unwrap();
    fake.join().unwrap();
    assert!(summary.unfinished.is_empty());

    let logged: Vec<Status> = read_log(&summary.logs[0])
        .unwrap()
        .into_iter()
        .filter(|e| e.seq_num.is_some())
        .map(|e| Status {
            event: e.event,
            seq_num: e.seq_num,
            abs_timestamp: e.abs_timestamp,
            detail: e.detail,
        })
        .collect();
    assert_eq!(logged.len(), emitted.len());
    // Same multiset and, stronger, the same order.
    let key = |s: &Status| (s.seq_num, s.event.as_str(), s.abs_timestamp, s.detail.clone());
    let mut a: Vec<_> = logged.iter().map(key).collect();
    let mut b: Vec<_> = emitted.iter().map(key).collect();
    assert!(a == b, "log order differs from arrival order");
    a.sort();
    b.sort();
    assert_eq!(a, b);
}
