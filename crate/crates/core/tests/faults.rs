use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::{Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use faultlab::faults::{run_benchmark, BenchKind, BenchSpec};

const MIB: f64 = (1 << 20) as f64;

// The programs compete for the same machine; run one test at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn exe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_faultlab"))
}

fn spawn_fault(args: &[&str]) -> Child {
    exe().arg("fault").args(args).stdout(Stdio::piped()).stderr(Stdio::null()).spawn().unwrap()
}

fn rss_bytes(pid: u32) -> Option<f64> {
    let status = std::fs::read_to_string(format!("/proc/{pid}/status")).ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024.0)
}

fn report_field(out: &str, key: &str) -> u64 {
    out.split_whitespace()
        .find_map(|w| w.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {out:?}"))
        .parse()
        .unwrap()
}

#[test]
fn leak_grows_resident_memory_steadily() {
    let _guard = serial();
    let child = spawn_fault(&["leak", "--duration", "60"]);
    let pid = child.id();
    let started = Instant::now();
    let mut samples = Vec::new();
    while started.elapsed() < Duration::from_secs(59) {
        if let Some(rss) = rss_bytes(pid) {
            samples.push((started.elapsed().as_secs_f64(), rss));
        }
        thread::sleep(Duration::from_millis(250));
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    // Least-squares slope after start-up.
    let pts: Vec<(f64, f64)> = samples.iter().copied().filter(|&(t, _)| t >= 2.0).collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mr = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mr)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = cov / var / MIB;
    assert!((slope - 16.0).abs() <= 16.0 * 0.2, "RSS grows {slope:.2} MiB/s");
    // Monotone up to one block of jitter.
    for w in samples.windows(2) {
        assert!(w[1].1 >= w[0].1 - 16.0 * MIB, "RSS dropped from {} to {}", w[0].1, w[1].1);
    }
}

fn copy_file_in(dir: &Path) -> Option<u64> {
    std::fs::read_dir(dir)
        .ok()?
        .filter_map(Result::ok)
        .find(|e| e.file_name().to_string_lossy().starts_with("faultlab-copy-"))
        .and_then(|e| e.metadata().ok())
        .map(|m| m.len())
}

#[test]
fn copy_cycle_writes_then_reads_400_mib() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let workdir = dir.path().to_str().unwrap();
    let child = spawn_fault(&["copy", "--duration", "15", "--workdir", workdir]);
    let started = Instant::now();
    let mut largest = 0;
    while started.elapsed() < Duration::from_secs(14) {
        if let Some(len) = copy_file_in(dir.path()) {
            largest = largest.max(len);
        }
        thread::sleep(Duration::from_millis(20));
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(largest, 400 << 20);
    let cycles = report_field(&text, "cycles");
    let bytes = report_field(&text, "bytes");
    assert!(cycles >= 1, "{text}");
    // Every complete cycle moves the file twice.
    assert!(bytes >= (cycles - 1) * (800 << 20), "{text}");
    assert!(copy_file_in(dir.path()).is_none(), "scratch file left behind");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Throughput alone and alongside a fault program, in interleaved pairs.
fn paired(kind: BenchKind, fault: &[&str], workdir: &Path) -> (Vec<f64>, Vec<f64>) {
    let bench = || {
        let mut spec = BenchSpec::new(kind, 1, Duration::from_secs(3));
        spec.workdir = workdir.to_path_buf();
        run_benchmark(&spec).unwrap().throughput
    };
    let mut alone = Vec::new();
    let mut loaded = Vec::new();
    for i in 0..7 {
        for step in 0..2 {
            if (i + step) % 2 == 0 {
                thread::sleep(Duration::from_millis(500));
                alone.push(bench());
            } else {
                let mut child = spawn_fault(fault);
                thread::sleep(Duration::from_secs(1));
                loaded.push(bench());
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
    (alone, loaded)
}

#[test]
fn memeater_slows_memory_benchmark() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let (alone, loaded) = paired(BenchKind::Mem, &["memeater", "--duration", "10"], dir.path());
    let (a, l) = (median(alone.clone()), median(loaded.clone()));
    assert!(l < a, "alone {alone:?} with memeater {loaded:?}");
}

/// Seconds for `units` io benchmark units.
fn io_units(workdir: &Path, units: u64) -> f64 {
    let mut spec = BenchSpec::new(BenchKind::Io, 1, Duration::from_secs(60));
    spec.workdir = workdir.to_path_buf();
    spec.iterations = Some(units);
    run_benchmark(&spec).unwrap().elapsed.as_secs_f64()
}

#[test]
fn copy_slows_io_benchmark() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let scratch = tempfile::tempdir().unwrap();
    let workdir = scratch.path().to_str().unwrap().to_string();
    // Copy is busy for a fraction of each cycle, so time the benchmark from the
    // moment a fresh process creates its file.
    let mut alone = Vec::new();
    let mut loaded = Vec::new();
    for i in 0..9 {
        for step in 0..2 {
            if (i + step) % 2 == 0 {
                thread::sleep(Duration::from_millis(500));
                alone.push(io_units(dir.path(), 3));
            } else {
                let mut child = spawn_fault(&["copy", "--duration", "10", "--workdir", &workdir]);
                let started = Instant::now();
                while copy_file_in(scratch.path()).is_none() {
                    assert!(started.elapsed() < Duration::from_secs(5), "copy never started");
                    thread::sleep(Duration::from_millis(2));
                }
                loaded.push(io_units(dir.path(), 3));
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
    let (a, l) = (median(alone.clone()), median(loaded.clone()));
    assert!(l > a, "seconds alone {alone:?} with copy {loaded:?}");
}
