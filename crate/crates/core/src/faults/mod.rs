//! Fault-triggering programs, run as ordinary tasks.
//!
//! Every program runs for its duration and exits 0. `cpufreq`, `pagefail`
//! and `ioerr` are simulated inside the process unless real mode is
//! explicitly unlocked; real mode drives the kernel knobs and needs root.

mod bench;

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::hint::black_box;
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use bench::{run_benchmark, BenchKind, BenchReport, BenchSpec};

const MB: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum FaultError {
    #[error("unknown program {0:?}")]
    Unknown(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("real mode needs both --real and --i-have-root and must run as root")]
    RealModeRefused,
    #[error("not enough disk space in {dir}: need {need} bytes, have {have}")]
    DiskSpace { dir: PathBuf, need: u64, have: u64 },
    #[error("{0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultKind {
    Leak,
    Memeater,
    Ddot,
    Dial,
    Cpufreq,
    Pagefail,
    Ioerr,
    Copy,
}

impl FaultKind {
    pub const ALL: [FaultKind; 8] = [
        FaultKind::Leak,
        FaultKind::Memeater,
        FaultKind::Ddot,
        FaultKind::Dial,
        FaultKind::Cpufreq,
        FaultKind::Pagefail,
        FaultKind::Ioerr,
        FaultKind::Copy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FaultKind::Leak => "leak",
            FaultKind::Memeater => "memeater",
            FaultKind::Ddot => "ddot",
            FaultKind::Dial => "dial",
            FaultKind::Cpufreq => "cpufreq",
            FaultKind::Pagefail => "pagefail",
            FaultKind::Ioerr => "ioerr",
            FaultKind::Copy => "copy",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaultKind {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| FaultError::Unknown(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intensity {
    Normal,
    Low,
}

/// Per-program knobs. [`FaultParams::new`] gives the normal-intensity values
/// with the dominant knob of each program halved in low mode.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultParams {
    pub leak_block: usize,
    pub leak_period: Duration,
    pub memeater_step: usize,
    pub memeater_period: Duration,
    /// Last-level cache size used to size ddot's matrices.
    pub cache_bytes: usize,
    /// Matrix size multipliers of the cache size, cycled.
    pub ddot_factors: Vec<f64>,
    pub ddot_phase: Duration,
    /// Share of each 10 ms slice dial spends computing.
    pub dial_duty: f64,
    /// Fraction by which cpufreq lowers the frequency cap.
    pub cpufreq_cut: f64,
    pub pagefail_probability: f64,
    pub pagefail_chunk: usize,
    pub ioerr_interval: u64,
    pub ioerr_probability: f64,
    pub copy_bytes: usize,
    pub copy_sleep: Duration,
    /// Upper bound on memory held by leak and memeater.
    pub memory_cap: usize,
}

impl FaultParams {
    pub fn new(intensity: Intensity) -> Self {
        let mut p = FaultParams {
            leak_block: 16 * MB,
            leak_period: Duration::from_secs(1),
            memeater_step: 36 * MB,
            memeater_period: Duration::from_secs(2),
            cache_bytes: detect_cache_bytes(),
            ddot_factors: vec![0.9, 5.0, 10.0],
            ddot_phase: Duration::from_secs(5),
            dial_duty: 1.0,
            cpufreq_cut: 0.5,
            pagefail_probability: 0.5,
            pagefail_chunk: 4 * MB,
            ioerr_interval: 500,
            ioerr_probability: 0.2,
            copy_bytes: 400 * MB,
            copy_sleep: Duration::from_secs(2),
            memory_cap: physical_memory() / 2,
        };
        if intensity == Intensity::Low {
            p.leak_block /= 2;
            p.memeater_step /= 2;
            p.cache_bytes /= 2;
            p.dial_duty /= 2.0;
            p.cpufreq_cut /= 2.0;
            p.pagefail_probability /= 2.0;
            p.ioerr_probability /= 2.0;
            p.copy_bytes /= 2;
        }
        p
    }

    pub fn validate(&self) -> Result<(), FaultError> {
        for (name, v) in [
            ("dial_duty", self.dial_duty),
            ("cpufreq_cut", self.cpufreq_cut),
            ("pagefail_probability", self.pagefail_probability),
            ("ioerr_probability", self.ioerr_probability),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(FaultError::Param(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("leak_block", self.leak_block),
            ("memeater_step", self.memeater_step),
            ("cache_bytes", self.cache_bytes),
            ("pagefail_chunk", self.pagefail_chunk),
            ("copy_bytes", self.copy_bytes),
        ] {
            if v == 0 {
                return Err(FaultError::Param(format!("{name} must be positive")));
            }
        }
        if self.ioerr_interval == 0 {
            return Err(FaultError::Param("ioerr_interval must be positive".into()));
        }
        if self.ddot_factors.is_empty() || self.ddot_factors.iter().any(|f| *f <= 0.0) {
            return Err(FaultError::Param("ddot factors must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FaultProgramSpec {
    pub kind: FaultKind,
    pub intensity: Intensity,
    pub duration: Duration,
    pub params: FaultParams,
    /// Scratch directory for file-based programs.
    pub workdir: PathBuf,
    /// File receiving simulated state (cpufreq's cap) for telemetry.
    pub side_channel: Option<PathBuf>,
    pub real: bool,
    pub i_have_root: bool,
    pub seed: u64,
}

impl FaultProgramSpec {
    pub fn new(kind: FaultKind, intensity: Intensity, duration: Duration) -> Self {
        FaultProgramSpec {
            kind,
            intensity,
            duration,
            params: FaultParams::new(intensity),
            workdir: std::env::temp_dir(),
            side_channel: None,
            real: false,
            i_have_root: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultReport {
    pub program: String,
    pub elapsed: Duration,
    pub cycles: u64,
    pub bytes: u64,
    pub ops: u64,
    pub failed_ops: u64,
}

impl fmt::Display for FaultReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "program={} elapsed_ms={} cycles={} bytes={} ops={} failed_ops={}",
            self.program,
            self.elapsed.as_millis(),
            self.cycles,
            self.bytes,
            self.ops,
            self.failed_ops
        )
    }
}

/// Largest cache reported by sysfs, or 20 MB.
pub fn detect_cache_bytes() -> usize {
    let mut best = 0;
    if let Ok(dir) = fs::read_dir("/sys/devices/system/cpu/cpu0/cache") {
        for e in dir.flatten() {
            if let Ok(s) = fs::read_to_string(e.path().join("size")) {
                if let Some(v) = parse_size(s.trim()) {
                    best = best.max(v);
                }
            }
        }
    }
    if best == 0 {
        20 * MB
    } else {
        best
    }
}

fn parse_size(s: &str) -> Option<usize> {
    let (num, mult) = match s.chars().last()? {
        'K' => (&s[..s.len() - 1], 1 << 10),
        'M' => (&s[..s.len() - 1], 1 << 20),
        'G' => (&s[..s.len() - 1], 1 << 30),
        _ => (s, 1),
    };
    num.parse::<usize>().ok().map(|n| n * mult)
}

fn physical_memory() -> usize {
    let pages = unsafe { libc::sysconf(libc::_SC_PHYS_PAGES) };
    let size = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if pages > 0 && size > 0 {
        pages as usize * size as usize
    } else {
        4 << 30
    }
}

/// Bytes available to unprivileged users on the filesystem holding `dir`.
pub fn available_space(dir: &Path) -> io::Result<u64> {
    use std::os::unix::ffi::OsStrExt;
    let c = std::ffi::CString::new(dir.as_os_str().as_bytes()).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    let mut st: libc::statvfs = unsafe { std::mem::zeroed() };
    if unsafe { libc::statvfs(c.as_ptr(), &mut st) } != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(st.f_bavail as u64 * st.f_frsize as u64)
}

/// Decides which wrapped operations fail: every `interval`-th operation is
/// eligible and fails with `probability`.
#[derive(Debug, Clone)]
pub struct FailureGate {
    interval: u64,
    probability: f64,
    count: u64,
    rng: ChaCha8Rng,
}

impl FailureGate {
    pub fn new(interval: u64, probability: f64, seed: u64) -> Self {
        FailureGate {
            interval: interval.max(1),
            probability,
            count: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn should_fail(&mut self) -> bool {
        self.count += 1;
        self.count % self.interval == 0 && self.rng.random::<f64>() < self.probability
    }
}

/// Allocates `n` bytes and touches every page so they become resident.
fn resident_block(n: usize) -> Vec<u8> {
    let mut v = vec![0u8; n];
    for i in (0..n).step_by(4096) {
        v[i] = 1;
    }
    v
}

static STOP: AtomicBool = AtomicBool::new(false);

/// Makes running programs wind down at their next check. Safe to call from
/// a signal handler.
pub fn request_stop() {
    STOP.store(true, Ordering::SeqCst);
}

pub fn stop_requested() -> bool {
    STOP.load(Ordering::SeqCst)
}

fn running(deadline: Instant) -> bool {
    !stop_requested() && Instant::now() < deadline
}

fn sleep_until(t: Instant) {
    while let Some(d) = t.checked_duration_since(Instant::now()) {
        if stop_requested() {
            return;
        }
        thread::sleep(d.min(Duration::from_millis(100)));
    }
}

pub fn run_fault_program(spec: &FaultProgramSpec) -> Result<FaultReport, FaultError> {
    spec.params.validate()?;
    if spec.real && !(spec.i_have_root && unsafe { libc::geteuid() } == 0) {
        return Err(FaultError::RealModeRefused);
    }
    let started = Instant::now();
    let deadline = started + spec.duration;
    let p = &spec.params;
    let mut r = FaultReport {
        program: spec.kind.name().to_string(),
        ..Default::default()
    };
    match spec.kind {
        FaultKind::Leak => leak(p, deadline, &mut r),
        FaultKind::Memeater => memeater(p, deadline, &mut r),
        FaultKind::Ddot => ddot(p, deadline, &mut r),
        FaultKind::Dial => dial(p, spec.seed, deadline, &mut r),
        FaultKind::Cpufreq if spec.real => real::cpufreq(p, deadline, &mut r)?,
        FaultKind::Cpufreq => cpufreq(p, spec.side_channel.as_deref(), deadline, &mut r)?,
        FaultKind::Pagefail if spec.real => real::pagefail(p, deadline, &mut r)?,
        FaultKind::Pagefail => pagefail(p, spec.seed, deadline, &mut r),
        FaultKind::Ioerr if spec.real => real::ioerr(p, deadline, &mut r)?,
        FaultKind::Ioerr => ioerr(p, spec.seed, &spec.workdir, deadline, &mut r)?,
        FaultKind::Copy => copy(p, &spec.workdir, deadline, &mut r)?,
    }
    r.elapsed = started.elapsed();
    Ok(r)
}

fn leak(p: &FaultParams, deadline: Instant, r: &mut FaultReport) {
    let mut held: Vec<Vec<u8>> = Vec::new();
    let mut next = Instant::now();
    while running(deadline) {
        if (r.bytes as usize) + p.leak_block <= p.memory_cap {
            held.push(resident_block(p.leak_block));
            r.bytes += p.leak_block as u64;
            r.cycles += 1;
        }
        next += p.leak_period;
        sleep_until(next.min(deadline));
    }
    black_box(&held);
}

fn memeater(p: &FaultParams, deadline: Instant, r: &mut FaultReport) {
    let mut arr: Vec<u8> = Vec::new();
    let mut next = Instant::now();
    let mut fill = 0u8;
    while running(deadline) {
        if arr.len() + p.memeater_step <= p.memory_cap {
            arr.resize(arr.len() + p.memeater_step, 0);
        }
        fill = fill.wrapping_add(1);
        for i in (0..arr.len()).step_by(64) {
            arr[i] = fill;
        }
        r.bytes = arr.len() as u64;
        r.cycles += 1;
        next += p.memeater_period;
        while running(next.min(deadline)) {
            // keep writing into the array until the next expansion
            for i in (0..arr.len()).step_by(4096) {
                arr[i] = arr[i].wrapping_add(1);
            }
            thread::sleep(Duration::from_millis(100));
        }
    }
    black_box(&arr);
}

fn ddot(p: &FaultParams, deadline: Instant, r: &mut FaultReport) {
    let mut phase = 0;
    while running(deadline) {
        let bytes = (p.cache_bytes as f64 * p.ddot_factors[phase % p.ddot_factors.len()]) as usize;
        let n = (bytes / 8).max(1);
        let a: Vec<f64> = (0..n).map(|i| (i % 97) as f64 * 0.5).collect();
        let b: Vec<f64> = (0..n).map(|i| (i % 89) as f64 * 0.25).collect();
        let phase_end = (Instant::now() + p.ddot_phase).min(deadline);
        while running(phase_end) {
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            black_box(dot);
            r.ops += 1;
        }
        r.bytes = r.bytes.max(2 * bytes as u64);
        r.cycles += 1;
        phase += 1;
    }
}

fn dial(p: &FaultParams, seed: u64, deadline: Instant, r: &mut FaultReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slice = Duration::from_millis(10);
    let mut acc = 0.0f64;
    while running(deadline) {
        let slice_start = Instant::now();
        let busy = slice.mul_f64(p.dial_duty);
        while slice_start.elapsed() < busy {
            for _ in 0..256 {
                let x: f64 = rng.random();
                acc += (x * 3.7).sin() * x.sqrt() / (1.0 + x);
            }
            r.ops += 256;
        }
        sleep_until((slice_start + slice).min(deadline));
        r.cycles += 1;
    }
    black_box(acc);
}

fn write_side_channel(path: Option<&Path>, cap: f64) -> io::Result<()> {
    if let Some(p) = path {
        fs::write(p, format!("cpufreq_cap={cap}\n"))?;
    }
    Ok(())
}

/// Emulates a lowered frequency cap by idling `cut` of every 10 ms slice of
/// an otherwise busy loop.
fn cpufreq(p: &FaultParams, side: Option<&Path>, deadline: Instant, r: &mut FaultReport) -> io::Result<()> {
    write_side_channel(side, 1.0 - p.cpufreq_cut)?;
    let slice = Duration::from_millis(10);
    let busy = slice.mul_f64(1.0 - p.cpufreq_cut);
    let mut acc = 1u64;
    while running(deadline) {
        let s = Instant::now();
        while s.elapsed() < busy {
            for i in 0..1024u64 {
                acc = acc.wrapping_mul(6364136223846793005).wrapping_add(i);
            }
            r.ops += 1024;
        }
        sleep_until((s + slice).min(deadline));
        r.cycles += 1;
    }
    black_box(acc);
    write_side_channel(side, 1.0)
}

/// Allocation churn in which each request fails with the configured
/// probability and the caller backs off before retrying.
fn pagefail(p: &FaultParams, seed: u64, deadline: Instant, r: &mut FaultReport) {
    let mut gate = FailureGate::new(1, p.pagefail_probability, seed);
    let mut pool: Vec<Vec<u8>> = Vec::new();
    let limit = 16;
    while running(deadline) {
        r.ops += 1;
        if gate.should_fail() {
            r.failed_ops += 1;
            thread::sleep(Duration::from_millis(5));
            continue;
        }
        pool.push(resident_block(p.pagefail_chunk));
        r.bytes += p.pagefail_chunk as u64;
        if pool.len() >= limit {
            pool.clear();
            r.cycles += 1;
        }
        thread::sleep(Duration::from_millis(1));
    }
    black_box(&pool);
}

fn ioerr(p: &FaultParams, seed: u64, dir: &Path, deadline: Instant, r: &mut FaultReport) -> io::Result<()> {
    let mut gate = FailureGate::new(p.ioerr_interval, p.ioerr_probability, seed);
    let path = dir.join(format!("faultlab-ioerr-{}.dat", std::process::id()));
    let mut f = OpenOptions::new().create(true).truncate(true).read(true).write(true).open(&path)?;
    let block = vec![0x5au8; 64 * 1024];
    let mut rbuf = vec![0u8; block.len()];
    let span = 256u64;
    let result = (|| -> io::Result<()> {
        while running(deadline) {
            let slot = r.ops % span;
            r.ops += 1;
            if gate.should_fail() {
                r.failed_ops += 1;
                continue;
            }
            f.seek(SeekFrom::Start(slot * block.len() as u64))?;
            if r.ops % 2 == 0 {
                f.write_all(&block)?;
                r.bytes += block.len() as u64;
            } else {
                let n = f.read(&mut rbuf)?;
                r.bytes += n as u64;
            }
            if slot == span - 1 {
                f.sync_data()?;
                r.cycles += 1;
            }
        }
        Ok(())
    })();
    let _ = fs::remove_file(&path);
    result
}

fn copy(p: &FaultParams, dir: &Path, deadline: Instant, r: &mut FaultReport) -> Result<(), FaultError> {
    let need = p.copy_bytes as u64;
    let have = available_space(dir)?;
    if have < need {
        return Err(FaultError::DiskSpace {
            dir: dir.to_path_buf(),
            need,
            have,
        });
    }
    let path = dir.join(format!("faultlab-copy-{}.dat", std::process::id()));
    let chunk = vec![0xa5u8; MB];
    let mut buf = vec![0u8; MB];
    let result = (|| -> io::Result<()> {
        while running(deadline) {
            let mut f = File::create(&path)?;
            let mut written = 0;
            while written < p.copy_bytes && running(deadline) {
                let n = chunk.len().min(p.copy_bytes - written);
                f.write_all(&chunk[..n])?;
                written += n;
            }
            f.sync_all()?;
            drop(f);
            let mut f = File::open(&path)?;
            let mut read = 0;
            loop {
                let n = f.read(&mut buf)?;
                if n == 0 || !running(deadline) {
                    break;
                }
                read += n;
            }
            r.bytes += (written + read) as u64;
            r.cycles += 1;
            sleep_until((Instant::now() + p.copy_sleep).min(deadline));
        }
        Ok(())
    })();
    let _ = fs::remove_file(&path);
    result.map_err(FaultError::from)
}

/// Kernel-backed variants; only reachable with root and explicit consent.
mod real {
    use super::*;

    fn write(path: &str, value: &str) -> io::Result<()> {
        fs::write(path, value).map_err(|e| io::Error::new(e.kind(), format!("{path}: {e}")))
    }

    pub fn cpufreq(p: &FaultParams, deadline: Instant, r: &mut FaultReport) -> Result<(), FaultError> {
        let base = "/sys/devices/system/cpu/cpu0/cpufreq";
        let max = fs::read_to_string(format!("{base}/cpuinfo_max_freq"))?;
        let max: u64 = max.trim().parse().map_err(|_| FaultError::Param("unreadable cpuinfo_max_freq".into()))?;
        let old = fs::read_to_string(format!("{base}/scaling_max_freq"))?;
        write(&format!("{base}/scaling_max_freq"), &((max as f64 * (1.0 - p.cpufreq_cut)) as u64).to_string())?;
        sleep_until(deadline);
        r.cycles = 1;
        write(&format!("{base}/scaling_max_freq"), old.trim())?;
        Ok(())
    }

    fn debugfs_fault(dir: &str, probability: f64, interval: u64, deadline: Instant) -> io::Result<()> {
        write(&format!("{dir}/probability"), &((probability * 100.0) as u64).to_string())?;
        write(&format!("{dir}/interval"), &interval.to_string())?;
        write(&format!("{dir}/times"), "-1")?;
        sleep_until(deadline);
        write(&format!("{dir}/probability"), "0")
    }

    pub fn pagefail(p: &FaultParams, deadline: Instant, r: &mut FaultReport) -> Result<(), FaultError> {
        debugfs_fault("/sys/kernel/debug/fail_page_alloc", p.pagefail_probability, 1, deadline)?;
        r.cycles = 1;
        Ok(())
    }

    pub fn ioerr(p: &FaultParams, deadline: Instant, r: &mut FaultReport) -> Result<(), FaultError> {
        debugfs_fault("/sys/kernel/debug/fail_make_request", p.ioerr_probability, p.ioerr_interval, deadline)?;
        r.cycles = 1;
        Ok(())
    }
}
