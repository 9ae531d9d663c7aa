//! Synthetic CPU, memory and I/O load used as application tasks.

use std::fmt;
use std::fs::{self, File};
use std::hint::black_box;
use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use super::FaultError;

const MATRIX_N: usize = 96;
const TRIAD_LEN: usize = 2 << 20;
const IO_BYTES: usize = 8 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchKind {
    Cpu,
    Mem,
    Io,
}

impl BenchKind {
    pub fn name(self) -> &'static str {
        match self {
            BenchKind::Cpu => "cpu",
            BenchKind::Mem => "mem",
            BenchKind::Io => "io",
        }
    }

    fn unit(self) -> &'static str {
        match self {
            BenchKind::Cpu => "GFLOP/s",
            BenchKind::Mem => "GB/s",
            BenchKind::Io => "MB/s",
        }
    }
}

impl FromStr for BenchKind {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cpu" => Ok(BenchKind::Cpu),
            "mem" => Ok(BenchKind::Mem),
            "io" => Ok(BenchKind::Io),
            other => Err(FaultError::Unknown(other.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub kind: BenchKind,
    pub threads: usize,
    /// Run until this much time has passed...
    pub duration: Duration,
    /// ...or, when set, for exactly this many work units per thread.
    pub iterations: Option<u64>,
    pub workdir: PathBuf,
}

impl BenchSpec {
    pub fn new(kind: BenchKind, threads: usize, duration: Duration) -> Self {
        BenchSpec {
            kind,
            threads,
            duration,
            iterations: None,
            workdir: std::env::temp_dir(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub kind: BenchKind,
    pub elapsed: Duration,
    pub units: u64,
    /// In GFLOP/s, GB/s or MB/s depending on the kind.
    pub throughput: f64,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "bench={} elapsed_ms={:.3} units={} throughput={:.4} {}",
            self.kind.name(),
            self.elapsed.as_secs_f64() * 1000.0,
            self.units,
            self.throughput,
            self.kind.unit()
        )
    }
}

/// Work per unit, in the report's numerator (flops, bytes, bytes).
fn unit_size(kind: BenchKind) -> f64 {
    match kind {
        BenchKind::Cpu => 2.0 * (MATRIX_N as f64).powi(3),
        BenchKind::Mem => 24.0 * TRIAD_LEN as f64,
        BenchKind::Io => 2.0 * IO_BYTES as f64,
    }
}

struct Worker {
    kind: BenchKind,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    io_path: PathBuf,
    io_buf: Vec<u8>,
}

impl Worker {
    fn new(kind: BenchKind, id: usize, spec: &BenchSpec) -> Self {
        let len = match kind {
            BenchKind::Cpu => MATRIX_N * MATRIX_N,
            BenchKind::Mem => TRIAD_LEN,
            BenchKind::Io => 0,
        };
        Worker {
            kind,
            a: (0..len).map(|i| (i % 13) as f64).collect(),
            b: (0..len).map(|i| (i % 7) as f64 * 0.5).collect(),
            c: vec![0.0; len],
            io_path: spec.workdir.join(format!("faultlab-bench-{}-{id}.dat", std::process::id())),
            io_buf: if kind == BenchKind::Io { vec![0x3c; 1 << 20] } else { Vec::new() },
        }
    }

    fn unit(&mut self) -> io::Result<()> {
        match self.kind {
            BenchKind::Cpu => {
                let n = MATRIX_N;
                for i in 0..n {
                    for k in 0..n {
                        let aik = self.a[i * n + k];
                        let row = &self.b[k * n..(k + 1) * n];
                        let out = &mut self.c[i * n..(i + 1) * n];
                        for (o, bkj) in out.iter_mut().zip(row) {
                            *o += aik * bkj;
                        }
                    }
                }
                black_box(&self.c);
            }
            BenchKind::Mem => {
                let s = 1.000_001;
                for ((ai, bi), ci) in self.a.iter_mut().zip(&self.b).zip(&self.c) {
                    *ai = bi + s * ci;
                }
                std::mem::swap(&mut self.a, &mut self.c);
                black_box(&self.a);
            }
            BenchKind::Io => {
                let mut f = File::create(&self.io_path)?;
                for _ in 0..IO_BYTES / self.io_buf.len() {
                    f.write_all(&self.io_buf)?;
                }
                f.sync_data()?;
                drop(f);
                let mut f = File::open(&self.io_path)?;
                while f.read(&mut self.io_buf)? > 0 {}
            }
        }
        Ok(())
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        if self.kind == BenchKind::Io {
            let _ = fs::remove_file(&self.io_path);
        }
    }
}

pub fn run_benchmark(spec: &BenchSpec) -> Result<BenchReport, FaultError> {
    if spec.threads == 0 {
        return Err(FaultError::Param("threads must be at least 1".into()));
    }
    let started = Instant::now();
    let deadline = started + spec.duration;
    let results: Vec<io::Result<u64>> = thread::scope(|s| {
        let handles: Vec<_> = (0..spec.threads)
            .map(|id| {
                s.spawn(move || -> io::Result<u64> {
                    let mut w = Worker::new(spec.kind, id, spec);
                    let mut units = 0;
                    loop {
                        let done = match spec.iterations {
                            Some(n) => units >= n,
                            None => Instant::now() >= deadline || super::stop_requested(),
                        };
                        if done {
                            return Ok(units);
                        }
                        w.unit()?;
                        units += 1;
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench thread")).collect()
    });
    let elapsed = started.elapsed();
    let mut units = 0;
    for r in results {
        units += r?;
    }
    let scale = match spec.kind {
        BenchKind::Io => 1e6,
        _ => 1e9,
    };
    Ok(BenchReport {
        kind: spec.kind,
        elapsed,
        units,
        throughput: units as f64 * unit_size(spec.kind) / elapsed.as_secs_f64().max(1e-9) / scale,
    })
}
