//! Synthetic telemetry for a workload, with per-program resource signatures
//! modelled on what the fault and benchmark programs actually do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Metric, Telemetry};
use crate::engine::split_args;
use crate::execlog::{Event, ExecutionLogEntry};
use crate::faults::{BenchKind, FaultKind, Intensity};
use crate::task::{format_core_list, Task, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signature {
    Fault(FaultKind, Intensity),
    Bench(BenchKind),
    Generic,
}

impl Signature {
    /// Recognizes `faultlab fault <name> [--low]`, `faultlab bench <kind>`
    /// and bare fault program names.
    pub fn from_args(args: &str) -> Signature {
        let argv = split_args(args).unwrap_or_default();
        let low = argv.iter().any(|a| a == "--low");
        let intensity = if low { Intensity::Low } else { Intensity::Normal };
        for w in argv.windows(2) {
            if w[0] == "fault" {
                if let Ok(k) = w[1].parse::<FaultKind>() {
                    return Signature::Fault(k, intensity);
                }
            }
            if w[0] == "bench" {
                if let Ok(b) = w[1].parse::<BenchKind>() {
                    return Signature::Bench(b);
                }
            }
        }
        let prog = argv.iter().find(|a| a.as_str() != "sudo").map(|p| p.rsplit('/').next().unwrap_or(p));
        match prog.and_then(|p| p.parse::<FaultKind>().ok()) {
            Some(k) => Signature::Fault(k, intensity),
            None => Signature::Generic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// UNIX time of workload offset 0.
    pub t0: i64,
    pub span: u64,
    pub cores: usize,
    pub seed: u64,
    /// Multiplies every noise amplitude.
    pub noise: f64,
    /// Probability that a whole second is missing.
    pub gap_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            t0: 1_700_000_000,
            span: 3600,
            cores: 4,
            seed: 0,
            noise: 1.0,
            gap_rate: 0.0,
        }
    }
}

const NODE_METRICS: [&str; 18] = [
    "cpu_user",
    "cpu_sys",
    "cpu_iowait",
    "cpu_idle",
    "freq_mhz",
    "mem_total_mb",
    "mem_used_mb",
    "mem_free_mb",
    "pgfault",
    "pgalloc_fail",
    "disk_read_bytes",
    "disk_write_bytes",
    "disk_io_errors",
    "llc_misses",
    "fp_ops",
    "mem_bw_gbs",
    "ctxt",
    "load_avg",
];
const CORE_METRICS: [&str; 6] = ["cpu_user", "cpu_sys", "freq_mhz", "instructions", "llc_misses", "fp_ops"];
const BASE_FREQ: f64 = 2400.0;
const MEM_TOTAL: f64 = 64_000.0;

/// Plug-in file a simulated metric belongs to.
pub fn plugin_of(base: &str) -> String {
    let p = match base {
        b if b.starts_with("cpu_") || b == "load_avg" => "procstat",
        b if b.starts_with("mem_") && b != "mem_bw_gbs" => "meminfo",
        "pgfault" | "pgalloc_fail" | "ctxt" => "vmstat",
        b if b.starts_with("disk_") => "procdiskstats",
        "freq_mhz" => "cpufreq",
        _ => "perfevent",
    };
    p.to_string()
}

#[derive(Default, Clone)]
struct Second {
    user: Vec<f64>,
    sys: Vec<f64>,
    freq_scale: Vec<f64>,
    instr: Vec<f64>,
    llc: Vec<f64>,
    fp: Vec<f64>,
    mem_used: f64,
    pgfault: f64,
    alloc_fail: f64,
    disk_r: f64,
    disk_w: f64,
    io_err: f64,
    iowait: f64,
    mem_bw: f64,
    ctxt: f64,
    runnable: f64,
}

impl Second {
    fn idle(cores: usize) -> Self {
        Second {
            user: vec![2.0; cores],
            sys: vec![1.0; cores],
            freq_scale: vec![1.0; cores],
            instr: vec![1e8; cores],
            llc: vec![1e5; cores],
            fp: vec![1e6; cores],
            mem_used: 2000.0,
            pgfault: 1000.0,
            disk_r: 1e5,
            disk_w: 2e5,
            iowait: 0.5,
            mem_bw: 1.0,
            ctxt: 5000.0,
            runnable: 0.1,
            ..Default::default()
        }
    }

    fn busy(&mut self, c: usize, user: f64, fp: f64, llc: f64) {
        self.user[c] += user;
        self.instr[c] += user * 2e7;
        self.fp[c] += fp;
        self.llc[c] += llc;
        self.runnable += user / 100.0;
    }
}

fn task_cores(t: &Task, all: usize, default_all: bool) -> Vec<usize> {
    match &t.cores {
        Some(c) => c.iter().copied().filter(|c| *c < all).collect(),
        None if default_all => (0..all).collect(),
        None => vec![0],
    }
}

fn apply_fault(s: &mut Second, kind: FaultKind, intensity: Intensity, core: usize, e: u64, rng: &mut ChaCha8Rng) {
    let k = if intensity == Intensity::Low { 0.5 } else { 1.0 };
    let e_f = e as f64;
    match kind {
        FaultKind::Leak => {
            s.mem_used += 16.0 * k * (e_f + 1.0);
            s.pgfault += 4096.0 * k;
            s.sys[core] += 6.0 * k;
            s.busy(core, 3.0, 0.0, 2e5);
        }
        FaultKind::Memeater => {
            s.mem_used += 36.0 * k * ((e / 2) as f64 + 1.0);
            s.pgfault += 4608.0 * k;
            s.mem_bw += 6.0 * k;
            s.busy(core, 90.0, 0.0, 3e7 * k);
        }
        FaultKind::Ddot => {
            let phase = (e / 5) % 3;
            let (llc, bw) = match phase {
                0 => (1e6, 0.5),
                1 => (4e7 * k, 4.0 * k),
                _ => (6e7 * k, 5.0 * k),
            };
            s.mem_bw += bw;
            s.busy(core, 95.0, 8e8, llc);
        }
        FaultKind::Dial => {
            s.busy(core, 95.0 * k, 3e9 * k, 3e5);
            s.instr[core] += 3e9 * k;
        }
        FaultKind::Cpufreq => {
            s.freq_scale[core] = 1.0 - 0.5 * k;
            s.busy(core, 100.0 * (1.0 - 0.5 * k), 0.0, 1e5);
        }
        FaultKind::Pagefail => {
            let requests = 300.0;
            let fails = (0..300).filter(|_| rng.random::<f64>() < 0.5 * k).count() as f64;
            s.alloc_fail += fails;
            s.pgfault += (requests - fails) * 1024.0;
            s.mem_used += 32.0 * ((e % 16) as f64);
            s.sys[core] += 40.0 * k;
            s.busy(core, 8.0, 0.0, 3e6);
        }
        FaultKind::Ioerr => {
            s.io_err += (0..4).filter(|_| rng.random::<f64>() < 0.2 * k).count() as f64;
            s.disk_r += 6e7;
            s.disk_w += 6e7;
            s.iowait += 8.0;
            s.sys[core] += 15.0;
            s.busy(core, 5.0, 0.0, 1e6);
        }
        FaultKind::Copy => {
            let write_s = if intensity == Intensity::Low { 1 } else { 2 };
            let period = write_s + 1 + 2;
            let pos = e % period;
            if pos < write_s {
                s.disk_w += 2e8;
                s.iowait += 20.0;
                s.sys[core] += 25.0;
                s.mem_used += 200.0 * k;
            } else if pos < write_s + 1 {
                s.disk_r += 4e8 * k;
                s.iowait += 12.0;
                s.sys[core] += 20.0;
            }
            s.busy(core, 4.0, 0.0, 5e5);
        }
    }
}

fn apply_bench(s: &mut Second, kind: BenchKind, cores: &[usize]) {
    for &c in cores {
        match kind {
            BenchKind::Cpu => s.busy(c, 95.0, 4e8, 2e6),
            BenchKind::Mem => {
                s.busy(c, 90.0, 5e7, 2e7);
                s.mem_bw += 3.0;
            }
            BenchKind::Io => {
                s.busy(c, 20.0, 0.0, 5e5);
                s.sys[c] += 10.0;
                s.disk_w += 5e7;
                s.disk_r += 5e7;
                s.iowait += 5.0;
            }
        }
    }
}

/// Simulates per-second telemetry for `w` starting at `cfg.t0`.
pub fn simulate(w: &Workload, cfg: &SimConfig) -> Telemetry {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.cores.max(1);
    let plans: Vec<(&Task, Signature, Vec<usize>)> = w
        .tasks()
        .iter()
        .map(|t| {
            let sig = Signature::from_args(&t.args);
            let cores = task_cores(t, n, !matches!(sig, Signature::Fault(..)));
            (t, sig, cores)
        })
        .collect();
    let mut times = Vec::new();
    let mut node: Vec<Vec<f64>> = vec![Vec::new(); NODE_METRICS.len()];
    let mut core: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); n]; CORE_METRICS.len()];
    let mut node_ctr = [0.0f64; NODE_METRICS.len()];
    let mut core_ctr = vec![[0.0f64; CORE_METRICS.len()]; n];
    let gauss = |rng: &mut ChaCha8Rng, sd: f64| -> f64 { rng.sample::<f64, _>(StandardNormal) * sd * cfg.noise };

    for i in 0..cfg.span {
        let mut s = Second::idle(n);
        for (t, sig, cores) in &plans {
            if i < t.timestamp || i >= t.end() || cores.is_empty() {
                continue;
            }
            match sig {
                Signature::Fault(k, lvl) => apply_fault(&mut s, *k, *lvl, cores[0], i - t.timestamp, &mut rng),
                Signature::Bench(b) => apply_bench(&mut s, *b, cores),
                Signature::Generic => {
                    for &c in cores {
                        s.busy(c, 50.0, 1e8, 1e6);
                    }
                }
            }
        }
        let mut user = vec![0.0; n];
        let mut sys = vec![0.0; n];
        let mut freq = vec![0.0; n];
        for c in 0..n {
            sys[c] = (s.sys[c] + gauss(&mut rng, 0.5)).clamp(0.0, 100.0);
            user[c] = (s.user[c] + gauss(&mut rng, 1.5)).clamp(0.0, 100.0 - sys[c]);
            freq[c] = BASE_FREQ * s.freq_scale[c] + gauss(&mut rng, 15.0);
            let rates = [s.instr[c], s.llc[c], s.fp[c]];
            for (j, r) in rates.iter().enumerate() {
                core_ctr[c][3 + j] += (r * (1.0 + gauss(&mut rng, 0.05))).max(0.0);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let iowait = (s.iowait + gauss(&mut rng, 0.3)).clamp(0.0, 100.0);
        let node_user = mean(&user);
        let node_sys = mean(&sys);
        let mem_used = (s.mem_used + gauss(&mut rng, 2.0)).clamp(0.0, MEM_TOTAL);
        let rate = |r: f64, sd: f64, rng: &mut ChaCha8Rng| (r * (1.0 + gauss(rng, sd))).max(0.0);
        let increments = [
            (8, rate(s.pgfault, 0.05, &mut rng)),
            (9, s.alloc_fail),
            (10, rate(s.disk_r, 0.05, &mut rng)),
            (11, rate(s.disk_w, 0.05, &mut rng)),
            (12, s.io_err),
            (13, rate(s.llc.iter().sum(), 0.05, &mut rng)),
            (14, rate(s.fp.iter().sum(), 0.05, &mut rng)),
            (16, rate(s.ctxt + 200.0 * s.runnable, 0.05, &mut rng)),
        ];
        for (j, inc) in increments {
            node_ctr[j] += inc;
        }
        if cfg.gap_rate > 0.0 && rng.random::<f64>() < cfg.gap_rate {
            continue;
        }
        times.push(cfg.t0 + i as i64);
        let row = [
            node_user,
            node_sys,
            iowait,
            (100.0 - node_user - node_sys - iowait).max(0.0),
            mean(&freq),
            MEM_TOTAL,
            mem_used,
            MEM_TOTAL - mem_used,
            node_ctr[8],
            node_ctr[9],
            node_ctr[10],
            node_ctr[11],
            node_ctr[12],
            node_ctr[13],
            node_ctr[14],
            (s.mem_bw * (1.0 + gauss(&mut rng, 0.03))).max(0.0),
            node_ctr[16],
            (s.runnable + gauss(&mut rng, 0.05)).max(0.0),
        ];
        for (col, v) in node.iter_mut().zip(row) {
            col.push(v);
        }
        for c in 0..n {
            let vals = [user[c], sys[c], freq[c], core_ctr[c][3], core_ctr[c][4], core_ctr[c][5]];
            for (j, v) in vals.into_iter().enumerate() {
                core[j][c].push(v);
            }
        }
    }
    let mut t = Telemetry::new(times);
    for (name, col) in NODE_METRICS.iter().zip(node) {
        t.push(Metric::node(*name), col);
    }
    for c in 0..n {
        for (j, name) in CORE_METRICS.iter().enumerate() {
            t.push(Metric::core(*name, c), std::mem::take(&mut core[j][c]));
        }
    }
    t
}

/// Execution log a single engine would have produced for `w` started at `t0`.
pub fn synthesize_log(w: &Workload, host: &str, t0: i64) -> Vec<ExecutionLogEntry> {
    let entry = |ts: i64, seq: Option<u64>, event, detail: String| ExecutionLogEntry {
        abs_timestamp: ts,
        host: host.to_string(),
        seq_num: seq,
        event,
        detail,
    };
    let mut out = vec![(t0, 0, entry(t0, None, Event::SessionStart, "session=0 role=master recovered=false".into()))];
    for t in w.tasks() {
        let start = t0 + t.timestamp as i64;
        let cores = t.cores.as_deref().map(format_core_list).unwrap_or_else(|| "all".into());
        out.push((
            start,
            1,
            entry(
                start,
                Some(t.seq_num),
                Event::TaskStart,
                format!("attempt=1 offset_ms={} delay_ms=0 pin=applied cores={cores} fault={} args={}", t.timestamp * 1000, t.is_fault, t.args),
            ),
        ));
        let end = start + t.duration as i64;
        out.push((
            end,
            0,
            entry(end, Some(t.seq_num), Event::TaskEnd, format!("reason=completed attempt=1 exit=0 runtime_ms={}", t.duration * 1000)),
        ));
    }
    let last = out.iter().map(|e| e.0).max().unwrap_or(t0);
    out.push((last, 2, entry(last, None, Event::SessionEnd, "session=0".into())));
    out.sort_by_key(|(ts, order, e)| (*ts, *order, e.seq_num));
    out.into_iter().map(|(_, _, e)| e).collect()
}
