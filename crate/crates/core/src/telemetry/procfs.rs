//! Minimal local collector reading `/proc` once per second into LDMS-style
//! CSV files (`procstat.csv`, `meminfo.csv`, `vmstat.csv`).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use super::Metric;
use crate::clock::unix_now;

const CPU_FIELDS: [&str; 5] = ["user", "nice", "sys", "idle", "iowait"];
const MEMINFO_KEYS: [&str; 5] = ["MemTotal", "MemFree", "MemAvailable", "Cached", "Active"];
const VMSTAT_KEYS: [&str; 4] = ["pgfault", "pgmajfault", "pgpgin", "pgpgout"];

#[derive(Debug, Default)]
pub struct ProcSampler;

impl ProcSampler {
    /// One reading grouped by plug-in.
    pub fn sample(&self) -> io::Result<BTreeMap<&'static str, Vec<(Metric, f64)>>> {
        let mut out = BTreeMap::new();
        out.insert("procstat", parse_stat(&fs::read_to_string("/proc/stat")?));
        out.insert("meminfo", parse_keyed(&fs::read_to_string("/proc/meminfo")?, &MEMINFO_KEYS, ':'));
        out.insert("vmstat", parse_keyed(&fs::read_to_string("/proc/vmstat")?, &VMSTAT_KEYS, ' '));
        Ok(out)
    }
}

fn parse_stat(text: &str) -> Vec<(Metric, f64)> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        let Some(head) = it.next() else { continue };
        let vals: Vec<f64> = it.filter_map(|v| v.parse().ok()).collect();
        if let Some(idx) = head.strip_prefix("cpu") {
            let core = idx.parse::<usize>().ok();
            for (name, v) in CPU_FIELDS.iter().zip(&vals) {
                let m = match core {
                    Some(c) => Metric::core(*name, c),
                    None => Metric::node(*name),
                };
                out.push((m, *v));
            }
        } else if head == "ctxt" || head == "processes" {
            if let Some(v) = vals.first() {
                out.push((Metric::node(head), *v));
            }
        }
    }
    out
}

fn parse_keyed(text: &str, keys: &[&str], sep: char) -> Vec<(Metric, f64)> {
    let mut out = Vec::new();
    for line in text.lines() {
        let Some((k, rest)) = line.split_once(sep) else { continue };
        if !keys.contains(&k.trim()) {
            continue;
        }
        if let Some(v) = rest.split_whitespace().next().and_then(|v| v.parse::<f64>().ok()) {
            out.push((Metric::node(k.trim()), v));
        }
    }
    out
}

/// Samples every `interval` until `duration` passes or `stop` is raised.
/// Returns the number of rows written per file.
pub fn collect_procfs(dir: &Path, duration: Duration, interval: Duration, stop: &AtomicBool) -> io::Result<usize> {
    fs::create_dir_all(dir)?;
    let sampler = ProcSampler;
    let first = sampler.sample()?;
    let mut writers = BTreeMap::new();
    let mut layouts = BTreeMap::new();
    for (plugin, vals) in &first {
        let mut w = BufWriter::new(File::create(dir.join(format!("{plugin}.csv")))?);
        write!(w, "#Time")?;
        for (m, _) in vals {
            write!(w, ",{m}")?;
        }
        writeln!(w)?;
        layouts.insert(*plugin, vals.iter().map(|(m, _)| m.clone()).collect::<Vec<_>>());
        writers.insert(*plugin, w);
    }
    let end = Instant::now() + duration;
    let mut rows = 0;
    let mut next = Instant::now();
    let mut reading = Some(first);
    while Instant::now() < end && !stop.load(Ordering::SeqCst) {
        let sample = match reading.take() {
            Some(s) => s,
            None => sampler.sample()?,
        };
        let now = unix_now();
        for (plugin, w) in writers.iter_mut() {
            let vals: BTreeMap<&Metric, f64> = sample.get(plugin).map(|v| v.iter().map(|(m, x)| (m, *x)).collect()).unwrap_or_default();
            write!(w, "{now}")?;
            for m in &layouts[plugin] {
                match vals.get(m) {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
            w.flush()?;
        }
        rows += 1;
        next += interval;
        if let Some(d) = next.checked_duration_since(Instant::now()) {
            thread::sleep(d);
        }
    }
    Ok(rows)
}
