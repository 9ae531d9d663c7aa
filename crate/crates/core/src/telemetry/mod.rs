//! Per-second node telemetry.
//!
//! Storage is columnar: one `f64` column per metric over a shared, strictly
//! increasing list of timestamps, with `NaN` marking a missing sample. On
//! disk this is LDMS-style CSV: one file per plug-in, a `#Time` first column
//! and core-level metrics suffixed `.coreN`.

mod procfs;
mod sim;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

pub use procfs::{collect_procfs, ProcSampler};
pub use sim::{plugin_of, simulate, synthesize_log, Signature, SimConfig};

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("{file}: line {line}: {reason}")]
    Parse { file: String, line: usize, reason: String },
    #[error("{0}: timestamps are not strictly increasing")]
    Unordered(String),
    #[error("no telemetry files in {0}")]
    Empty(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    Node,
    Core(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Metric {
    pub base: String,
    pub scope: Scope,
}

impl Metric {
    pub fn node(base: impl Into<String>) -> Self {
        Metric {
            base: base.into(),
            scope: Scope::Node,
        }
    }

    pub fn core(base: impl Into<String>, core: usize) -> Self {
        Metric {
            base: base.into(),
            scope: Scope::Core(core),
        }
    }

    /// Parses a column name, splitting off a trailing `.coreN`.
    pub fn from_column(name: &str) -> Self {
        if let Some((base, idx)) = name.rsplit_once(".core") {
            if let Ok(c) = idx.parse::<usize>() {
                if !base.is_empty() {
                    return Metric::core(base, c);
                }
            }
        }
        Metric::node(name)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scope {
            Scope::Node => f.write_str(&self.base),
            Scope::Core(c) => write!(f, "{}.core{c}", self.base),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Telemetry {
    pub metrics: Vec<Metric>,
    pub times: Vec<i64>,
    /// `columns[m][i]` is metric `m` at `times[i]`.
    pub columns: Vec<Vec<f64>>,
}

impl Telemetry {
    pub fn new(times: Vec<i64>) -> Self {
        Telemetry {
            metrics: Vec::new(),
            times,
            columns: Vec::new(),
        }
    }

    pub fn push(&mut self, m: Metric, column: Vec<f64>) {
        assert_eq!(column.len(), self.times.len(), "column length for {m}");
        self.metrics.push(m);
        self.columns.push(column);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn index_of(&self, m: &Metric) -> Option<usize> {
        self.metrics.iter().position(|x| x == m)
    }

    pub fn column(&self, m: &Metric) -> Option<&[f64]> {
        self.index_of(m).map(|i| self.columns[i].as_slice())
    }

    /// Cores that have at least one core-level metric, ascending.
    pub fn cores(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self
            .metrics
            .iter()
            .filter_map(|m| match m.scope {
                Scope::Core(i) => Some(i),
                Scope::Node => None,
            })
            .collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn check_ordered(&self, what: &str) -> Result<(), TelemetryError> {
        if self.times.windows(2).all(|w| w[0] < w[1]) {
            Ok(())
        } else {
            Err(TelemetryError::Unordered(what.to_string()))
        }
    }

    /// Outer join on timestamps; absent samples become `NaN`. Metric name
    /// clashes keep the first column.
    pub fn merge(parts: Vec<Telemetry>) -> Telemetry {
        let mut times: Vec<i64> = parts.iter().flat_map(|p| p.times.iter().copied()).collect();
        times.sort_unstable();
        times.dedup();
        let pos: HashMap<i64, usize> = times.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let mut out = Telemetry::new(times);
        for p in parts {
            for (m, col) in p.metrics.into_iter().zip(p.columns) {
                if out.index_of(&m).is_some() {
                    continue;
                }
                let mut full = vec![f64::NAN; out.times.len()];
                for (t, v) in p.times.iter().zip(col) {
                    full[pos[t]] = v;
                }
                out.push(m, full);
            }
        }
        out
    }

    /// Rows with `from <= t < to`.
    pub fn slice_time(&self, from: i64, to: i64) -> Telemetry {
        let a = self.times.partition_point(|t| *t < from);
        let b = self.times.partition_point(|t| *t < to);
        Telemetry {
            metrics: self.metrics.clone(),
            times: self.times[a..b].to_vec(),
            columns: self.columns.iter().map(|c| c[a..b].to_vec()).collect(),
        }
    }
}

/// Columns that describe the sample rather than measure anything.
const METADATA_COLUMNS: [&str; 5] = ["Time_usec", "ProducerName", "component_id", "job_id", "app_id"];

/// Plug-ins left out of ingestion unless asked for.
pub const EXCLUDED_PLUGINS: [&str; 1] = ["procinterrupts"];

fn parse_time(s: &str) -> Option<i64> {
    let v: f64 = s.trim().parse().ok()?;
    v.is_finite().then(|| v.floor() as i64)
}

/// Parses one LDMS-style CSV document.
pub fn parse_ldms_csv(text: &str, file: &str) -> Result<Telemetry, TelemetryError> {
    let perr = |line: usize, reason: String| TelemetryError::Parse {
        file: file.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| perr(1, "missing header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first().map(|c| c.trim_start_matches('#')) != Some("Time") {
        return Err(perr(1, "first column must be #Time".into()));
    }
    let keep: Vec<(usize, Metric)> = cols
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, c)| !METADATA_COLUMNS.contains(c))
        .map(|(i, c)| (i, Metric::from_column(c)))
        .collect();
    let mut times = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); keep.len()];
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(perr(i + 1, format!("expected {} fields, got {}", cols.len(), fields.len())));
        }
        let t = parse_time(fields[0]).ok_or_else(|| perr(i + 1, format!("bad time {:?}", fields[0])))?;
        times.push(t);
        for (slot, (ci, _)) in keep.iter().enumerate() {
            let raw = fields[*ci].trim();
            let v = if raw.is_empty() {
                f64::NAN
            } else {
                raw.parse::<f64>().map_err(|_| perr(i + 1, format!("bad value {raw:?}")))?
            };
            columns[slot].push(v);
        }
    }
    let mut t = Telemetry::new(times);
    for ((_, m), c) in keep.into_iter().zip(columns) {
        t.push(m, c);
    }
    t.check_ordered(file)?;
    Ok(t)
}

/// Reads every `*.csv` plug-in file of a directory and joins them.
pub fn read_telemetry_dir(dir: &Path) -> Result<Telemetry, TelemetryError> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .filter(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            !EXCLUDED_PLUGINS.iter().any(|x| stem.starts_with(x))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(TelemetryError::Empty(dir.display().to_string()));
    }
    let mut parts = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f)?;
        parts.push(parse_ldms_csv(&text, &f.display().to_string())?);
    }
    Ok(Telemetry::merge(parts))
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn write_ldms_csv(path: &Path, t: &Telemetry) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "#Time")?;
    for m in &t.metrics {
        write!(w, ",{m}")?;
    }
    writeln!(w)?;
    for (i, time) in t.times.iter().enumerate() {
        write!(w, "{time}")?;
        for c in &t.columns {
            write!(w, ",{}", format_value(c[i]))?;
        }
        writeln!(w)?;
    }
    w.flush()
}

/// Writes one file per plug-in group; `plugin_of` maps a metric base name to
/// its plug-in.
pub fn write_telemetry_dir(dir: &Path, t: &Telemetry, plugin_of: impl Fn(&str) -> String) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, m) in t.metrics.iter().enumerate() {
        groups.entry(plugin_of(&m.base)).or_default().push(i);
    }
    for (plugin, idx) in groups {
        let part = Telemetry {
            metrics: idx.iter().map(|i| t.metrics[*i].clone()).collect(),
            times: t.times.clone(),
            columns: idx.iter().map(|i| t.columns[*i].clone()).collect(),
        };
        write_ldms_csv(&dir.join(format!("{plugin}.csv")), &part)?;
    }
    Ok(())
}
