//! Post-processing of raw telemetry and windowed feature extraction.

pub mod labels;
pub mod stats;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::execlog::ExecutionLogEntry;
use crate::telemetry::{Metric, Scope, Telemetry, TelemetryError};

pub use labels::{fault_label, is_ambiguous, label_mode, label_recent, Interval, Timeline, HEALTHY};
pub use stats::{compute_stats, percentile, STAT_NAMES};

/// Substrings marking monotonically increasing counters.
pub const DEFAULT_COUNTER_PATTERNS: [&str; 11] = [
    "pgfault", "pgalloc", "ctxt", "instructions", "llc_misses", "fp_ops", "_bytes", "io_errors", "PAPI_", "cycles", "intr",
];
pub const ALLOCATED: &str = "allocated";
pub const DER_SUFFIX: &str = "_der";
pub const CORE_SUFFIX: &str = "_core";
pub const SCHEMA_FILE: &str = "schema.json";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("{file}: {reason}")]
    Format { file: String, reason: String },
    #[error("no feature sets: {0}")]
    Empty(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn default_counter_patterns() -> Vec<String> {
    DEFAULT_COUNTER_PATTERNS.iter().map(|s| s.to_string()).collect()
}

pub fn matches_counter(base: &str, patterns: &[String]) -> bool {
    patterns.iter().any(|p| base.contains(p.as_str()))
}

/// Raw metrics to keep and which of them are counters, by column name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PostprocessPlan {
    pub keep: Vec<String>,
    pub counters: Vec<String>,
}

fn present(col: &[f64]) -> impl Iterator<Item = f64> + '_ {
    col.iter().copied().filter(|v| !v.is_nan())
}

fn is_constant(col: &[f64]) -> bool {
    let mut it = present(col);
    match it.next() {
        None => true,
        Some(first) => it.all(|v| v == first),
    }
}

fn non_decreasing(col: &[f64]) -> bool {
    let v: Vec<f64> = present(col).collect();
    v.windows(2).all(|w| w[0] <= w[1])
}

/// Metrics are grouped by (base, node/core); a per-core metric is kept if
/// it varies on any core and is a counter only if it never decreases on
/// any core.
pub fn plan_postprocess(t: &Telemetry, counter_patterns: &[String]) -> PostprocessPlan {
    let mut groups: BTreeMap<(bool, &str), Vec<usize>> = BTreeMap::new();
    for (i, m) in t.metrics.iter().enumerate() {
        groups.entry((m.scope != Scope::Node, m.base.as_str())).or_default().push(i);
    }
    let mut keep = HashSet::new();
    let mut counters = HashSet::new();
    for ((_, base), idx) in groups {
        if idx.iter().all(|&i| is_constant(&t.columns[i])) {
            continue;
        }
        let counter = matches_counter(base, counter_patterns) && idx.iter().all(|&i| non_decreasing(&t.columns[i]));
        for i in idx {
            keep.insert(i);
            if counter {
                counters.insert(i);
            }
        }
    }
    let name = |i: usize| t.metrics[i].to_string();
    PostprocessPlan {
        keep: (0..t.metrics.len()).filter(|i| keep.contains(i)).map(name).collect(),
        counters: (0..t.metrics.len()).filter(|i| counters.contains(i)).map(name).collect(),
    }
}

/// Per-second first differences; the first present sample is 0 and gaps
/// stay `NaN`.
pub fn rate(times: &[i64], col: &[f64]) -> Vec<f64> {
    let mut prev: Option<(i64, f64)> = None;
    times
        .iter()
        .zip(col)
        .map(|(&t, &v)| {
            if v.is_nan() {
                return f64::NAN;
            }
            let r = match prev {
                Some((pt, pv)) => (v - pv) / (t - pt) as f64,
                None => 0.0,
            };
            prev = Some((t, v));
            r
        })
        .collect()
}

/// Applies `plan`, then adds node and per-core `allocated` indicators and a
/// `_der` series for every metric. Metrics in the plan but absent from `t`
/// become `NaN`.
pub fn apply_plan(t: &Telemetry, plan: &PostprocessPlan, timeline: &Timeline) -> Result<Telemetry, FeatureError> {
    t.check_ordered("telemetry")?;
    let counters: HashSet<&str> = plan.counters.iter().map(String::as_str).collect();
    let mut out = Telemetry::new(t.times.clone());
    for name in &plan.keep {
        let m = Metric::from_column(name);
        let col = match t.column(&m) {
            Some(c) if counters.contains(name.as_str()) => rate(&t.times, c),
            Some(c) => c.to_vec(),
            None => vec![f64::NAN; t.len()],
        };
        out.push(m, col);
    }
    let mut cores = out.cores();
    if cores.is_empty() {
        cores = t.cores();
    }
    let indicator = |core: Option<usize>| -> Vec<f64> {
        t.times.iter().map(|&s| if timeline.allocated(s, core) { 1.0 } else { 0.0 }).collect()
    };
    out.push(Metric::node(ALLOCATED), indicator(None));
    for c in cores {
        out.push(Metric::core(ALLOCATED, c), indicator(Some(c)));
    }
    let n = out.metrics.len();
    for i in 0..n {
        let m = &out.metrics[i];
        let der = Metric {
            base: format!("{}{DER_SUFFIX}", m.base),
            scope: m.scope,
        };
        let col = rate(&out.times, &out.columns[i]);
        out.push(der, col);
    }
    Ok(out)
}

pub fn postprocess(
    t: &Telemetry,
    counter_patterns: &[String],
    timeline: &Timeline,
) -> Result<(Telemetry, PostprocessPlan), FeatureError> {
    let plan = plan_postprocess(t, counter_patterns);
    let out = apply_plan(t, &plan, timeline)?;
    Ok((out, plan))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Labeling {
    #[default]
    Mode,
    Recent,
}

impl Labeling {
    pub fn label<S: AsRef<str>>(self, labels: &[S]) -> Option<String> {
        match self {
            Labeling::Mode => label_mode(labels),
            Labeling::Recent => label_recent(labels),
        }
    }
}

impl FromStr for Labeling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mode" => Ok(Labeling::Mode),
            "recent" => Ok(Labeling::Recent),
            _ => Err(format!("unknown labeling '{s}' (mode or recent)")),
        }
    }
}

impl fmt::Display for Labeling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Labeling::Mode => "mode",
            Labeling::Recent => "recent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Seconds.
    pub window: i64,
    pub step: i64,
    pub min_samples: usize,
    pub labeling: Labeling,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window: 60,
            step: 10,
            min_samples: 30,
            labeling: Labeling::Mode,
        }
    }
}

/// Series name used in features for `m` as seen from one core. Core-level
/// bases that clash with a node-level base get `_core` inserted before any
/// `_der` suffix.
fn series_name(m: &Metric, node_roots: &HashSet<&str>) -> String {
    match m.scope {
        Scope::Node => m.base.clone(),
        Scope::Core(_) => {
            let (root, der) = match m.base.strip_suffix(DER_SUFFIX) {
                Some(r) => (r, DER_SUFFIX),
                None => (m.base.as_str(), ""),
            };
            if node_roots.contains(root) {
                format!("{root}{CORE_SUFFIX}{der}")
            } else {
                m.base.clone()
            }
        }
    }
}

/// Series visible to `core`: node metrics then that core's metrics, as
/// (name, column index).
pub fn core_series(t: &Telemetry, core: usize) -> Vec<(String, usize)> {
    let node_roots: HashSet<&str> = t
        .metrics
        .iter()
        .filter(|m| m.scope == Scope::Node)
        .map(|m| m.base.strip_suffix(DER_SUFFIX).unwrap_or(&m.base))
        .collect();
    let node = t.metrics.iter().enumerate().filter(|(_, m)| m.scope == Scope::Node);
    let own = t.metrics.iter().enumerate().filter(|(_, m)| m.scope == Scope::Core(core));
    node.chain(own).map(|(i, m)| (series_name(m, &node_roots), i)).collect()
}

pub fn feature_names(series: &[String]) -> Vec<String> {
    series.iter().flat_map(|s| STAT_NAMES.iter().map(move |st| format!("{s}_{st}"))).collect()
}

/// Column lookup for one core in a fixed series order.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub core: usize,
    pub series: Vec<String>,
    pub columns: Vec<Option<usize>>,
}

impl Layout {
    /// Maps `series` onto `t` for `core`; series `t` lacks stay unmapped.
    pub fn new(t: &Telemetry, core: usize, series: &[String]) -> Layout {
        let have: BTreeMap<String, usize> = core_series(t, core).into_iter().collect();
        Layout {
            core,
            series: series.to_vec(),
            columns: series.iter().map(|s| have.get(s).copied()).collect(),
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        feature_names(&self.series)
    }

    pub fn missing(&self) -> Vec<&str> {
        self.series.iter().zip(&self.columns).filter(|(_, c)| c.is_none()).map(|(s, _)| s.as_str()).collect()
    }
}

/// Feature vector for the window `[end - window, end)`, or `None` when fewer
/// than `min_samples` samples fall inside. Statistics of a series with no
/// present samples are 0.
pub fn window_features(t: &Telemetry, layout: &Layout, end: i64, cfg: &FeatureConfig) -> Option<Vec<f64>> {
    let a = t.times.partition_point(|s| *s < end - cfg.window);
    let b = t.times.partition_point(|s| *s < end);
    if b - a < cfg.min_samples.max(1) {
        return None;
    }
    let mut out = Vec::with_capacity(layout.series.len() * STAT_NAMES.len());
    let mut buf = Vec::with_capacity(b - a);
    for col in &layout.columns {
        buf.clear();
        if let Some(i) = col {
            buf.extend(present(&t.columns[*i][a..b]));
            buf.sort_by(f64::total_cmp);
        }
        let s = stats::compute_stats_sorted(&buf).unwrap_or([0.0; 11]);
        out.extend(s.iter().map(|v| if v.is_finite() { *v } else { 0.0 }));
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub window_end: i64,
    pub core: usize,
    pub values: Vec<f64>,
    pub label: String,
    /// The window saw more than one state.
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub series: Vec<String>,
    pub names: Vec<String>,
    pub cores: Vec<usize>,
    pub config: FeatureConfig,
    pub counter_patterns: Vec<String>,
    pub plan: PostprocessPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub schema: FeatureSchema,
    /// Ordered by window end, then core.
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn names(&self) -> &[String] {
        &self.schema.names
    }

    pub fn classes(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.label.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn window_ends(&self) -> Vec<i64> {
        let mut w: Vec<i64> = self.rows.iter().map(|r| r.window_end).collect();
        w.dedup();
        w
    }
}

/// Window end points from `first + window` while `end <= last + 1`.
pub fn window_ends(times: &[i64], cfg: &FeatureConfig) -> Vec<i64> {
    let (Some(&first), Some(&last)) = (times.first(), times.last()) else {
        return Vec::new();
    };
    let step = cfg.step.max(1) as usize;
    (first + cfg.window..=last + 1).step_by(step).collect()
}

/// Feature rows for every core of post-processed telemetry. Cores share
/// the series list of the lowest core.
pub fn build_feature_sets(
    t: &Telemetry,
    timeline: &Timeline,
    cfg: &FeatureConfig,
    plan: PostprocessPlan,
    counter_patterns: Vec<String>,
) -> Result<FeatureTable, FeatureError> {
    t.check_ordered("telemetry")?;
    let mut cores = t.cores();
    if cores.is_empty() {
        cores.push(0);
    }
    let series: Vec<String> = core_series(t, cores[0]).into_iter().map(|(s, _)| s).collect();
    let layouts: Vec<Layout> = cores.iter().map(|&c| Layout::new(t, c, &series)).collect();
    for l in &layouts {
        if !l.missing().is_empty() {
            log::warn!("core {}: no data for {:?}", l.core, l.missing());
        }
    }
    let ends = window_ends(&t.times, cfg);
    let rows: Vec<Vec<FeatureRow>> = ends
        .par_iter()
        .map(|&end| {
            let states = timeline.labels(end - cfg.window, end);
            let label = cfg.labeling.label(&states).unwrap_or_else(|| HEALTHY.into());
            let ambiguous = is_ambiguous(&states);
            layouts
                .iter()
                .filter_map(|l| {
                    window_features(t, l, end, cfg).map(|values| FeatureRow {
                        window_end: end,
                        core: l.core,
                        values,
                        label: label.clone(),
                        ambiguous,
                    })
                })
                .collect()
        })
        .collect();
    let rows: Vec<FeatureRow> = rows.into_iter().flatten().collect();
    let skipped = ends.len() * cores.len() - rows.len();
    if skipped > 0 {
        log::info!("skipped {skipped} windows with fewer than {} samples", cfg.min_samples);
    }
    Ok(FeatureTable {
        schema: FeatureSchema {
            names: feature_names(&series),
            series,
            cores,
            config: cfg.clone(),
            counter_patterns,
            plan,
        },
        rows,
    })
}

/// Raw telemetry plus execution log to labelled feature rows.
pub fn extract_features(
    raw: &Telemetry,
    log: &[ExecutionLogEntry],
    counter_patterns: &[String],
    cfg: &FeatureConfig,
) -> Result<FeatureTable, FeatureError> {
    let timeline = Timeline::from_log(log);
    let (post, plan) = postprocess(raw, counter_patterns, &timeline)?;
    build_feature_sets(&post, &timeline, cfg, plan, counter_patterns.to_vec())
}

pub fn feature_file_name(core: usize) -> String {
    format!("features_core{core}.csv")
}

/// One CSV per core plus a JSON schema sidecar.
pub fn write_feature_dir(dir: &Path, table: &FeatureTable) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for &core in &table.schema.cores {
        let mut w = BufWriter::new(File::create(dir.join(feature_file_name(core)))?);
        write!(w, "window_end")?;
        for n in &table.schema.names {
            write!(w, ",{n}")?;
        }
        writeln!(w, ",label,ambiguous")?;
        for r in table.rows.iter().filter(|r| r.core == core) {
            write!(w, "{}", r.window_end)?;
            for v in &r.values {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{},{}", r.label, r.ambiguous)?;
        }
        w.flush()?;
    }
    let schema = serde_json::to_string_pretty(&table.schema).map_err(io::Error::other)?;
    fs::write(dir.join(SCHEMA_FILE), schema)
}

pub fn read_feature_dir(dir: &Path) -> Result<FeatureTable, FeatureError> {
    let schema_path = dir.join(SCHEMA_FILE);
    let text = fs::read_to_string(&schema_path)?;
    let schema: FeatureSchema = serde_json::from_str(&text).map_err(|e| FeatureError::Format {
        file: schema_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let width = schema.names.len();
    let mut rows = Vec::new();
    for &core in &schema.cores {
        let path = dir.join(feature_file_name(core));
        let file = path.display().to_string();
        let bad = |line: usize, reason: String| FeatureError::Format {
            file: file.clone(),
            reason: format!("line {line}: {reason}"),
        };
        let text = fs::read_to_string(&path)?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.split(',').count() == width + 3 => {}
            _ => return Err(bad(1, format!("header does not have {} columns", width + 3))),
        }
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != width + 3 {
                return Err(bad(i + 1, format!("expected {} fields, got {}", width + 3, f.len())));
            }
            let window_end = f[0].parse().map_err(|_| bad(i + 1, "bad window_end".into()))?;
            let values = f[1..=width]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(i + 1, e.to_string()))?;
            rows.push(FeatureRow {
                window_end,
                core,
                values,
                label: f[width + 1].to_string(),
                ambiguous: f[width + 2] == "true",
            });
        }
    }
    rows.sort_by_key(|r| (r.window_end, r.core));
    Ok(FeatureTable { schema, rows })
}
