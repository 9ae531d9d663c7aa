//! Desk-scale end-to-end run: workload generation, an optional real probe
//! session, simulated telemetry, features, cross-validation and a model.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::config::ToolConfig;
use crate::controller::{run_session, ControllerOptions};
use crate::engine::{self, EngineConfig};
use crate::execlog::{read_log, ExecutionLogWriter};
use crate::features::{
    default_counter_patterns, extract_features, write_feature_dir, FeatureConfig, FeatureTable, Labeling,
};
use crate::faults::FaultKind;
use crate::ml::{cross_validate, CvParams, CvReport, FoldOrder, ForestParams, Model};
use crate::task::write_workload;
use crate::telemetry::{plugin_of, read_telemetry_dir, simulate, synthesize_log, write_telemetry_dir, SimConfig};
use crate::workloadgen::{generate_workload, CommandSpec, DistributionSpec, GenSpec};

pub const DEMO_HOST: &str = "node0";
pub const DEMO_T0: i64 = 1_700_000_000;

#[derive(Debug)]
pub struct DemoError {
    pub stage: &'static str,
    pub reason: String,
}

impl fmt::Display for DemoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "demo stage {}: {}", self.stage, self.reason)
    }
}

impl std::error::Error for DemoError {}

fn stage<E: fmt::Display>(stage: &'static str) -> impl Fn(E) -> DemoError {
    move |e| DemoError {
        stage,
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub out: PathBuf,
    pub seed: u64,
    pub labeling: Labeling,
    /// Simulated seconds.
    pub span: u64,
    pub cores: usize,
    pub folds: usize,
    pub forest: ForestParams,
    /// Runs the probe workload on a local engine with this binary standing in
    /// for `faultlab` in commands. `None` skips the probe.
    pub probe_exe: Option<PathBuf>,
}

impl DemoOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        DemoOptions {
            out: out.into(),
            seed: 1,
            labeling: Labeling::Mode,
            span: 7200,
            cores: 4,
            folds: 5,
            forest: ForestParams::default(),
            probe_exe: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoOutcome {
    pub timestamp: CvReport,
    pub shuffled: CvReport,
    pub windows: usize,
    pub features: usize,
    pub faults: usize,
    #[serde(skip)]
    pub table: FeatureTable,
}

/// Eight fault programs at both intensities on core 0 and a CPU-bound
/// application on cores 2-3.
pub fn demo_spec(seed: u64, span: u64) -> GenSpec {
    let mut commands = Vec::new();
    let mut app = CommandSpec::new("faultlab bench cpu --threads 2 --duration {duration}", false);
    app.cores = Some(vec![2, 3]);
    commands.push(app);
    for k in FaultKind::ALL {
        for low in ["", " --low"] {
            let mut c = CommandSpec::new(format!("faultlab fault {} --duration {{duration}}{low}", k.name()), true);
            c.cores = Some(vec![0]);
            commands.push(c);
        }
    }
    GenSpec {
        time_span: span,
        app_duration: DistributionSpec::Normal { mu: 300.0, sigma: 60.0 },
        app_interarrival: DistributionSpec::Normal { mu: 420.0, sigma: 60.0 },
        fault_duration: DistributionSpec::Normal { mu: 90.0, sigma: 15.0 },
        fault_interarrival: DistributionSpec::ExpWeibull {
            k: 1.0,
            lambda: 120.0,
            alpha: 1.0,
        },
        commands,
        seed,
    }
}

fn run_probe(probe: &crate::task::Workload, exe: &Path, dir: &Path) -> Result<(), DemoError> {
    let exe_s = exe.display().to_string();
    let tasks = probe
        .tasks()
        .iter()
        .map(|t| {
            let mut t = t.clone();
            if let Some(rest) = t.args.strip_prefix("faultlab ") {
                t.args = format!("{} {rest}", shlex::try_quote(&exe_s).map(|s| s.into_owned()).unwrap_or(exe_s.clone()));
            }
            t
        })
        .collect();
    let w = crate::task::Workload::new(tasks).map_err(stage("probe"))?;
    let results = dir.join("engine");
    let handle = engine::start(EngineConfig::local(&results)).map_err(stage("probe"))?;
    let addr = handle.local_addr().to_string();
    let opts = ControllerOptions {
        log_dir: dir.to_path_buf(),
        end_grace: Duration::from_secs(15),
        ..Default::default()
    };
    let summary = run_session(&w, &[addr], &ToolConfig::default(), &opts).map_err(stage("probe"));
    handle.shutdown();
    let summary = summary?;
    log::info!("probe session: {}", summary.render());
    Ok(())
}

pub fn run_demo(opts: &DemoOptions) -> Result<DemoOutcome, DemoError> {
    run_demo_with(opts, &demo_spec(opts.seed, opts.span))
}

/// As [`run_demo`] with a caller-supplied workload specification.
pub fn run_demo_with(opts: &DemoOptions, spec: &GenSpec) -> Result<DemoOutcome, DemoError> {
    let out = &opts.out;
    fs::create_dir_all(out).map_err(stage("setup"))?;
    let spec = spec.clone();
    fs::write(out.join("spec.txt"), spec.to_text()).map_err(stage("workload"))?;
    let (workload, probe) = generate_workload(&spec).map_err(stage("workload"))?;
    fs::write(out.join("workload.csv"), write_workload(&workload)).map_err(stage("workload"))?;
    fs::write(out.join("probe.csv"), write_workload(&probe)).map_err(stage("workload"))?;

    if let Some(exe) = &opts.probe_exe {
        let dir = out.join("probe");
        fs::create_dir_all(&dir).map_err(stage("probe"))?;
        run_probe(&probe, exe, &dir)?;
    }

    let sim = SimConfig {
        t0: DEMO_T0,
        span: opts.span,
        cores: opts.cores,
        seed: opts.seed,
        ..Default::default()
    };
    let telemetry = simulate(&workload, &sim);
    let tdir = out.join("telemetry");
    write_telemetry_dir(&tdir, &telemetry, plugin_of).map_err(stage("telemetry"))?;
    let log_path = out.join("session.log");
    if log_path.exists() {
        fs::remove_file(&log_path).map_err(stage("telemetry"))?;
    }
    let mut w = ExecutionLogWriter::create(&log_path).map_err(stage("telemetry"))?;
    for e in synthesize_log(&workload, DEMO_HOST, DEMO_T0) {
        w.append(&e).map_err(stage("telemetry"))?;
    }
    drop(w);

    let raw = read_telemetry_dir(&tdir).map_err(stage("features"))?;
    let log = read_log(&log_path).map_err(stage("features"))?;
    let cfg = FeatureConfig {
        labeling: opts.labeling,
        ..Default::default()
    };
    let table = extract_features(&raw, &log, &default_counter_patterns(), &cfg).map_err(stage("features"))?;
    write_feature_dir(&out.join("features"), &table).map_err(stage("features"))?;

    let cv = |order| CvParams {
        folds: opts.folds,
        order,
        seed: opts.seed,
        exclude_ambiguous: false,
        forest: ForestParams {
            seed: opts.seed,
            ..opts.forest
        },
    };
    let timestamp = cross_validate(&table, &cv(FoldOrder::Timestamp)).map_err(stage("train"))?;
    let shuffled = cross_validate(&table, &cv(FoldOrder::Shuffled)).map_err(stage("train"))?;
    let model = Model::train(&table, &ForestParams { seed: opts.seed, ..opts.forest }, false).map_err(stage("train"))?;
    model.save(&out.join("model.json")).map_err(stage("train"))?;

    let report = format!(
        "{}folds_mean,,,{:.6},\n",
        timestamp.pooled.to_csv(),
        timestamp.overall_f
    );
    fs::write(out.join("report.csv"), report).map_err(stage("report"))?;
    let report = format!("{}folds_mean,,,{:.6},\n", shuffled.pooled.to_csv(), shuffled.overall_f);
    fs::write(out.join("report_shuffled.csv"), report).map_err(stage("report"))?;

    let outcome = DemoOutcome {
        windows: table.window_ends().len(),
        features: table.names().len(),
        faults: workload.tasks().iter().filter(|t| t.is_fault).count(),
        timestamp,
        shuffled,
        table,
    };
    let summary = serde_json::to_string_pretty(&outcome).map_err(stage("report"))?;
    fs::write(out.join("summary.json"), summary).map_err(stage("report"))?;
    Ok(outcome)
}
