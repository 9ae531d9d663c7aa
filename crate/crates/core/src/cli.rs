//! The `faultlab` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Errors are one
//! line on stderr starting with `error: usage:` or `error: runtime:`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::ToolConfig;
use crate::controller::{run_session, ControllerOptions};
use crate::demo::{run_demo, DemoOptions};
use crate::engine::{self, EngineConfig};
use crate::execlog::read_log;
use crate::faults::{run_benchmark, BenchKind, BenchSpec};
use crate::faults::{request_stop, run_fault_program, FaultKind, FaultProgramSpec, Intensity};
use crate::features::{
    apply_plan, default_counter_patterns, extract_features, read_feature_dir, window_ends, window_features,
    write_feature_dir, FeatureConfig, Labeling, Layout, Timeline,
};
use crate::ml::{cross_validate, CvParams, FoldOrder, ForestParams, Model};
use crate::task::{parse_workload, write_workload};
use crate::telemetry::{collect_procfs, read_telemetry_dir};
use crate::workloadgen::{busy_fraction, generate_workload, GenSpec};

pub const CONFIG_ENV: &str = "FAULTLAB_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "faultlab", version, about = "Fault injection and online fault classification")]
pub struct Cli {
    /// Tool configuration file (falls back to $FAULTLAB_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an injection engine on this node.
    Engine(EngineArgs),
    /// Drive a workload against one or more engines.
    Controller(ControllerArgs),
    /// Generate a workload and its probe from a specification.
    Genwl(GenwlArgs),
    /// Run one fault-triggering program.
    Fault(FaultArgs),
    /// Run a CPU, memory or I/O benchmark.
    Bench(BenchArgs),
    /// Sample /proc into telemetry CSV files.
    Collect(CollectArgs),
    /// Build labelled feature sets from telemetry and an execution log.
    Features(FeaturesArgs),
    /// Cross-validate and train a random forest.
    Train(TrainArgs),
    /// Score a model on feature sets.
    Eval(EvalArgs),
    /// Classify telemetry windows with a trained model.
    Detect(DetectArgs),
    /// Run the whole pipeline on a simulated two-hour session.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct EngineArgs {
    /// Listen address [default: 0.0.0.0:<listen_port from config, 30000>].
    #[arg(long)]
    pub bind: Option<String>,
    /// Worker threads [default: pool_size from config, 8].
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Restart tasks that end early.
    #[arg(long)]
    pub exact: bool,
    /// Journal directory [default: results_dir from config, results].
    #[arg(long)]
    pub results_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ControllerArgs {
    /// Workload CSV file.
    #[arg(long)]
    pub workload: PathBuf,
    /// Comma-separated host[:port] list [default: target_hosts from config].
    #[arg(long)]
    pub hosts: Option<String>,
    /// Execution log directory [default: results_dir from config, results].
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    /// Seconds to wait for each host at session start.
    #[arg(long, default_value_t = 10)]
    pub connect_timeout: u64,
    /// Seconds to wait past the last task's end for missing statuses.
    #[arg(long, default_value_t = 30)]
    pub end_grace: u64,
}

#[derive(Debug, Args)]
pub struct GenwlArgs {
    /// Generation specification file.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output workload CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Output probe CSV [default: <out stem>_probe.csv next to --out].
    #[arg(long)]
    pub probe: Option<PathBuf>,
    /// Overrides the seed in the specification.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FaultArgs {
    /// leak, memeater, ddot, dial, cpufreq, pagefail, ioerr or copy.
    pub name: FaultKind,
    /// Seconds to run.
    #[arg(long, default_value_t = 60)]
    pub duration: u64,
    /// Low-intensity mode.
    #[arg(long)]
    pub low: bool,
    /// Use the privileged OS interfaces instead of simulating.
    #[arg(long)]
    pub real: bool,
    /// Confirms real mode may touch system settings.
    #[arg(long)]
    pub i_have_root: bool,
    /// Scratch directory [default: system temp dir].
    #[arg(long)]
    pub workdir: Option<PathBuf>,
    /// File receiving simulated state for telemetry.
    #[arg(long)]
    pub side_channel: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// cpu, mem or io.
    pub kind: BenchKind,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Seconds to run.
    #[arg(long, default_value_t = 10)]
    pub duration: u64,
    /// Fixed work units per thread instead of a time limit.
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Scratch directory for the io benchmark [default: system temp dir].
    #[arg(long)]
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Seconds to sample.
    #[arg(long, default_value_t = 60)]
    pub duration: u64,
    /// Seconds between samples.
    #[arg(long, default_value_t = 1.0)]
    pub interval: f64,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Directory of telemetry CSV files.
    #[arg(long)]
    pub telemetry: PathBuf,
    /// Execution log of the session.
    #[arg(long)]
    pub log: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Window length in seconds.
    #[arg(long, default_value_t = 60)]
    pub window: i64,
    /// Seconds between window ends.
    #[arg(long, default_value_t = 10)]
    pub step: i64,
    /// Windows with fewer samples are skipped.
    #[arg(long, default_value_t = 30)]
    pub min_samples: usize,
    /// mode or recent.
    #[arg(long, default_value_t = Labeling::Mode)]
    pub labeling: Labeling,
    /// Comma-separated counter name patterns [default: built-in list].
    #[arg(long)]
    pub counters: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature directory.
    #[arg(long)]
    pub features: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub model: PathBuf,
    /// timestamp or shuffled.
    #[arg(long, default_value = "timestamp")]
    pub order: FoldOrder,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 30)]
    pub trees: usize,
    #[arg(long, default_value_t = 20)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 1)]
    pub min_samples_leaf: usize,
    /// Features tried per split [default: floor(sqrt(F))].
    #[arg(long)]
    pub features_per_split: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Leave out windows that span more than one state.
    #[arg(long)]
    pub exclude_ambiguous: bool,
    /// Writes the cross-validation report as CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Writes the report as CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of telemetry CSV files.
    #[arg(long)]
    pub telemetry: PathBuf,
    /// Execution log for the `allocated` metric [default: no applications].
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Keep polling for new samples.
    #[arg(long)]
    pub follow: bool,
    /// Seconds between polls.
    #[arg(long, default_value_t = 2.0)]
    pub poll: f64,
    /// Stop after this many windows.
    #[arg(long)]
    pub max_windows: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Output directory.
    #[arg(long, default_value = "demo-out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// mode or recent.
    #[arg(long, default_value_t = Labeling::Mode)]
    pub labeling: Labeling,
    /// Do not run the probe workload on a local engine.
    #[arg(long)]
    pub skip_probe: bool,
    /// Simulated seconds.
    #[arg(long, default_value_t = 7200)]
    pub span: u64,
}

fn load_config(path: Option<&Path>) -> Result<ToolConfig> {
    let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    match path.map(Path::to_path_buf).or(env) {
        Some(p) => ToolConfig::load(&p).with_context(|| format!("config {}", p.display())),
        None => Ok(ToolConfig::default()),
    }
}

fn with_port(host: &str, port: u16) -> String {
    if host.rsplit_once(':').is_some_and(|(_, p)| p.parse::<u16>().is_ok()) {
        host.to_string()
    } else {
        format!("{host}:{port}")
    }
}

static TERMINATED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_term(_: libc::c_int) {
    TERMINATED.store(true, Ordering::SeqCst);
    request_stop();
}

fn install_term_handler() {
    let handler: extern "C" fn(libc::c_int) = on_term;
    // SAFETY: the handler only stores to atomics.
    unsafe {
        libc::signal(libc::SIGTERM, handler as libc::sighandler_t);
        libc::signal(libc::SIGINT, handler as libc::sighandler_t);
    }
}

fn cmd_engine(a: EngineArgs, cfg: ToolConfig) -> Result<()> {
    let mut ec = EngineConfig::from_tool(&cfg);
    if let Some(b) = a.bind {
        ec.bind = b;
    }
    if let Some(n) = a.pool_size {
        if n == 0 {
            bail!("pool size must be at least 1");
        }
        ec.pool_size = n;
    }
    ec.exact_duration_mode |= a.exact;
    if let Some(d) = a.results_dir {
        ec.results_dir = d;
    }
    let handle = engine::start(ec.clone()).with_context(|| format!("engine on {}", ec.bind))?;
    println!("engine listening on {}", handle.local_addr());
    handle.wait();
    Ok(())
}

fn cmd_controller(a: ControllerArgs, cfg: ToolConfig) -> Result<()> {
    let text = fs::read_to_string(&a.workload).with_context(|| format!("cannot read workload {}", a.workload.display()))?;
    let workload = parse_workload(&text).with_context(|| format!("workload {}", a.workload.display()))?;
    let hosts: Vec<String> = match &a.hosts {
        Some(h) => crate::config::split_list(h),
        None => cfg.target_hosts.clone(),
    };
    let hosts: Vec<String> = hosts.iter().map(|h| with_port(h, cfg.listen_port)).collect();
    if hosts.is_empty() {
        bail!("no target hosts (use --hosts or target_hosts in the config)");
    }
    let opts = ControllerOptions {
        log_dir: a.log_dir.unwrap_or_else(|| cfg.results_dir.clone()),
        connect_timeout: Duration::from_secs(a.connect_timeout),
        end_grace: Duration::from_secs(a.end_grace),
        ..Default::default()
    };
    let summary = run_session(&workload, &hosts, &cfg, &opts)?;
    print!("{}", summary.render());
    Ok(())
}

fn cmd_genwl(a: GenwlArgs) -> Result<()> {
    let text = fs::read_to_string(&a.spec).with_context(|| format!("cannot read spec {}", a.spec.display()))?;
    let mut spec = GenSpec::parse(&text).with_context(|| format!("spec {}", a.spec.display()))?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let (w, probe) = generate_workload(&spec)?;
    let probe_path = a.probe.unwrap_or_else(|| {
        let stem = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "workload".into());
        a.out.with_file_name(format!("{stem}_probe.csv"))
    });
    fs::write(&a.out, write_workload(&w)).with_context(|| format!("cannot write {}", a.out.display()))?;
    fs::write(&probe_path, write_workload(&probe)).with_context(|| format!("cannot write {}", probe_path.display()))?;
    let faults = w.tasks().iter().filter(|t| t.is_fault).count();
    println!(
        "{} tasks ({} faults, {} applications), busy fraction {:.3}",
        w.len(),
        faults,
        w.len() - faults,
        busy_fraction(&w, spec.time_span)
    );
    println!("workload: {}\nprobe: {}", a.out.display(), probe_path.display());
    Ok(())
}

fn cmd_fault(a: FaultArgs) -> Result<()> {
    install_term_handler();
    let intensity = if a.low { Intensity::Low } else { Intensity::Normal };
    let mut spec = FaultProgramSpec::new(a.name, intensity, Duration::from_secs(a.duration));
    if let Some(w) = a.workdir {
        spec.workdir = w;
    }
    spec.side_channel = a.side_channel;
    spec.real = a.real;
    spec.i_have_root = a.i_have_root;
    spec.seed = a.seed;
    let report = run_fault_program(&spec)?;
    println!("{report}");
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    install_term_handler();
    if a.threads == 0 {
        bail!("threads must be at least 1");
    }
    let mut spec = BenchSpec::new(a.kind, a.threads, Duration::from_secs(a.duration));
    spec.iterations = a.iterations;
    if let Some(w) = a.workdir {
        spec.workdir = w;
    }
    let report = run_benchmark(&spec)?;
    println!("{report}");
    Ok(())
}

fn cmd_collect(a: CollectArgs) -> Result<()> {
    install_term_handler();
    if !(a.interval > 0.0) {
        bail!("interval must be positive");
    }
    let rows = collect_procfs(
        &a.out,
        Duration::from_secs(a.duration),
        Duration::from_secs_f64(a.interval),
        &TERMINATED,
    )?;
    println!("{rows} samples written to {}", a.out.display());
    Ok(())
}

fn cmd_features(a: FeaturesArgs) -> Result<()> {
    let raw = read_telemetry_dir(&a.telemetry)?;
    let log = read_log(&a.log)?;
    let patterns = match &a.counters {
        Some(c) => crate::config::split_list(c),
        None => default_counter_patterns(),
    };
    let cfg = FeatureConfig {
        window: a.window,
        step: a.step,
        min_samples: a.min_samples,
        labeling: a.labeling,
    };
    if cfg.window <= 0 || cfg.step <= 0 {
        bail!("window and step must be positive");
    }
    let table = extract_features(&raw, &log, &patterns, &cfg)?;
    write_feature_dir(&a.out, &table)?;
    println!(
        "{} feature sets over {} windows, {} features per set, classes: {}",
        table.len(),
        table.window_ends().len(),
        table.names().len(),
        table.classes().join(",")
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let table = read_feature_dir(&a.features)?;
    if table.is_empty() {
        bail!("no feature sets in {}", a.features.display());
    }
    let forest = ForestParams {
        n_trees: a.trees,
        max_depth: Some(a.max_depth),
        min_samples_leaf: a.min_samples_leaf.max(1),
        features_per_split: a.features_per_split,
        bootstrap: true,
        seed: a.seed,
    };
    let cv = cross_validate(
        &table,
        &CvParams {
            folds: a.folds,
            order: a.order,
            seed: a.seed,
            exclude_ambiguous: a.exclude_ambiguous,
            forest,
        },
    )?;
    println!("{}-fold cross-validation, mean fold macro F {:.4}", a.folds, cv.overall_f);
    print!("{}", cv.pooled.render());
    if let Some(r) = &a.report {
        let text = format!("{}folds_mean,,,{:.6},\n", cv.pooled.to_csv(), cv.overall_f);
        fs::write(r, text).with_context(|| format!("cannot write {}", r.display()))?;
    }
    let model = Model::train(&table, &forest, a.exclude_ambiguous)?;
    model.save(&a.model)?;
    println!("top features:");
    for (name, v) in model.top_features(10)? {
        println!("  {v:.4} {name}");
    }
    println!("model: {}", a.model.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let table = read_feature_dir(&a.features)?;
    let report = model.evaluate(&table)?;
    print!("{}", report.render());
    if let Some(r) = &a.report {
        fs::write(r, report.to_csv()).with_context(|| format!("cannot write {}", r.display()))?;
    }
    Ok(())
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    install_term_handler();
    let model = Model::load(&a.model)?;
    let timeline = match &a.log {
        Some(p) => Timeline::from_log(&read_log(p)?),
        None => Timeline::default(),
    };
    let cfg = model.schema.config.clone();
    let mut last_end = i64::MIN;
    let mut emitted = 0usize;
    let mut warned = false;
    let out = std::io::stdout();
    loop {
        match read_telemetry_dir(&a.telemetry) {
            Ok(raw) => {
                let post = apply_plan(&raw, &model.schema.plan, &timeline)?;
                let mut cores: Vec<usize> = post.cores().into_iter().filter(|c| model.schema.cores.contains(c)).collect();
                if cores.is_empty() {
                    cores = model.schema.cores.iter().copied().take(1).collect();
                }
                let layouts: Vec<Layout> = cores.iter().map(|&c| Layout::new(&post, c, &model.schema.series)).collect();
                if !warned {
                    for l in &layouts {
                        if !l.missing().is_empty() {
                            log::warn!("core {}: {} series missing, using zeros", l.core, l.missing().len());
                        }
                    }
                    warned = true;
                }
                let fresh: Vec<i64> = window_ends(&post.times, &cfg).into_iter().filter(|e| *e > last_end).collect();
                for end in fresh {
                    let mut lock = out.lock();
                    for l in &layouts {
                        if let Some(x) = window_features(&post, l, end, &cfg) {
                            writeln!(lock, "window_end={end} core={} label={}", l.core, model.predict(&x)?)?;
                        }
                    }
                    lock.flush()?;
                    last_end = end;
                    emitted += 1;
                    if a.max_windows.is_some_and(|m| emitted >= m) {
                        return Ok(());
                    }
                }
            }
            Err(e) if a.follow => log::debug!("telemetry not readable yet: {e}"),
            Err(e) => return Err(e.into()),
        }
        if !a.follow || TERMINATED.load(Ordering::SeqCst) {
            return Ok(());
        }
        thread::sleep(Duration::from_secs_f64(a.poll.max(0.05)));
    }
}

fn cmd_demo(a: DemoArgs) -> Result<()> {
    let mut opts = DemoOptions::new(&a.out);
    opts.seed = a.seed;
    opts.labeling = a.labeling;
    opts.span = a.span;
    if !a.skip_probe {
        opts.probe_exe = Some(std::env::current_exe().context("locating the faultlab binary")?);
    }
    let r = run_demo(&opts)?;
    println!(
        "{} windows, {} features, {} fault tasks",
        r.windows, r.features, r.faults
    );
    println!("time-ordered folds: mean macro F {:.4}", r.timestamp.overall_f);
    print!("{}", r.timestamp.pooled.render());
    println!("shuffled folds: mean macro F {:.4}", r.shuffled.overall_f);
    print!("{}", r.shuffled.pooled.render());
    println!("report: {}", a.out.join("report.csv").display());
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    let cfg = match &cli.command {
        Command::Engine(_) | Command::Controller(_) => Some(load_config(cli.config.as_deref())?),
        _ => None,
    };
    match cli.command {
        Command::Engine(a) => cmd_engine(a, cfg.unwrap_or_default()),
        Command::Controller(a) => cmd_controller(a, cfg.unwrap_or_default()),
        Command::Genwl(a) => cmd_genwl(a),
        Command::Fault(a) => cmd_fault(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Collect(a) => cmd_collect(a),
        Command::Features(a) => cmd_features(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Demo(a) => cmd_demo(a),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn run_cli(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let reason = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error: usage: {} (see faultlab --help)", one_line(reason));
            return 1;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: runtime: {}", one_line(&format!("{e:#}")));
            2
        }
    }
}
