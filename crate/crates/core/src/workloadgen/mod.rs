//! Random workload generation.
//!
//! Applications and faults form two independent streams: each start follows
//! the previous one by an inter-arrival draw and each task lasts a duration
//! draw. Fault tasks never overlap; a fault that would start before the
//! previous one ends is pushed back to that end.
//!
//! ```text
//! time_span = 86400
//! seed = 7
//! app_duration = normal(1800, 600)
//! app_interarrival = exp_weibull(1, 2400, 1)
//! fault_duration = johnson_su(0, 1, 300, 60)
//! fault_interarrival = exp_weibull(0.9, 600, 1)
//! app_command = 1;0-7;faultlab bench cpu --duration {duration}
//! fault_command = 2;;faultlab fault leak --duration {duration}
//! ```

mod dist;

use std::collections::HashSet;

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use dist::{exp_weibull_quantile, fit_empirical, DistError, DistributionSpec};

use crate::config::{parse_pairs, ConfigError};
use crate::task::{format_core_list, parse_core_list, Task, Workload, WorkloadError};

pub const PROBE_DURATION: u64 = 10;
pub const PROBE_SPACING: u64 = 15;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("missing key {0:?}")]
    Missing(&'static str),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("invalid generator settings: {0}")]
    Invalid(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandSpec {
    /// Command line; `{duration}` is replaced by the task duration.
    pub template: String,
    pub is_fault: bool,
    pub weight: f64,
    pub cores: Option<Vec<usize>>,
}

impl CommandSpec {
    pub fn new(template: impl Into<String>, is_fault: bool) -> Self {
        CommandSpec {
            template: template.into(),
            is_fault,
            weight: 1.0,
            cores: None,
        }
    }

    pub fn render(&self, duration: u64) -> String {
        self.template.replace("{duration}", &duration.to_string())
    }

    fn parse(value: &str, is_fault: bool) -> Result<Self, String> {
        let mut parts = value.splitn(3, ';');
        let weight_s = parts.next().unwrap_or("").trim();
        let cores_s = parts.next().ok_or("expected weight;cores;command")?.trim();
        let template = parts.next().ok_or("expected weight;cores;command")?.trim();
        let weight = if weight_s.is_empty() {
            1.0
        } else {
            weight_s.parse::<f64>().map_err(|_| format!("bad weight {weight_s:?}"))?
        };
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(format!("weight must be non-negative, got {weight_s}"));
        }
        if template.is_empty() {
            return Err("empty command".into());
        }
        let cores = parse_core_list(cores_s).map_err(|e| e.to_string())?;
        Ok(CommandSpec {
            template: template.to_string(),
            is_fault,
            weight,
            cores,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub time_span: u64,
    pub app_duration: DistributionSpec,
    pub app_interarrival: DistributionSpec,
    pub fault_duration: DistributionSpec,
    pub fault_interarrival: DistributionSpec,
    pub commands: Vec<CommandSpec>,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.time_span == 0 {
            return Err(GenError::Invalid("time_span must be positive".into()));
        }
        for d in [&self.app_duration, &self.app_interarrival, &self.fault_duration, &self.fault_interarrival] {
            d.validate()?;
        }
        if self.commands.is_empty() {
            return Err(GenError::Invalid("no commands given".into()));
        }
        for fault in [false, true] {
            let cmds: Vec<_> = self.commands.iter().filter(|c| c.is_fault == fault).collect();
            if !cmds.is_empty() && cmds.iter().map(|c| c.weight).sum::<f64>() <= 0.0 {
                let kind = if fault { "fault" } else { "application" };
                return Err(GenError::Invalid(format!("{kind} command weights sum to zero")));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, GenError> {
        let pairs = parse_pairs(text).map_err(|e| match e {
            ConfigError::Syntax { line, reason } => GenError::Syntax { line, reason },
            other => GenError::Invalid(other.to_string()),
        })?;
        let mut time_span = None;
        let mut seed = 0u64;
        let mut dists: [Option<DistributionSpec>; 4] = Default::default();
        let mut commands = Vec::new();
        for (line, key, value) in pairs {
            let syntax = |reason: String| GenError::Syntax { line, reason };
            match key.as_str() {
                "time_span" => time_span = Some(value.parse().map_err(|_| syntax(format!("bad time_span {value:?}")))?),
                "seed" => seed = value.parse().map_err(|_| syntax(format!("bad seed {value:?}")))?,
                "app_duration" | "app_interarrival" | "fault_duration" | "fault_interarrival" => {
                    let slot = ["app_duration", "app_interarrival", "fault_duration", "fault_interarrival"]
                        .iter()
                        .position(|k| *k == key)
                        .unwrap();
                    dists[slot] = Some(DistributionSpec::parse(&value).map_err(|e| syntax(e.to_string()))?);
                }
                "app_command" | "fault_command" => {
                    commands.push(CommandSpec::parse(&value, key == "fault_command").map_err(syntax)?)
                }
                other => return Err(syntax(format!("unknown key {other:?}"))),
            }
        }
        let [a, b, c, d] = dists;
        let spec = GenSpec {
            time_span: time_span.ok_or(GenError::Missing("time_span"))?,
            app_duration: a.ok_or(GenError::Missing("app_duration"))?,
            app_interarrival: b.ok_or(GenError::Missing("app_interarrival"))?,
            fault_duration: c.ok_or(GenError::Missing("fault_duration"))?,
            fault_interarrival: d.ok_or(GenError::Missing("fault_interarrival"))?,
            commands,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "time_span = {}\nseed = {}\napp_duration = {}\napp_interarrival = {}\nfault_duration = {}\nfault_interarrival = {}\n",
            self.time_span, self.seed, self.app_duration, self.app_interarrival, self.fault_duration, self.fault_interarrival
        );
        for c in &self.commands {
            let key = if c.is_fault { "fault_command" } else { "app_command" };
            let cores = c.cores.as_deref().map(format_core_list).unwrap_or_default();
            out.push_str(&format!("{key} = {};{cores};{}\n", c.weight, c.template));
        }
        out
    }
}

struct Stream<'a> {
    duration: &'a DistributionSpec,
    interarrival: &'a DistributionSpec,
    commands: Vec<&'a CommandSpec>,
    is_fault: bool,
}

fn run_stream(s: &Stream, span: u64, rng: &mut ChaCha8Rng, out: &mut Vec<Task>) {
    if s.commands.is_empty() {
        return;
    }
    let pick = WeightedIndex::new(s.commands.iter().map(|c| c.weight)).expect("weights validated");
    let mut nominal = if s.is_fault { s.interarrival.sample(rng) } else { 0.0 };
    let mut prev_end = 0u64;
    while nominal < span as f64 {
        let duration = (s.duration.sample(rng).round() as u64).max(1);
        let cmd = s.commands[pick.sample(rng)];
        let mut start = nominal.floor() as u64;
        if s.is_fault {
            start = start.max(prev_end);
            if start >= span {
                break;
            }
            prev_end = start + duration;
        }
        let mut t = Task::new(0, start, duration, s.is_fault, cmd.render(duration));
        t.cores = cmd.cores.clone();
        out.push(t);
        nominal += s.interarrival.sample(rng);
    }
}

/// Generates a workload and its probe file.
pub fn generate_workload(g: &GenSpec) -> Result<(Workload, Workload), GenError> {
    g.validate()?;
    let mut tasks = Vec::new();
    let streams = [
        Stream {
            duration: &g.app_duration,
            interarrival: &g.app_interarrival,
            commands: g.commands.iter().filter(|c| !c.is_fault).collect(),
            is_fault: false,
        },
        Stream {
            duration: &g.fault_duration,
            interarrival: &g.fault_interarrival,
            commands: g.commands.iter().filter(|c| c.is_fault).collect(),
            is_fault: true,
        },
    ];
    for (i, s) in streams.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
        rng.set_stream(i as u64 + 1);
        run_stream(s, g.time_span, &mut rng, &mut tasks);
    }
    if tasks.is_empty() {
        warn!("time span {} s produced an empty workload", g.time_span);
    }
    tasks.sort_by_key(|t| (t.timestamp, t.is_fault));
    for (i, t) in tasks.iter_mut().enumerate() {
        t.seq_num = i as u64 + 1;
    }
    Ok((Workload::new(tasks)?, probe(&g.commands)?))
}

/// One short task per distinct command.
pub fn probe(commands: &[CommandSpec]) -> Result<Workload, WorkloadError> {
    let mut seen = HashSet::new();
    let mut tasks = Vec::new();
    for c in commands {
        if !seen.insert(c.template.as_str()) {
            continue;
        }
        let n = tasks.len() as u64;
        let mut t = Task::new(n + 1, n * PROBE_SPACING, PROBE_DURATION, c.is_fault, c.render(PROBE_DURATION));
        t.cores = c.cores.clone();
        tasks.push(t);
    }
    Workload::new(tasks)
}

/// Share of `[0, span)` covered by application tasks, counting each task's
/// clipped duration.
pub fn busy_fraction(w: &Workload, span: u64) -> f64 {
    let busy: u64 = w
        .tasks()
        .iter()
        .filter(|t| !t.is_fault && t.timestamp < span)
        .map(|t| t.end().min(span) - t.timestamp)
        .sum();
    busy as f64 / span as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = "\
time_span = 7200
seed = 11
app_duration = normal(600, 100)
app_interarrival = exp_weibull(1, 800, 1)
fault_duration = normal(60, 20)
fault_interarrival = exp_weibull(1, 120, 1)
app_command = 1;0-3;faultlab bench cpu --duration {duration}
app_command = 1;;faultlab bench mem --duration {duration}
fault_command = 3;;faultlab fault leak --duration {duration}
fault_command = 1;;faultlab fault ddot --low --duration {duration}
";

    #[test]
    fn parse_round_trip() {
        let g = GenSpec::parse(SPEC).unwrap();
        assert_eq!(g.commands.len(), 4);
        assert_eq!(g.commands[0].cores, Some(vec![0, 1, 2, 3]));
        assert_eq!(GenSpec::parse(&g.to_text()).unwrap(), g);
        assert!(GenSpec::parse("time_span = 10\n").is_err());
        assert!(GenSpec::parse(&SPEC.replace("seed = 11", "colour = red")).is_err());
        assert!(GenSpec::parse(&SPEC.replace("fault_command = 3", "fault_command = -3")).is_err());
    }

    #[test]
    fn deterministic_and_valid() {
        let g = GenSpec::parse(SPEC).unwrap();
        let (a, probe_a) = generate_workload(&g).unwrap();
        let (b, _) = generate_workload(&g).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        assert!(a.tasks().iter().all(|t| t.timestamp < g.time_span));
        let seqs: Vec<u64> = a.tasks().iter().map(|t| t.seq_num).collect();
        assert_eq!(seqs, (1..=a.len() as u64).collect::<Vec<_>>());
        assert!(a.tasks().iter().any(|t| t.args == format!("faultlab bench cpu --duration {}", t.duration)));
        assert_eq!(probe_a.len(), 4);
        assert_eq!(probe_a.tasks()[3].timestamp, 45);
        assert!(probe_a.tasks().iter().all(|t| t.duration == PROBE_DURATION && t.args.ends_with("10")));
        let other = GenSpec { seed: 12, ..g };
        assert_ne!(generate_workload(&other).unwrap().0, a);
    }

    #[test]
    fn tiny_span_may_be_empty_but_valid() {
        let mut g = GenSpec::parse(SPEC).unwrap();
        g.commands.retain(|c| c.is_fault);
        g.time_span = 1;
        let (w, _) = generate_workload(&g).unwrap();
        assert!(w.len() <= 1);
    }
}
