//! Per-second system state derived from an execution log.

use std::collections::{BTreeSet, HashMap};

use crate::engine::{detail_field, split_args, WARNING_PREFIX};
use crate::execlog::{Event, ExecutionLogEntry};
use crate::task::parse_core_list;

pub const HEALTHY: &str = "healthy";

/// Majority label; ties go to the tied label seen latest.
pub fn label_mode<S: AsRef<str>>(labels: &[S]) -> Option<String> {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (i, l) in labels.iter().enumerate() {
        let e = counts.entry(l.as_ref()).or_insert((0, 0));
        e.0 += 1;
        e.1 = i;
    }
    counts.into_iter().max_by_key(|(_, (n, last))| (*n, *last)).map(|(l, _)| l.to_string())
}

/// Label of the most recent second.
pub fn label_recent<S: AsRef<str>>(labels: &[S]) -> Option<String> {
    labels.last().map(|l| l.as_ref().to_string())
}

pub fn is_ambiguous<S: AsRef<str>>(labels: &[S]) -> bool {
    labels.windows(2).any(|w| w[0].as_ref() != w[1].as_ref())
}

/// Label for a fault task: the word after `fault` in `faultlab fault <name>`,
/// otherwise the program's base name.
pub fn fault_label(args: &str) -> String {
    let argv = split_args(args).unwrap_or_default();
    if let Some(i) = argv.iter().position(|a| a == "fault") {
        if let Some(name) = argv.get(i + 1) {
            return name.clone();
        }
    }
    argv.iter()
        .find(|a| a.as_str() != "sudo" && !a.contains('='))
        .map(|p| p.rsplit('/').next().unwrap_or(p).to_string())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interval {
    pub start: i64,
    /// Exclusive.
    pub end: i64,
    pub label: String,
    /// `None` means every core.
    pub cores: Option<Vec<usize>>,
}

impl Interval {
    pub fn covers(&self, t: i64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn covers_core(&self, core: usize) -> bool {
        self.cores.as_ref().is_none_or(|c| c.contains(&core))
    }
}

/// Fault intervals (for labels) and application intervals (for the
/// `allocated` metric) of one session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timeline {
    pub faults: Vec<Interval>,
    pub apps: Vec<Interval>,
}

impl Timeline {
    /// Pairs each `task_start` with the task's terminal status. Tasks that
    /// never finish run until the last logged timestamp.
    pub fn from_log(entries: &[ExecutionLogEntry]) -> Timeline {
        let last = entries.iter().map(|e| e.abs_timestamp).max().unwrap_or(0);
        let mut open: HashMap<(String, u64), Interval> = HashMap::new();
        let mut fault_of: HashMap<(String, u64), bool> = HashMap::new();
        let mut tl = Timeline::default();
        let close = |tl: &mut Timeline, iv: Interval, fault: bool| {
            if iv.end > iv.start {
                if fault {
                    tl.faults.push(iv);
                } else {
                    tl.apps.push(iv);
                }
            }
        };
        for e in entries {
            let Some(seq) = e.seq_num else { continue };
            let key = (e.host.clone(), seq);
            match e.event {
                Event::TaskStart => {
                    let args = detail_field(&e.detail, "args").unwrap_or("");
                    let fault = detail_field(&e.detail, "fault") == Some("true");
                    let cores = match detail_field(&e.detail, "cores") {
                        None | Some("all") => None,
                        Some(c) => parse_core_list(c).ok().flatten(),
                    };
                    let label = if fault { fault_label(args) } else { args.to_string() };
                    fault_of.insert(key.clone(), fault);
                    open.insert(
                        key,
                        Interval {
                            start: e.abs_timestamp,
                            end: last,
                            label,
                            cores,
                        },
                    );
                }
                Event::TaskEnd | Event::Error if e.event == Event::TaskEnd || !e.detail.starts_with(WARNING_PREFIX) =>
                {
                    if let Some(mut iv) = open.remove(&key) {
                        iv.end = e.abs_timestamp;
                        close(&mut tl, iv, fault_of[&key]);
                    }
                }
                _ => {}
            }
        }
        let mut rest: Vec<_> = open.into_iter().collect();
        rest.sort_by_key(|(k, iv)| (iv.start, k.1));
        for (k, iv) in rest {
            close(&mut tl, iv, fault_of[&k]);
        }
        tl.faults.sort_by_key(|i| (i.start, i.end));
        tl.apps.sort_by_key(|i| (i.start, i.end));
        tl
    }

    /// State at second `t`: the active fault (latest started on overlap) or
    /// healthy.
    pub fn label_at(&self, t: i64) -> &str {
        let upto = self.faults.partition_point(|i| i.start <= t);
        self.faults[..upto]
            .iter()
            .rev()
            .find(|i| i.covers(t))
            .map(|i| i.label.as_str())
            .unwrap_or(HEALTHY)
    }

    pub fn labels(&self, from: i64, to: i64) -> Vec<&str> {
        (from..to).map(|t| self.label_at(t)).collect()
    }

    /// Distinct labels that can occur.
    pub fn classes(&self) -> BTreeSet<String> {
        let mut s: BTreeSet<String> = self.faults.iter().map(|i| i.label.clone()).collect();
        s.insert(HEALTHY.into());
        s
    }

    pub fn allocated(&self, t: i64, core: Option<usize>) -> bool {
        self.apps.iter().any(|i| i.covers(t) && core.is_none_or(|c| i.covers_core(c)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_and_recent() {
        let h = HEALTHY;
        assert_eq!(label_mode(&[h, h, "leak", "leak", "leak"]).unwrap(), "leak");
        assert_eq!(label_mode(&[h, h, h]).unwrap(), h);
        assert_eq!(label_mode(&[h, h, "leak", "leak"]).unwrap(), "leak");
        assert_eq!(label_mode(&["leak", "leak", h, h]).unwrap(), h);
        assert_eq!(label_recent(&[h, h, "leak"]).unwrap(), "leak");
        assert_eq!(label_recent(&["leak", h]).unwrap(), h);
        assert!(label_mode::<&str>(&[]).is_none());
        assert!(is_ambiguous(&[h, "leak"]));
        assert!(!is_ambiguous(&[h, h]));
    }

    #[test]
    fn labels_from_args() {
        assert_eq!(fault_label("faultlab fault leak --duration 60 --low"), "leak");
        assert_eq!(fault_label("sudo /opt/finj/bin/memeater 60"), "memeater");
        assert_eq!(fault_label("ENV=1 ./dial"), "dial");
    }

    fn entry(ts: i64, seq: u64, event: Event, detail: &str) -> ExecutionLogEntry {
        ExecutionLogEntry {
            abs_timestamp: ts,
            host: "n".into(),
            seq_num: Some(seq),
            event,
            detail: detail.into(),
        }
    }

    #[test]
    fn timeline_from_log() {
        let log = vec![
            entry(100, 1, Event::TaskStart, "attempt=1 cores=3 fault=false args=faultlab bench cpu"),
            entry(110, 2, Event::TaskStart, "attempt=1 fault=true args=faultlab fault leak --duration 20"),
            entry(111, 2, Event::Error, "warning: pin failed"),
            entry(130, 2, Event::TaskEnd, "reason=completed"),
            entry(140, 1, Event::TaskEnd, "reason=completed"),
            entry(150, 3, Event::TaskStart, "attempt=1 fault=true args=faultlab fault dial"),
            entry(160, 4, Event::TaskStart, "attempt=1 fault=false args=x"),
        ];
        let tl = Timeline::from_log(&log);
        assert_eq!(tl.label_at(109), HEALTHY);
        assert_eq!(tl.label_at(110), "leak");
        assert_eq!(tl.label_at(129), "leak");
        assert_eq!(tl.label_at(130), HEALTHY);
        assert_eq!(tl.label_at(155), "dial");
        assert!(tl.allocated(120, Some(3)));
        assert!(!tl.allocated(120, Some(2)));
        assert!(tl.allocated(120, None));
        assert!(!tl.allocated(140, None));
        assert_eq!(tl.classes().len(), 3);
    }
}
