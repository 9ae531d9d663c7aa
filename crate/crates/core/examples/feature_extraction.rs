//! Simulate an hour of node telemetry for a small workload and turn it into
//! labelled per-core feature sets.

use faultlab::features::{default_counter_patterns, extract_features, FeatureConfig, Labeling};
use faultlab::task::{Task, Workload};
use faultlab::telemetry::{simulate, synthesize_log, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let w = Workload::new(vec![
        Task::new(1, 300, 600, false, "faultlab bench cpu --threads 2 --duration 600").with_cores(vec![2, 3]),
        Task::new(2, 600, 240, true, "faultlab fault leak --duration 240").with_cores(vec![0]),
        Task::new(3, 1500, 300, true, "faultlab fault dial --duration 300 --low").with_cores(vec![0]),
    ])?;
    let sim = SimConfig {
        t0: 1_700_000_000,
        span: 3600,
        cores: 4,
        seed: 3,
        ..Default::default()
    };
    let raw = simulate(&w, &sim);
    let log = synthesize_log(&w, "node0", sim.t0);
    println!("{} samples of {} raw metrics", raw.len(), raw.metrics.len());

    for labeling in [Labeling::Mode, Labeling::Recent] {
        let cfg = FeatureConfig {
            labeling,
            ..Default::default()
        };
        let table = extract_features(&raw, &log, &default_counter_patterns(), &cfg)?;
        let ambiguous = table.rows.iter().filter(|r| r.ambiguous).count();
        println!(
            "{labeling}: {} rows, {} features, {} ambiguous, classes {:?}",
            table.len(),
            table.names().len(),
            ambiguous,
            table.classes()
        );
    }
    let table = extract_features(&raw, &log, &default_counter_patterns(), &FeatureConfig::default())?;
    println!("first names: {:?}", &table.names()[..6]);
    let r = &table.rows[70];
    println!("row at {} core {}: label {} values[..4] {:?}", r.window_end, r.core, r.label, &r.values[..4]);
    Ok(())
}
