//! Train on one simulated session, then classify windows of a second
//! session as they would arrive from a live node.

use faultlab::features::{
    apply_plan, default_counter_patterns, extract_features, window_ends, window_features, FeatureConfig, Layout, Timeline,
};
use faultlab::ml::{ForestParams, Model};
use faultlab::task::{Task, Workload};
use faultlab::telemetry::{simulate, synthesize_log, SimConfig};

fn session(start: u64) -> Workload {
    Workload::new(vec![
        Task::new(1, start, 300, true, "faultlab fault leak --duration 300").with_cores(vec![0]),
        Task::new(2, start + 600, 300, true, "faultlab fault ddot --duration 300").with_cores(vec![0]),
        Task::new(3, start + 1200, 300, true, "faultlab fault cpufreq --duration 300").with_cores(vec![0]),
    ])
    .unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sim = |seed| SimConfig {
        t0: 1_700_000_000,
        span: 2100,
        cores: 2,
        seed,
        ..Default::default()
    };
    let train_w = session(200);
    let raw = simulate(&train_w, &sim(1));
    let log = synthesize_log(&train_w, "node0", 1_700_000_000);
    let table = extract_features(&raw, &log, &default_counter_patterns(), &FeatureConfig::default())?;
    let model = Model::train(&table, &ForestParams::default(), false)?;
    println!("trained on {} rows, classes {:?}", table.len(), model.classes);

    // Second session: different timing and noise, no labels used.
    let live_w = session(100);
    let live = simulate(&live_w, &sim(9));
    let truth = Timeline::from_log(&synthesize_log(&live_w, "node0", 1_700_000_000));
    let post = apply_plan(&live, &model.schema.plan, &Timeline::default())?;
    let layout = Layout::new(&post, 0, &model.schema.series);
    let cfg = &model.schema.config;
    let mut hits = 0;
    let mut total = 0;
    for end in window_ends(&post.times, cfg) {
        let Some(x) = window_features(&post, &layout, end, cfg) else { continue };
        let got = model.predict(&x)?;
        let want = truth.label_at(end - 1);
        if end % 300 == 0 {
            println!("window_end={end} predicted={got} actual={want}");
        }
        hits += usize::from(got == want);
        total += 1;
    }
    println!("{hits}/{total} windows match the log");
    Ok(())
}
