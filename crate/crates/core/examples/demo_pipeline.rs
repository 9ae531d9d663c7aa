//! Runs the desk-scale pipeline into a temporary directory and prints both
//! cross-validation reports.

fn main() {
    let out = std::env::temp_dir().join("faultlab-demo");
    let mut opts = faultlab::demo::DemoOptions::new(&out);
    if let Some(seed) = std::env::args().nth(1) {
        opts.seed = seed.parse().expect("seed");
    }
    let t = std::time::Instant::now();
    let r = faultlab::demo::run_demo(&opts).expect("demo");
    println!("{} windows, {} features, {} faults", r.windows, r.features, r.faults);
    println!("timestamp folds: {:.4}\n{}", r.timestamp.overall_f, r.timestamp.pooled.render());
    println!("shuffled folds: {:.4}\n{}", r.shuffled.overall_f, r.shuffled.pooled.render());
    println!("output in {} ({:.1?})", out.display(), t.elapsed());
}
