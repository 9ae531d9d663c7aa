//! Generate a randomized workload from a text specification.
//!
//!     cargo run --example generate_workload -- [seed]

use faultlab::task::write_workload;
use faultlab::workloadgen::{busy_fraction, generate_workload, GenSpec};

const SPEC: &str = "\
time_span = 86400
seed = 7
app_duration = normal(1800, 300)
app_interarrival = normal(2400, 300)
fault_duration = normal(300, 60)
fault_interarrival = exp_weibull(1.0, 600, 1.0)
app_command = 2;2-3;faultlab bench cpu --threads 2 --duration {duration}
app_command = 1;2-3;faultlab bench mem --duration {duration}
fault_command = 1;0;faultlab fault leak --duration {duration}
fault_command = 1;0;faultlab fault ddot --duration {duration}
fault_command = 0.5;0;faultlab fault copy --duration {duration} --low
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = GenSpec::parse(SPEC)?;
    if let Some(s) = std::env::args().nth(1) {
        spec.seed = s.parse()?;
    }
    let (w, probe) = generate_workload(&spec)?;
    let faults = w.tasks().iter().filter(|t| t.is_fault).count();
    println!(
        "seed {}: {} tasks, {} faults, busy fraction {:.3}",
        spec.seed,
        w.len(),
        faults,
        busy_fraction(&w, spec.time_span)
    );
    println!("first rows:");
    for line in write_workload(&w).lines().take(6) {
        println!("  {line}");
    }
    println!("probe runs every command once in {} s:", probe.span());
    print!("{}", write_workload(&probe));
    Ok(())
}
