//! Run two fault programs briefly in simulation mode and a CPU benchmark.

use std::time::Duration;

use faultlab::faults::{run_benchmark, run_fault_program, BenchKind, BenchSpec, FaultKind, FaultProgramSpec, Intensity};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("faultlab-faults-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    for (kind, intensity) in [(FaultKind::Leak, Intensity::Normal), (FaultKind::Ddot, Intensity::Low)] {
        let mut spec = FaultProgramSpec::new(kind, intensity, Duration::from_secs(2));
        spec.workdir = dir.clone();
        spec.side_channel = Some(dir.join(format!("{}.state", kind.name())));
        println!("{}", run_fault_program(&spec)?);
    }
    let bench = BenchSpec::new(BenchKind::Cpu, 1, Duration::from_secs(1));
    println!("{}", run_benchmark(&bench)?);
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
