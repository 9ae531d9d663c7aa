//! Start an engine on a loopback port and drive a short workload through a
//! controller session, then print the execution log.

use std::time::Duration;

use faultlab::config::ToolConfig;
use faultlab::controller::{run_session, ControllerOptions};
use faultlab::engine::{self, EngineConfig};
use faultlab::execlog::read_log;
use faultlab::task::{Task, Workload};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("faultlab-loopback-{}", std::process::id()));
    let eng = engine::start(EngineConfig::local(dir.join("results")))?;
    let addr = eng.local_addr().to_string();
    println!("engine on {addr}");

    let w = Workload::new(vec![
        Task::new(1, 0, 4, false, "sleep 2"),
        Task::new(2, 1, 2, true, "sleep 30"), // killed at its deadline
        Task::new(3, 3, 3, true, "sh -c 'exit 3'"),
    ])?;
    let opts = ControllerOptions {
        log_dir: dir.clone(),
        end_grace: Duration::from_secs(5),
        ..Default::default()
    };
    let summary = run_session(&w, &[addr], &ToolConfig::default(), &opts)?;
    eng.shutdown();
    print!("{}", summary.render());
    for e in read_log(&summary.logs[0])? {
        println!("{:>12} {:>4} {:?} {}", e.abs_timestamp, e.seq_num.map(|s| s.to_string()).unwrap_or_default(), e.event, e.detail);
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
