//! Parse a workload file, inspect it and write it back.

use faultlab::task::{parse_workload, write_workload};

const TEXT: &str = "\
timestamp;duration;seqNum;isFault;cores;args
0;120;1;False;2-3;faultlab bench cpu --threads 2 --duration 120
30;60;2;True;0;faultlab fault leak --duration 60
150;45;3;True;0;faultlab fault ddot --duration 45 --low
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let w = parse_workload(TEXT)?;
    println!("{} tasks spanning {} s", w.len(), w.span());
    for t in w.tasks() {
        println!(
            "  #{} at {:>4}s for {:>3}s fault={} cores={:?} {}",
            t.seq_num, t.timestamp, t.duration, t.is_fault, t.cores, t.args
        );
    }
    let out = write_workload(&w);
    assert_eq!(parse_workload(&out)?, w);
    print!("{out}");

    let broken = "timestamp;duration;seqNum;isFault;cores;args\n0;0;1;True;0;sleep 1\n";
    println!("rejected: {}", parse_workload(broken).unwrap_err());
    Ok(())
}
