//! Subprocess plumbing: spawning task command lines in their own process
//! group, CPU affinity, and group-wide signals.

use std::fs::{self, OpenOptions};
use std::io;
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Child, Command, Stdio};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PinOutcome {
    Applied,
    Unsupported,
    Invalid(String),
}

impl PinOutcome {
    pub fn describe(&self) -> String {
        match self {
            PinOutcome::Applied => "applied".into(),
            PinOutcome::Unsupported => "unsupported".into(),
            PinOutcome::Invalid(r) => format!("invalid({r})"),
        }
    }
}

pub fn split_args(args: &str) -> io::Result<Vec<String>> {
    match shlex::split(args) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(io::Error::new(io::ErrorKind::InvalidInput, format!("cannot parse command line {args:?}"))),
    }
}

/// Spawns `args` directly (no shell) in a new process group, appending
/// stdout/stderr to files in `out_dir`.
pub fn spawn_task(args: &str, out_dir: &Path) -> io::Result<Child> {
    let argv = split_args(args)?;
    fs::create_dir_all(out_dir)?;
    let open = |name: &str| OpenOptions::new().create(true).append(true).open(out_dir.join(name));
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(open("stdout.txt")?)
        .stderr(open("stderr.txt")?)
        .process_group(0);
    #[cfg(target_os = "linux")]
    unsafe {
        // Tasks die with the engine thread that spawned them, mirroring a node
        // crash taking its workload down.
        cmd.pre_exec(|| {
            libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGKILL);
            Ok(())
        });
    }
    cmd.spawn()
}

pub fn online_cpus() -> usize {
    let n = unsafe { libc::sysconf(libc::_SC_NPROCESSORS_CONF) };
    if n > 0 {
        n as usize
    } else {
        1
    }
}

/// Restricts `pid` to `cores`. Indices beyond the machine's CPU count are
/// rejected without touching the process.
#[cfg(target_os = "linux")]
pub fn pin_cores(pid: u32, cores: &[usize]) -> PinOutcome {
    let ncpu = online_cpus();
    if let Some(bad) = cores.iter().find(|&&c| c >= ncpu || c >= libc::CPU_SETSIZE as usize) {
        return PinOutcome::Invalid(format!("core {bad} not present ({ncpu} cpus)"));
    }
    if cores.is_empty() {
        return PinOutcome::Invalid("empty core list".into());
    }
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_ZERO(&mut set);
        for &c in cores {
            libc::CPU_SET(c, &mut set);
        }
        if libc::sched_setaffinity(pid as libc::pid_t, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
            return PinOutcome::Invalid(io::Error::last_os_error().to_string());
        }
    }
    PinOutcome::Applied
}

#[cfg(not(target_os = "linux"))]
pub fn pin_cores(_pid: u32, _cores: &[usize]) -> PinOutcome {
    PinOutcome::Unsupported
}

/// Reads back the affinity mask of `pid`.
#[cfg(target_os = "linux")]
pub fn affinity_of(pid: u32) -> io::Result<Vec<usize>> {
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        if libc::sched_getaffinity(pid as libc::pid_t, std::mem::size_of::<libc::cpu_set_t>(), &mut set) != 0 {
            return Err(io::Error::last_os_error());
        }
        Ok((0..libc::CPU_SETSIZE as usize).filter(|&c| libc::CPU_ISSET(c, &set)).collect())
    }
}

#[cfg(not(target_os = "linux"))]
pub fn affinity_of(_pid: u32) -> io::Result<Vec<usize>> {
    Err(io::Error::new(io::ErrorKind::Unsupported, "affinity query unsupported"))
}

/// Sends `sig` to the whole process group led by `pid`.
pub fn signal_group(pid: u32, sig: libc::c_int) -> io::Result<()> {
    let rc = unsafe { libc::kill(-(pid as libc::pid_t), sig) };
    if rc == 0 {
        return Ok(());
    }
    let err = io::Error::last_os_error();
    if err.raw_os_error() == Some(libc::ESRCH) {
        // already gone
        return Ok(());
    }
    Err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_binary_reports_os_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = spawn_task("/definitely/not/here --x", dir.path()).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::NotFound);
        assert!(split_args("").is_err());
        assert_eq!(split_args("a 'b c'").unwrap(), vec!["a", "b c"]);
    }

    #[test]
    fn pins_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut child = spawn_task("sleep 5", dir.path()).unwrap();
        let last = online_cpus() - 1;
        assert_eq!(pin_cores(child.id(), &[last]), PinOutcome::Applied);
        assert_eq!(affinity_of(child.id()).unwrap(), vec![last]);
        assert!(matches!(pin_cores(child.id(), &[99_999]), PinOutcome::Invalid(_)));
        signal_group(child.id(), libc::SIGKILL).unwrap();
        child.wait().unwrap();
    }
}
