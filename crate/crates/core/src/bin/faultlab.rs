fn main() {
    // Exit quietly when the reader of stdout goes away.
    // SAFETY: resets a signal disposition before any threads start.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(faultlab::cli::run_cli(&args));
}
