use clap::Parser;
use harness::cli::{run, Cli};

fn main() {
    // Die quietly when a downstream pipe closes (e.g. `... sweep | head`)
    // instead of panicking on the next println!.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
