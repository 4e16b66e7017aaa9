use clap::Parser;
use splatloc_cli::{configure_threads, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(err) = configure_threads().and_then(|()| run(cli)) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
