use clap::Parser;
use gvssb::cli::{run, Cli};

fn main() {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(outcome) => std::process::exit(outcome.exit_code()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
