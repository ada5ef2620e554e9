use clap::Parser;
use tightlab::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
