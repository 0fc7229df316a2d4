use clap::Parser;
use salient::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
