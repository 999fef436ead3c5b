use clap::Parser;

use tehtree::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
