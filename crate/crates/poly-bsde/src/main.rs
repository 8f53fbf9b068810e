//! Binary entry point: parse the command line, run the pipeline, exit
//! with the documented status code.

use clap::Parser;

fn main() {
    let cli = poly_bsde::cli::Cli::parse();
    std::process::exit(poly_bsde::cli::run(cli));
}
