use clap::Parser;

fn main() {
    std::process::exit(dimp::cli::run(dimp::cli::Cli::parse()));
}
