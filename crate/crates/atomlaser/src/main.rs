use clap::Parser;

fn main() {
    let cli = atomlaser::cli::Cli::parse();
    std::process::exit(atomlaser::cli::run_cli(&cli));
}
