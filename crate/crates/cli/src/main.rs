use clap::Parser;

fn main() {
    let cli = tilesec_cli::Cli::parse();
    std::process::exit(tilesec_cli::run(cli));
}
