use clap::Parser;
use phasesteer_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("phasesteer {}: {e}", cli.command.name());
        std::process::exit(e.category.exit_code());
    }
}
