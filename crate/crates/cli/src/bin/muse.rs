use clap::Parser;
use muse_cli::args::{Cli, Command};
use muse_cli::{commands, CliError};

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Serve(args) => commands::serve(args),
        Command::FitQuantiles(args) => commands::fit_quantiles(args),
        Command::FitColdstart(args) => commands::fit_coldstart(args),
        Command::Samplesize(args) => commands::samplesize(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::ValidateBound(args) => commands::validate_bound(args),
        Command::LifecycleDemo(args) => commands::lifecycle_demo(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let body = serde_json::json!({
            "error": { "kind": err.kind(), "message": err.to_string() }
        });
        eprintln!("{body}");
        std::process::exit(err.exit_code());
    }
}
