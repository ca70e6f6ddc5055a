use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use cqed_memory::experiment::{self, RunConfig, Scenario};
use cqed_memory::Error;

#[derive(Parser)]
#[command(version, about = "Cavity-QED memory protected by an atomic beam")]
struct Cli {
    /// Config file: `key = value` lines, or a previous manifest.json.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override one config key, e.g. `--set beam.lambda=0.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// fig3, fig5, fig6, fig7, fig8, fig9, custom or validate.
    Run { scenario: String },
    /// Run the validation suite and write validation.json.
    Validate,
    /// Closed forms over the sweep.x by sweep.y grid.
    Sweep,
}

fn report(err: &Error) -> ExitCode {
    let mut body = json!({ "error": err.kind(), "message": err.to_string() });
    if let Error::Config { field, .. } = err {
        body["field"] = json!(field);
    }
    eprintln!("{body}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = RunConfig::load(cli.config.as_deref(), &cli.sets, cli.seed).and_then(|cfg| match &cli.command {
        Command::Run { scenario } => experiment::execute(&cfg, scenario.parse::<Scenario>()?, &cli.out),
        Command::Validate => experiment::execute(&cfg, Scenario::Validate, &cli.out),
        Command::Sweep => experiment::execute_sweep(&cfg, &cli.out).map(|_| true),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}", json!({ "error": "ValidationFailed", "report": cli.out.join("validation.json") }));
            ExitCode::from(1)
        }
        Err(e) => report(&e),
    }
}
