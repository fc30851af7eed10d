use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use smartpilot_cli::cli::Cli;
use smartpilot_cli::commands;
use smartpilot_cli::config::{FileConfig, Settings};
use smartpilot_cli::CliError;

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .target(env_logger::Target::Stderr)
        .format_timestamp_millis()
        .try_init();
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    let file = match &cli.opts.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let settings = Settings::resolve(file, cli.opts.overrides())?;
    init_logging(&settings.log_level);
    log::info!("seed={} config_hash={}", settings.seed, settings.hash());
    commands::run(&cli.command, cli.opts.agent, &settings)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are successes; every parse error is a validation error.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
