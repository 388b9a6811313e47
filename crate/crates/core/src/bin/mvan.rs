use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mvan::experiment::{run, Command, ExperimentConfig, RunOptions, OUTPUT_DIR_ENV};

/// Multi-view attention fake news detection experiments.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// prepare | train | evaluate | ablate | early-detect | explain | gen-synthetic | selfcheck | config
    command: String,
    /// TOML experiment config.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set model.trainer.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; takes precedence over the config and $MVAN_OUTPUT_DIR.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Saved model directory for `evaluate` and `explain`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut overrides = cli.overrides.clone();
    if let Some(out) = &cli.output {
        overrides.push(format!("output_dir={:?}", out.display().to_string()));
    }
    let env = std::env::var(OUTPUT_DIR_ENV).ok();
    let config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path, &overrides),
        None => ExperimentConfig::resolve(None, &overrides, env.as_deref()),
    };
    let config = match config {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if cli.command == "config" {
        match config.to_toml() {
            Ok(t) => {
                print!("{t}");
                return ExitCode::SUCCESS;
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    }
    let command: Command = match cli.command.parse() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        checkpoint: cli.checkpoint,
    };
    match run(command, &config, &opts) {
        Ok(outcome) => {
            println!("{}", outcome.summary.trim_end());
            println!("outputs in {}", outcome.output_dir.display());
            if outcome.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
