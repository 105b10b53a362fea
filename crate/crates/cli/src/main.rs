use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;
use specpart::config::{preset, RunConfig, PRESETS};
use specpart::run;

/// Computes optimal spectral partitions of planar domains.
#[derive(Debug, Parser)]
#[command(name = "specpart", version)]
struct Cli {
    /// Run configuration (TOML).
    config: Option<PathBuf>,

    /// Use a built-in configuration instead of a file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,

    /// Check the configuration and print diagnostics without running.
    #[arg(long)]
    validate: bool,

    /// Output directory, overriding the configuration.
    #[arg(long)]
    output: Option<PathBuf>,

    /// Seed for the random initial state, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,

    /// List the built-in presets and exit.
    #[arg(long)]
    list_presets: bool,

    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

fn load(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some(name)) => preset(name)?,
        _ => bail!("give a configuration file or --preset <name>"),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.output {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    let cli = Cli::parse();
    if cli.list_presets {
        for name in PRESETS {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    let diagnostics = cfg.validate();
    if cli.validate {
        for d in &diagnostics {
            println!("{d}");
        }
        if diagnostics.is_empty() {
            println!("{}: ok", cfg.name);
            return ExitCode::SUCCESS;
        }
        return ExitCode::from(2);
    }
    if !diagnostics.is_empty() {
        for d in &diagnostics {
            eprintln!("error: {d}");
        }
        return ExitCode::from(2);
    }
    match run::execute(&cfg) {
        Ok(outcome) => {
            log::info!(
                "wrote {} artifacts to {} in {:.1} s",
                outcome.artifacts.len(),
                cfg.output.display(),
                outcome.elapsed.as_secs_f64()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
