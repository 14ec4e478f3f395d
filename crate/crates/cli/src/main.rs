use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use magnetorbit::config::{parse_config, ConfigError, Mode};
use magnetorbit::pipeline::{run_pipeline, PipelineError};

/// Orbit tracing, taxonomy, deviation exponents, magneto-conductivity,
/// angular diagrams, and quasiperiodic level lines from one JSON config.
#[derive(Parser)]
#[command(name = "magnetorbit", version)]
struct Cli {
    /// Run mode: trace | classify | exponents | conductivity | scan | quasi.
    /// Must match the config's mode field.
    mode: String,
    /// Path to the JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; MAGNETORBIT_THREADS is the fallback, then 1.
    #[arg(long)]
    threads: Option<usize>,
    /// Also render SVG artifacts.
    #[arg(long)]
    svg: bool,
}

const EXIT_SCHEMA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();

    let Some(mode) = Mode::parse(&cli.mode) else {
        eprintln!(
            "unknown mode '{}'; expected trace | classify | exponents | conductivity | scan | quasi",
            cli.mode
        );
        return ExitCode::from(EXIT_SCHEMA);
    };

    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", cli.config.display());
            return ExitCode::FAILURE;
        }
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e @ (ConfigError::Schema(_) | ConfigError::Value { .. })) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_SCHEMA);
        }
    };
    if cfg.mode != mode {
        eprintln!(
            "value error: mode: config says '{}' but the command line asked for '{}'",
            cfg.mode.as_str(),
            cli.mode
        );
        return ExitCode::from(EXIT_SCHEMA);
    }

    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("MAGNETORBIT_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
        .max(1);
    let out_dir = cli.out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));

    match run_pipeline(&cfg, &out_dir, threads, cli.svg) {
        Ok(manifest) => {
            println!(
                "{}: wrote {} artifacts to {}{}",
                cfg.mode.as_str(),
                manifest.artifacts.len(),
                out_dir.display(),
                if manifest.warnings.is_empty() {
                    String::new()
                } else {
                    format!(" ({} warnings in manifest.json)", manifest.warnings.len())
                }
            );
            ExitCode::SUCCESS
        }
        Err(e @ PipelineError::Numerical { .. }) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(PipelineError::Io(e)) => {
            eprintln!("io error: {e}");
            ExitCode::FAILURE
        }
    }
}
