use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use helidiff_core::pipeline;
use helidiff_core::HelidiffError;

/// Stochastic dynamics of antisymmetric operators: classification, particle and grid runs.
#[derive(Parser, Debug)]
#[command(name = "helidiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify the operator of a scenario and print the JSON report.
    Classify {
        /// TOML config file or built-in scenario name.
        config: String,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario and write its artifacts and manifest.
    Run {
        /// TOML config file or built-in scenario name (fig2a … fig10).
        config: String,
        /// Use the full ensemble size of the original study.
        #[arg(long)]
        paper_scale: bool,
        #[arg(long, default_value = "helidiff-out")]
        out: PathBuf,
        /// Override the seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of steps.
        #[arg(long)]
        steps: Option<u64>,
        /// Override the particle count.
        #[arg(long)]
        particles: Option<usize>,
    },
    /// Compare two densities (binary grid with sidecar, or CSV slice).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), HelidiffError> {
    if let Ok(v) = std::env::var("HELIDIFF_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| HelidiffError::Config(format!("HELIDIFF_THREADS must be a count, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HelidiffError::Config(format!("cannot build thread pool: {e}")))?;
    }
    Ok(())
}

fn write_json(text: &str, out: Option<&PathBuf>) -> Result<(), HelidiffError> {
    println!("{text}");
    if let Some(p) = out {
        std::fs::write(p, text)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), HelidiffError> {
    configure_threads()?;
    match cli.command {
        Command::Classify {
            config,
            samples,
            out,
        } => {
            let cfg = pipeline::load_scenario(&config)?;
            let report = pipeline::cmd_classify(&cfg, samples)?;
            write_json(&serde_json::to_string_pretty(&report)?, out.as_ref())
        }
        Command::Run {
            config,
            paper_scale,
            out,
            seed,
            steps,
            particles,
        } => {
            let mut cfg = pipeline::load_scenario(&config)?;
            if paper_scale {
                cfg.paper_scale();
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = steps {
                cfg.integrator.steps = s;
            }
            if let Some(n) = particles {
                cfg.set_particles(n);
            }
            let outcome = pipeline::cmd_run(&cfg, &out)?;
            log::info!("manifest written to {}", outcome.manifest_path.display());
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
            Ok(())
        }
        Command::Compare { a, b, out } => {
            let report = pipeline::cmd_compare(&a, &b)?;
            write_json(&serde_json::to_string_pretty(&report)?, out.as_ref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("helidiff: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
