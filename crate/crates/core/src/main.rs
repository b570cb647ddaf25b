use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use contrastive_lab::experiments::{run_file, verify_with, VerifyHooks};
use contrastive_lab::{gaussian, Error};

#[derive(Parser)]
#[command(name = "contrastive-lab", version, about = "Contrastive learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run the analytic self-check suite.
    Verify,
}

/// Test hook: a nonzero value is added to every `h(σ)` seen by `verify`.
const PERTURB_H: &str = "CONTRASTIVE_LAB_VERIFY_PERTURB_H";

fn hooks() -> VerifyHooks {
    match std::env::var(PERTURB_H).ok().and_then(|s| s.parse::<f64>().ok()) {
        Some(d) if d != 0.0 => VerifyHooks {
            shrinkage_h: Box::new(move |s| gaussian::shrinkage_h(s).map(|h| h + d)),
        },
        _ => VerifyHooks::default(),
    }
}

fn print_config_error(path: &std::path::Path, line: usize, column: usize, message: &str) {
    eprintln!("error: {}:{line}:{column}: {message}", path.display());
    if let Ok(text) = std::fs::read_to_string(path) {
        if let Some(src) = text.lines().nth(line.saturating_sub(1)) {
            eprintln!("  {src}");
            eprintln!("  {}^", " ".repeat(column.saturating_sub(1)));
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            output_dir,
        } => {
            if let Err(e) = std::fs::metadata(&config) {
                eprintln!("error: cannot read config {}: {e}", config.display());
                return ExitCode::from(2);
            }
            match run_file(&config, seed, output_dir.as_deref()) {
                Ok(rep) => {
                    println!(
                        "{} finished: {} artifacts, config hash {}",
                        config.display(),
                        rep.artifacts.len(),
                        rep.config_hash
                    );
                    ExitCode::SUCCESS
                }
                Err(Error::Config { message, line, column }) => {
                    print_config_error(&config, line, column, &message);
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("error: running {}: {e}", config.display());
                    ExitCode::from(1)
                }
            }
        }
        Command::Verify => {
            let outcomes = verify_with(&hooks(), |o| {
                println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
            });
            match outcomes.iter().find(|o| !o.passed) {
                None => {
                    println!("all {} checks passed", outcomes.len());
                    ExitCode::SUCCESS
                }
                Some(o) => {
                    eprintln!("error: check {} failed", o.name);
                    ExitCode::from(1)
                }
            }
        }
    }
}
