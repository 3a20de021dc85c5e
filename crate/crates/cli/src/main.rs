use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "clmn",
    version,
    about = "Concept-bottleneck classifier with fuzzy rule reasoning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concept loss weight.
    #[arg(long, global = true, allow_hyphen_values = true)]
    alpha1: Option<f64>,
    /// Neural (rule) loss weight.
    #[arg(long, global = true, allow_hyphen_values = true)]
    alpha2: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Output directory for checkpoints and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory with train/val/test JSONL files.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-rule dataset and its manifest.
    Generate,
    /// Train, evaluate on the test split and extract rules.
    Train,
    /// Re-evaluate a saved checkpoint on the test split.
    Evaluate,
    /// Train once per (alpha1, alpha2) grid cell and tabulate test metrics.
    Ablate,
    /// Per-example explanations plus the extracted rules.
    Explain {
        /// Number of test examples to explain.
        #[arg(long)]
        n: Option<usize>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        alpha1: cli.alpha1,
        alpha2: cli.alpha2,
        epochs: cli.epochs,
        out: cli.out,
        data: cli.data,
    };
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    config.validate()?;

    match cli.command {
        Command::Generate => {
            let m = commands::generate(&config)?;
            println!(
                "wrote {}/{}/{} records to {}",
                m.sizes[0],
                m.sizes[1],
                m.sizes[2],
                config.data.display()
            );
            for (j, r) in m.rules.iter().enumerate() {
                println!("class {j}: {r}");
            }
        }
        Command::Train => {
            let o = commands::train(&config)?;
            println!("{}", MetricsLine(&o.test));
            print!("{}", commands::rules_text(&o.rules));
        }
        Command::Evaluate => {
            let m = commands::evaluate(&config)?;
            println!("{}", MetricsLine(&m));
        }
        Command::Ablate => {
            print!("{}", commands::ablate(&config)?);
        }
        Command::Explain { n } => {
            print!("{}", commands::explain(&config, n.unwrap_or(config.explain))?);
        }
    }
    Ok(())
}

struct MetricsLine<'a>(&'a clmn_core::metrics::MetricsReport);

impl std::fmt::Display for MetricsLine<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = clmn_core::metrics::MetricsReport::HEADER
            .iter()
            .zip(self.0.values())
            .map(|(h, v)| format!("{h} {v:.4}"))
            .collect();
        write!(f, "{}", parts.join("  "))
    }
}
