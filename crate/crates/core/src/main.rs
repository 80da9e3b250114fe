use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bdcm::graph::{find_adjustment_set, Dag};
use bdcm::harness::{ate_report, emit_histogram, histogram_samples, run_experiment, write_summary, ExperimentConfig, Method};
use bdcm::BuiltinScm;
use clap::{Parser, Subcommand};

/// Interventional sampling with diffusion causal models.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Flat `key = value` file whose entries override command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train both samplers and score them against ground truth.
    Run {
        /// Model name, or `all`.
        #[arg(long, default_value = "all")]
        scm: String,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 10)]
        values: usize,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Use the reduced protocol (100 epochs, 500 rows, 3 seeds, 5 values).
        #[arg(long)]
        reduced: bool,
    },
    /// Write a generated-vs-truth histogram of the outcome at one value.
    Histogram {
        #[arg(long)]
        scm: BuiltinScm,
        #[arg(long)]
        method: Method,
        /// Intervened value, in normalized units.
        #[arg(long, allow_hyphen_values = true)]
        value: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        bins: usize,
    },
    /// Estimate ATE(x, 0) and compare with the model's true value.
    Ate {
        #[arg(long)]
        scm: BuiltinScm,
        #[arg(long)]
        method: Method,
        #[arg(long, allow_hyphen_values = true)]
        value: f64,
    },
    /// Print the smallest observed backdoor adjustment set.
    Adjust {
        #[arg(long)]
        dag: PathBuf,
        #[arg(long)]
        cause: usize,
        #[arg(long)]
        outcome: usize,
    },
}

fn config_for(scm: BuiltinScm, overrides: Option<&str>, edit: impl FnOnce(&mut ExperimentConfig)) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(scm);
    edit(&mut cfg);
    if let Some(text) = overrides {
        cfg.apply_overrides(text)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let overrides = match &cli.config {
        Some(path) => Some(fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?),
        None => None,
    };
    let overrides = overrides.as_deref();
    match cli.command {
        Command::Run { scm, seeds, values, epochs, out, reduced } => {
            let models: Vec<BuiltinScm> = if scm == "all" {
                BuiltinScm::ALL.to_vec()
            } else {
                vec![scm.parse()?]
            };
            let mut rows = Vec::new();
            let mut out_dir = out.clone();
            for model in models {
                let cfg = config_for(model, overrides, |c| {
                    if reduced {
                        *c = ExperimentConfig::reduced(model);
                    } else {
                        c.seeds = (0..seeds).collect();
                        c.n_values = values;
                        c.train.epochs = epochs;
                    }
                    c.out_dir = Some(out.clone());
                })?;
                out_dir = cfg.out_dir.clone().unwrap_or_else(|| out.clone());
                let result = run_experiment(&cfg).with_context(|| format!("running {}", cfg.scm))?;
                for r in &result {
                    println!("{}\t{}\t{:.6e} ± {:.6e}", r.example, r.method, r.mmd_mean, r.mmd_std);
                }
                rows.extend(result);
            }
            write_summary(&out_dir.join("summary.csv"), &rows)?;
        }
        Command::Histogram { scm, method, value, out, bins } => {
            let cfg = config_for(scm, overrides, |_| {})?;
            let (generated, truth) = histogram_samples(&cfg, method, value)?;
            emit_histogram(&generated, &truth, bins, &out)?;
        }
        Command::Ate { scm, method, value } => {
            let cfg = config_for(scm, overrides, |_| {})?;
            let (estimate, oracle) = ate_report(&cfg, method, value)?;
            println!("{method}\t{estimate}\noracle\t{oracle}");
        }
        Command::Adjust { dag, cause, outcome } => {
            let text = fs::read_to_string(&dag).with_context(|| format!("reading {}", dag.display()))?;
            let graph: Dag = text.parse().with_context(|| format!("parsing {}", dag.display()))?;
            match find_adjustment_set(&graph, cause, outcome)? {
                Some(set) => println!("{{{}}}", set.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", ")),
                None => bail!("no observed backdoor adjustment set for ({cause}, {outcome})"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
