use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use simca::experiment::{self, ExperimentConfig};
use simca::{plot, Error};

/// Learn item embeddings from capacity-constrained assignments.
#[derive(Parser)]
#[command(name = "simca", version)]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset bundle.
    Generate,
    /// Learn item embeddings from a bundle.
    Train {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Recover the matching from stored embeddings and score it.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        users: Option<PathBuf>,
    },
    /// Train and evaluate over a parameter grid.
    Sweep {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Render SVG charts from history.csv / sweep.csv.
    Plot {
        #[arg(long)]
        results: PathBuf,
    },
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let say = |msg: String| {
        if !cli.quiet {
            eprintln!("{msg}");
        }
    };
    if let Command::Plot { results } = &cli.command {
        let out = cli.out.clone().unwrap_or_else(|| results.clone());
        for path in plot::run_plot(results, &out)? {
            say(format!("wrote {}", path.display()));
        }
        return Ok(ExitCode::SUCCESS);
    }

    let cfg = load_config(cli)?;
    let out = out_dir(cli, &cfg);
    match &cli.command {
        Command::Generate => {
            let ds = experiment::run_generate(&cfg, &out)?;
            say(format!(
                "wrote bundle to {} (n={}, m={}, capacities={:?})",
                out.display(),
                ds.n_users(),
                ds.n_items(),
                ds.capacities.as_slice()
            ));
        }
        Command::Train { bundle } => {
            let run = experiment::run_train(bundle, &cfg, &out)?;
            if let Some(last) = run.outcome.history.last() {
                say(format!("epoch {}: loss {:.4}, f1 {:.4}", last.epoch, last.loss, last.f1_micro));
            }
            say(format!("eval f1_micro {:.4}", run.report.f1_micro));
        }
        Command::Evaluate { bundle, items, users } => {
            let report = experiment::run_evaluate(bundle, items, users.as_deref(), &cfg, &out)?;
            say(format!("f1_micro {:.4}, f1_macro {:.4}", report.f1_micro, report.f1_macro));
        }
        Command::Sweep { bundle, jobs } => {
            let rows = experiment::run_sweep(bundle, &cfg, &out, *jobs)?;
            for (value, f1) in experiment::mean_f1_by_grid(&rows) {
                say(format!("{} = {value}: mean f1 {f1:.4}", cfg.sweep_param));
            }
            let failed = rows.iter().filter(|r| r.failed()).count();
            if failed > 0 {
                say(format!("{failed} of {} runs failed", rows.len()));
                return Ok(ExitCode::from(EXIT_PARTIAL));
            }
        }
        Command::Plot { .. } => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_validation() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}

