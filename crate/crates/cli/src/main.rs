use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mfgp_cli::{predict_csv, render_report, run_experiment, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mfgp", version, about = "Multi-fidelity surrogate experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// 8000 deep-model iterations instead of the full schedule.
        #[arg(long)]
        fast: bool,
    },
    /// Render Markdown tables and SVG plots from a results file.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict with a saved deep-model checkpoint; writes CSV to stdout.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Target fidelity, 1 being the lowest.
        #[arg(long)]
        fidelity: usize,
        /// Fidelity whose input space the rows live in; the highest by default.
        #[arg(long)]
        input_fidelity: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed, fast } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            cfg.fast |= fast;
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| CliError::Config("no output directory: pass --out or set output_dir".into()))?;
            let outcome = run_experiment(&cfg, &out)?;
            let failed = outcome.rows.iter().filter(|r| r.failed()).count();
            eprintln!(
                "{} cells, {failed} failed; results in {}",
                outcome.rows.len(),
                outcome.out_dir.join("results.csv").display()
            );
        }
        Command::Report { results, out } => {
            for p in render_report(&results, &out)? {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Predict {
            checkpoint,
            input,
            fidelity,
            input_fidelity,
            samples,
            seed,
        } => {
            let stdout = std::io::stdout();
            predict_csv(&checkpoint, &input, fidelity, input_fidelity, samples, seed, &mut stdout.lock())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
