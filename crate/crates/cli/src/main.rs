//! `matfn` — run and report benchmark experiments that test whether
//! in-context predictors can learn matrix functions from demonstrations.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use matfn_core::config::RunConfig;
use matfn_core::datagen;
use matfn_core::eval::TailWindow;
use matfn_core::report::{self, render_summary_text, summary_table};

#[derive(Parser)]
#[command(name = "matfn", version, about = "benchmark harness for learning matrix functions in context")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Results directory (overrides output_dir from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render summary and plots from a stored results directory.
    Report {
        results_dir: PathBuf,
        /// Also emit rmse.svg and bars.svg.
        #[arg(long)]
        plots: bool,
        /// Aggregation window, e.g. last25 or 35to50.
        #[arg(long)]
        window: Option<String>,
        /// Comma-separated trial indices for the bar panels.
        #[arg(long, value_delimiter = ',')]
        bar_trials: Option<Vec<usize>>,
    },
    /// Check a config file without running anything.
    Validate { config: PathBuf },
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Build the dataset a config describes and write it as auditable JSON.
    Export(ExportArgs),
}

#[derive(Args)]
struct ExportArgs {
    config: PathBuf,
    /// Output file (default: dataset.json).
    #[arg(long, default_value = "dataset.json")]
    out: PathBuf,
    /// Which repeat's dataset to export.
    #[arg(long, default_value_t = 0)]
    repeat: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<(), String> {
    match Cli::parse().command {
        Command::Run { config, out } => {
            let cfg = RunConfig::load(&config).map_err(|e| e.to_string())?;
            let output_dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("results"));
            let output = report::execute_run(&cfg, &output_dir).map_err(|e| e.to_string())?;
            let table = summary_table(&output.results);
            print!("{}", render_summary_text(&table));
            println!("results written to {}", output.output_dir.display());
            Ok(())
        }
        Command::Report { results_dir, plots, window, bar_trials } => {
            let window = window
                .map(|w| w.parse::<TailWindow>())
                .transpose()
                .map_err(|e| e.to_string())?;
            let written =
                report::render_reports(&results_dir, window, plots, bar_trials.as_deref())
                    .map_err(|e| e.to_string())?;
            let text = std::fs::read_to_string(results_dir.join(report::SUMMARY_TEXT_FILE))
                .map_err(|e| e.to_string())?;
            print!("{text}");
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = RunConfig::load(&config).map_err(|e| e.to_string())?;
            cfg.validate().map_err(|e| e.to_string())?;
            println!(
                "{} is valid (digest {})",
                config.display(),
                cfg.digest().map_err(|e| e.to_string())?
            );
            Ok(())
        }
        Command::Dataset { command: DatasetCommand::Export(args) } => {
            let cfg = RunConfig::load(&args.config).map_err(|e| e.to_string())?;
            cfg.validate().map_err(|e| e.to_string())?;
            let dataset =
                report::dataset_for_repeat(&cfg, args.repeat).map_err(|e| e.to_string())?;
            dataset.export_to_path(&args.out).map_err(|e| e.to_string())?;
            println!(
                "exported {} demonstrations ({}) to {}",
                dataset.len(),
                dataset.task.label(),
                args.out.display()
            );
            // Re-import as a self-check; recomputes every target.
            datagen::Dataset::import_from_path(&args.out).map_err(|e| e.to_string())?;
            Ok(())
        }
    }
}
