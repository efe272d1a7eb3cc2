//! `streamrl`: run experiments from TOML configs, evaluate checkpoints and
//! extract plot data.
//!
//! Exit codes: 0 on success, 2 for bad input (config, checkpoint, metric
//! name or arguments), 3 when a run fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use streamrl_core::evaluation::Phase;
use streamrl_core::experiment::{load_config, plot_data, read_metrics, Experiment, ExperimentError};

#[derive(Parser)]
#[command(name = "streamrl", version, about = "Continual reinforcement learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured stream and write metrics, forgetting matrix
    /// and checkpoint into the output directory.
    Run { config: PathBuf },
    /// Greedy evaluation of a checkpoint on the configured eval stream.
    Eval { config: PathBuf, checkpoint: PathBuf },
    /// Print `step,value` CSV for one metric of a metrics.jsonl file.
    PlotData {
        /// metrics.jsonl written by `run`
        metrics: PathBuf,
        /// Metric name, e.g. ep_return_windowed
        name: String,
        /// Keep only records of this phase
        #[arg(long, value_enum)]
        phase: Option<PhaseArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Train,
    Eval,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Train => Phase::Train,
            PhaseArg::Eval => Phase::Eval,
        }
    }
}

fn run(cmd: Command) -> Result<(), ExperimentError> {
    match cmd {
        Command::Run { config } => {
            let exp = Experiment::build(load_config(&config)?)?;
            let summary = exp.run()?;
            let r = &summary.report;
            println!(
                "trained {} env steps, {} updates ({} skipped); artifacts in {}",
                r.total_env_steps,
                r.total_updates,
                r.skipped_updates,
                summary.output_dir.display()
            );
            if let Some(Some(last)) = r.evals.last() {
                for s in last {
                    println!(
                        "eval exp {} (task {}): {:.4} ± {:.4}",
                        s.experience_index, s.task_label, s.mean_return, s.std_return
                    );
                }
            }
        }
        Command::Eval { config, checkpoint } => {
            let exp = Experiment::build(load_config(&config)?)?;
            for s in exp.evaluate_checkpoint(&checkpoint)? {
                println!(
                    "eval exp {} (task {}): {:.4} ± {:.4} over {} episodes",
                    s.experience_index,
                    s.task_label,
                    s.mean_return,
                    s.std_return,
                    s.returns.len()
                );
            }
        }
        Command::PlotData {
            metrics,
            name,
            phase,
        } => {
            let records = read_metrics(&metrics)?;
            print!("{}", plot_data(&records, &name, phase.map(Phase::from))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
