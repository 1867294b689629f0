use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdnet::commands::{cmd_ablate, cmd_curve, cmd_eval, cmd_predict, cmd_train, EvalSource};
use sdnet::CliResult;

/// SDNet conversational question answering.
///
/// Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numeric failure.
#[derive(Parser)]
#[command(name = "sdnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a CoQA file with a checkpoint, a prediction file or the gold-echo model.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, group = "source")]
        checkpoint: Option<PathBuf>,
        /// Run config for the checkpoint; defaults to the config.toml next to it.
        #[arg(long, requires = "checkpoint")]
        config: Option<PathBuf>,
        #[arg(long, group = "source")]
        predictions: Option<PathBuf>,
        /// Answer every question with its main gold answer.
        #[arg(long, group = "source")]
        gold_echo: bool,
        /// Directory for predictions.json, report.json and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a prediction file for a CoQA file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and compare ablation variants.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated: full, no_variational_dropout, no_question_self_attention,
        /// last_layer_only, no_contextual, n0, n1, n2, n3.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Epoch and dev F1 columns from a run log.
    Curve {
        #[arg(long)]
        runlog: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config } => {
            let o = cmd_train(&config)?;
            match o.log.best() {
                Some(b) => println!("best dev F1 {:.2} at epoch {}", b.dev_f1.unwrap_or_default(), b.epoch),
                None => println!("trained {} epochs", o.log.records.len()),
            }
            println!("run directory {}", o.run_dir.display());
        }
        Command::Eval { data, checkpoint, config, predictions, gold_echo, out } => {
            let source = match (checkpoint, predictions, gold_echo) {
                (Some(path), None, false) => EvalSource::Checkpoint { path, config },
                (None, Some(p), false) => EvalSource::Predictions(p),
                (None, None, true) => EvalSource::GoldEcho,
                _ => {
                    return Err(sdnet::CliError::Usage(
                        "eval needs one of --checkpoint, --predictions or --gold-echo".into(),
                    ))
                }
            };
            print!("{}", cmd_eval(&source, &data, out.as_deref())?.1);
        }
        Command::Predict { checkpoint, config, data, out } => {
            let preds = cmd_predict(&checkpoint, config.as_deref(), &data, &out)?;
            println!("wrote {} predictions to {}", preds.len(), out.display());
        }
        Command::Ablate { config, variants } => print!("{}", cmd_ablate(&config, &variants)?.render()),
        Command::Curve { runlog, out } => {
            let text = cmd_curve(&runlog, out.as_deref())?;
            if out.is_none() {
                print!("{text}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
