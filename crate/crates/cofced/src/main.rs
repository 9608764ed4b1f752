use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cofced::cli::{cmd_annotate, cmd_evaluate, cmd_explain, cmd_synth, cmd_train, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "cofced",
    version,
    about = "Cascaded evidence distillation for claim verification: select reports, \
             distill explanation sentences, and classify veracity."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted evidence sentences.
    Synth {
        /// Output corpus (JSONL).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        claims: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        /// Reports per claim.
        #[arg(long, default_value_t = 4)]
        reports: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Add oracle evidence annotations to a corpus.
    Annotate {
        /// Input corpus (JSONL).
        #[arg(long)]
        input: PathBuf,
        /// Annotated corpus to write (JSONL).
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train on an annotated corpus and write checkpoint, loss log, and metrics.
    Train {
        /// Annotated training corpus (JSONL).
        #[arg(long)]
        train: PathBuf,
        /// Annotated validation corpus; training data is reused when absent.
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on a labeled corpus.
    Evaluate {
        /// Labeled test corpus (JSONL).
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for metrics.json.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run one case through a checkpoint and print the evidence breakdown.
    Explain {
        /// Single claim case (JSON object).
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Replace the case's claim text before explaining.
        #[arg(long)]
        claim: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn run(cli: Cli) -> cofced::Result<()> {
    match cli.command {
        Command::Synth {
            out,
            claims,
            classes,
            reports,
            overrides,
        } => {
            let rc = RunConfig::resolve(&overrides)?;
            let written = cmd_synth(&out, claims, classes, reports, rc.train.seed)?;
            println!("wrote {written} cases to {}", out.display());
        }
        Command::Annotate {
            input,
            output,
            overrides,
        } => {
            let rc = RunConfig::resolve(&overrides)?;
            let summary = cmd_annotate(&input, &output, &rc)?;
            println!(
                "annotated {} cases: {} evidence sentences in {} evidence reports ({} capped)",
                summary.cases, summary.evidence_sentences, summary.evidence_reports, summary.capped_cases
            );
            println!("wrote {}", output.display());
        }
        Command::Train {
            train,
            valid,
            out,
            overrides,
        } => {
            let rc = RunConfig::resolve(&overrides)?;
            let outcome = cmd_train(&train, valid.as_deref(), &out, &rc)?;
            for r in &outcome.records {
                println!(
                    "epoch {}: total {:.4} (report {:.4}, sentence {:.4}, veracity {:.4})",
                    r.epoch, r.loss_total, r.loss_report, r.loss_sentence, r.loss_veracity
                );
            }
            println!(
                "best epoch {} (macro-F1 {:.4})",
                outcome.best_epoch, outcome.best_metric
            );
            println!("checkpoint: {}", outcome.checkpoint.display());
            println!("loss log:   {}", outcome.loss_log.display());
            println!("metrics:    {}", outcome.metrics.display());
        }
        Command::Evaluate {
            test,
            checkpoint,
            out,
            overrides,
        } => {
            let rc = RunConfig::resolve(&overrides)?;
            let (path, doc) = cmd_evaluate(&test, &checkpoint, &out, &rc)?;
            println!(
                "veracity: accuracy {:.4}, macro-F1 {:.4}",
                doc.veracity.accuracy, doc.veracity.macro_f1
            );
            println!(
                "explanation ROUGE-1/2/L: {:.4} / {:.4} / {:.4} (lead {:.4}, oracle {:.4})",
                doc.explanation.model.rouge1,
                doc.explanation.model.rouge2,
                doc.explanation.model.rougel,
                doc.explanation.lead_n.rouge1,
                doc.explanation.oracle.rouge1
            );
            println!("wrote {}", path.display());
        }
        Command::Explain {
            case,
            checkpoint,
            claim,
            overrides,
        } => {
            // Resolved for flag validation only; the checkpoint carries the
            // model and encoder settings.
            let _ = RunConfig::resolve(&overrides)?;
            let text = cmd_explain(&case, &checkpoint, claim.as_deref())?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
