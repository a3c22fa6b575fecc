//! `rerank-lab` — train, probe, and evaluate point-wise reranking
//! objectives on synthetic retrieval data.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rerank_cli::commands::{self, ProbeName, MODEL_FILE};
use rerank_cli::config::RunConfigFile;
use rerank_cli::CliError;

// stdout may be a pipe that closes early (`rerank-lab eval | head`); dropped
// writes are not an error for a reporting CLI.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "rerank-lab",
    version,
    about = "Reranking-objective laboratory: synthetic data, gradient checks, training probes, ranking metrics",
    long_about = "Reranking-objective laboratory.\n\n\
        All commands read one JSON config file (every key optional, unknown keys rejected)\n\
        and are deterministic given that file. Reranking breaks score ties by ascending\n\
        document id, so a constant-score model yields id-ordered lists, not retriever order."
)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate corpus.jsonl, train.jsonl and eval_pools.jsonl.
    GenData,
    /// Finite-difference check of every weight/direction combination.
    Gradcheck,
    /// Train a scorer and write model.json plus trace CSVs.
    Train,
    /// Train a config grid and emit one CSV row per cell and seed.
    Probe {
        /// components | tau | precision | tokens | direction | negatives
        probe: String,
    },
    /// Rerank the evaluation pools with a trained model.
    Eval {
        /// Model checkpoint; defaults to <out_dir>/model.json.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfigFile::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    cfg.validate()?;

    match cli.command {
        Command::GenData => {
            commands::ensure_feasible(&cfg)?;
            let report = commands::cmd_gen_data(&cfg, cli.force)?;
            for (path, hash) in &report.files {
                say!("{hash}  {}", path.display());
            }
        }
        Command::Gradcheck => {
            let report = commands::cmd_gradcheck(&cfg)?;
            for line in &report.lines {
                say!(
                    "gradcheck {:<36} max rel err {:>12.3e}  {}",
                    line.label,
                    line.max_rel_err,
                    if line.passed { "PASS" } else { "FAIL" }
                );
            }
            if !report.all_passed() {
                return Err(CliError::Validation(format!(
                    "gradient check failed for: {}",
                    report
                        .lines
                        .iter()
                        .filter(|l| !l.passed)
                        .map(|l| l.label.clone())
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            }
            say!(
                "gradcheck: all {} configurations passed ({} trials each)",
                report.lines.len(),
                report.trials
            );
        }
        Command::Train => {
            let report = commands::cmd_train(&cfg)?;
            say!(
                "trained {} steps, final loss {:.6}",
                report.steps, report.final_loss
            );
            say!("model     {}", report.model_path.display());
            say!("trace     {}", report.trace_path.display());
            say!("compare   {}", report.compare_path.display());
            say!("manifest  {}", report.manifest_path.display());
        }
        Command::Probe { probe } => {
            let name = ProbeName::parse(&probe)?;
            let output = commands::cmd_probe(&cfg, name)?;
            say!(
                "probe {} wrote {} rows to {}",
                probe,
                output.rows.len(),
                output.csv_path.display()
            );
            if let Some(aux) = &output.aux_path {
                say!("underflow summary {}", aux.display());
            }
        }
        Command::Eval { model } => {
            let model_path = model.unwrap_or_else(|| cfg.out_dir.join(MODEL_FILE));
            let report = commands::cmd_eval(&cfg, &model_path)?;
            say!(
                "evaluated {} pools: mean ndcg@{} = {:.6}, mean recall@{} = {:.6}",
                report.pools, cfg.eval.ndcg_k, report.mean_ndcg, cfg.eval.recall_k, report.mean_recall
            );
            say!("metrics   {}", report.metrics_path.display());
            say!("summary   {}", report.summary_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
