//! `sggec`: synthesize corpora, train, correct, export tree targets and score.

mod commands;
mod run_config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Bad flags, config keys or values (exit code 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "sggec", version, about = "Syntax-guided grammatical error correction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus: PREFIX.tsv, PREFIX.src.conllu, PREFIX.tgt.conllu.
    GenData(GenDataArgs),
    /// Train a model on one or more corpora following a stage plan.
    Train(TrainArgs),
    /// Correct sentences (one per line) with one or more checkpoints.
    Correct(CorrectArgs),
    /// Export pairwise relation, distance and ancestry targets of CoNLL-U trees.
    TreeTargets(TreeTargetsArgs),
    /// Score hypotheses against references with edit-level F0.5.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Output prefix.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of sentence pairs.
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// `none`, `default`, `agreement`, or `rule=p,...` with rules agreement,
    /// tense, article_drop, article_insert, swap, deletion.
    #[arg(long, default_value = "default")]
    pub corruption_profile: String,
}

#[derive(Args)]
pub struct TrainArgs {
    /// key=value file of model and run settings; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base settings applied before the config file: `toy` or `base` (full-size model).
    #[arg(long, default_value = "toy")]
    pub preset: String,
    /// Corpus `name=prefix` (repeatable). Adds to the config's `data`.
    #[arg(long = "data", value_name = "NAME=PREFIX")]
    pub data: Vec<String>,
    /// Stage `dataset:selector:epochs:lr` with selector `all` or `errors`
    /// (repeatable, in order). Replaces the config's `stages`.
    #[arg(long = "stages", alias = "stage", value_name = "SPEC")]
    pub stages: Vec<String>,
    /// Checkpoint written after every epoch and at the end.
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    /// Resume from a checkpoint written by an interrupted run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Step log file (default: standard output).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Seed [config default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop after this many optimizer steps in total [config default: none].
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Token budget per batch [config default: 1000].
    #[arg(long)]
    pub batch_tokens: Option<usize>,
    /// Train a right-to-left model for re-ranking.
    #[arg(long)]
    pub reverse: bool,
    /// Extra `key=value` setting (repeatable), applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args)]
pub struct CorrectArgs {
    /// Left-to-right checkpoint (repeatable; several form an ensemble).
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Input sentences, one per line, tokens separated by spaces.
    #[arg(long)]
    pub input: PathBuf,
    /// Corrected sentences (default: standard output).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Source trees in CoNLL-U, one per input line; required by models
    /// with a graph encoder.
    #[arg(long)]
    pub trees: Option<PathBuf>,
    /// Beam size [default: the first checkpoint's `beam`].
    #[arg(long)]
    pub beam: Option<usize>,
    /// Maximum generated sub-words [default: 2 x source length + 10].
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Write every candidate as `sentence<TAB>rank<TAB>score<TAB>text`.
    #[arg(long)]
    pub nbest: Option<PathBuf>,
    /// Right-to-left checkpoint used to re-rank the n-best list (repeatable).
    #[arg(long = "rerank-r2l", value_name = "CHECKPOINT")]
    pub rerank_r2l: Vec<PathBuf>,
    /// Weight of the right-to-left score when re-ranking.
    #[arg(long, default_value_t = 0.5)]
    pub r2l_weight: f64,
}

#[derive(Args)]
pub struct TreeTargetsArgs {
    #[arg(long)]
    pub conllu: PathBuf,
    /// Output TSV (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = sggec::deptree::DEFAULT_MAX_DISTANCE)]
    pub max_distance: usize,
    /// Only check the trees; exit with code 3 on the first violation.
    #[arg(long)]
    pub validate: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub hypothesis: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Per-sentence counts `index<TAB>matched<TAB>hyp<TAB>ref`.
    #[arg(long)]
    pub per_sentence: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match err.downcast_ref::<sggec::Error>() {
        Some(sggec::Error::Divergence { .. }) => 4,
        Some(sggec::Error::Config(_)) => 2,
        _ => 3,
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("SGGEC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Usage(format!("SGGEC_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Correct(a) => commands::correct(&a),
        Command::TreeTargets(a) => commands::tree_targets(&a),
        Command::Eval(a) => commands::eval(&a),
    });
    let closed_pipe = |e: &anyhow::Error| {
        e.chain()
            .any(|c| c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe))
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        // Output piped into `head` and the like.
        Err(e) if closed_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
