//! Thin command-line front end. All behaviour lives in `sdprel::runner`;
//! this file only maps clap arguments onto the runner's option structs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdprel::runner::{self, RawCommon, RawData, RawHp};

#[derive(Parser)]
#[command(
    name = "sdprel",
    version,
    about = "Relation classification over shortest dependency paths"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON config file; explicit flags override its entries
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master random seed (mandatory; reruns are byte-identical)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for fold-parallel evaluation
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// CoNLL-X / CoNLL-U parse file
    #[arg(long)]
    parses: Option<PathBuf>,
    /// Dependency scheme of the parses: conll08, sb, or ud
    #[arg(long)]
    scheme: Option<String>,
    /// Entity span file (SENT_ID, CODE, START, END, SURFACE)
    #[arg(long = "entities")]
    entities: Option<PathBuf>,
    /// Relation annotation file (LABEL, ENT1, ENT2, FLAGS, SENT_ID)
    #[arg(long)]
    relations: Option<PathBuf>,
    /// Extracted-path file (one serialized path per line)
    #[arg(long)]
    paths: Option<PathBuf>,
    /// Label file aligned with --paths (relation-annotation format)
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Pretrained embedding text file ("word v1 .. vd" lines)
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Embedding dimensionality
    #[arg(long)]
    dim: Option<usize>,
    /// Padded input length (default: 99th-percentile token count)
    #[arg(long)]
    max_len: Option<usize>,
    /// Input representation: sdp or sentence
    #[arg(long)]
    mode: Option<String>,
    /// Number of cross-validation folds
    #[arg(long)]
    folds: Option<usize>,
    /// Tuning budget (total objective evaluations)
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args, Clone)]
struct HpArgs {
    /// Convolution filter widths, e.g. "3,4,5"
    #[arg(long)]
    filter_widths: Option<String>,
    /// Feature maps per filter width
    #[arg(long)]
    feature_maps: Option<usize>,
    /// Activation: sigmoid, relu, tanh, softplus, or identity
    #[arg(long)]
    activation: Option<String>,
    /// Pooling: max or avg
    #[arg(long)]
    pooling: Option<String>,
    /// L2 penalty on the fully connected layer
    #[arg(long)]
    l2: Option<f64>,
    /// Adam learning rate
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Dropout keep probability (1.0 disables dropout)
    #[arg(long)]
    dropout_keep: Option<f64>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract decoded shortest dependency paths for annotated relations
    Extract {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train a model on the full dataset and save a checkpoint
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hp: HpArgs,
    },
    /// Stratified k-fold cross-validation with per-class metrics
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hp: HpArgs,
    },
    /// Bayesian hyperparameter search over the seven tunables
    Tune {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hp: HpArgs,
    },
    /// Cross-validate several parse representations side by side
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hp: HpArgs,
        /// Scheme input as NAME=SCHEME:PARSES:SPANS (repeatable)
        #[arg(long = "input")]
        inputs: Vec<String>,
        /// Add a sentence-mode baseline column built from this input's parses
        #[arg(long)]
        sentence_baseline: Option<String>,
    },
    /// Sentence-mode evaluation (the no-paths baseline)
    Baseline {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hp: HpArgs,
    },
}

impl CommonArgs {
    fn into_raw(self) -> RawCommon {
        RawCommon {
            config: self.config,
            seed: self.seed,
            out: self.out,
            jobs: self.jobs,
        }
    }
}

impl DataArgs {
    fn into_raw(self) -> RawData {
        RawData {
            parses: self.parses,
            scheme: self.scheme,
            spans: self.entities,
            relations: self.relations,
            paths: self.paths,
            labels: self.labels,
            embeddings: self.embeddings,
            dim: self.dim,
            max_len: self.max_len,
            mode: self.mode,
            folds: self.folds,
            iterations: self.iterations,
        }
    }
}

impl HpArgs {
    fn into_raw(self) -> RawHp {
        RawHp {
            filter_widths: self.filter_widths,
            feature_maps: self.feature_maps,
            activation: self.activation,
            pooling: self.pooling,
            l2: self.l2,
            learning_rate: self.learning_rate,
            dropout_keep: self.dropout_keep,
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract { common, data } => {
            runner::cmd_extract(&common.into_raw(), &data.into_raw())
        }
        Command::Train { common, data, hp } => {
            runner::cmd_train(&common.into_raw(), &data.into_raw(), &hp.into_raw())
        }
        Command::Eval { common, data, hp } => {
            runner::cmd_eval(&common.into_raw(), &data.into_raw(), &hp.into_raw())
        }
        Command::Tune { common, data, hp } => {
            runner::cmd_tune(&common.into_raw(), &data.into_raw(), &hp.into_raw())
        }
        Command::Compare {
            common,
            data,
            hp,
            inputs,
            sentence_baseline,
        } => runner::cmd_compare(
            &common.into_raw(),
            &data.into_raw(),
            &hp.into_raw(),
            &inputs,
            sentence_baseline.as_deref(),
        ),
        Command::Baseline { common, data, hp } => {
            runner::cmd_baseline(&common.into_raw(), &data.into_raw(), &hp.into_raw())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}
