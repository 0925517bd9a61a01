//! Pipeline plumbing behind the command-line interface: configuration
//! resolution (flags over an optional JSON config file), corpus ingest,
//! path extraction, dataset assembly, and one function per subcommand.
//!
//! Every command is a pure function of its resolved configuration: given the
//! same input files and seed, reruns produce byte-identical output files.
//! Each JSON report embeds the fully resolved configuration and the toolkit
//! version.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cnn::{self, ClassWeights, CnnError, CnnModel, HyperParams, NUM_CLASSES};
use crate::eval::{
    self, comparison_json, comparison_text, comparison_tsv, cv_report_json, CrossValidation,
    EvalError, SchemeRun,
};
use crate::features::{
    build_vocab, default_max_len, load_pretrained, path_tokens, sentence_tokens, EmbeddingMatrix,
    EncodedInstance, FeatureError, Mode, Vocab,
};
use crate::rng::{seeded_rng, sub_seed};
use crate::sdp::{decode_entities, parse_sdp, shortest_path, Sdp, SdpError};
use crate::treebank::{
    encode_entities, load_relations, load_spans, parse_conll, write_relations, DependencyGraph,
    EntitySpan, RelationInstance, Scheme, TreebankError,
};
use crate::tuner::{self, relation_cnn_space, TunerError};

/// Toolkit version embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Errors from the pipeline layer. File-level context is attached at the
/// point where a file is read, so messages always name the offending file.
#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("could not ingest {path}")]
    Ingest {
        path: PathBuf,
        #[source]
        source: Box<RunnerError>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Treebank(#[from] TreebankError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tuner(#[from] TunerError),
}

fn read_file(path: &Path) -> Result<String, RunnerError> {
    fs::read_to_string(path).map_err(|source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_bytes(path: &Path, content: &[u8]) -> Result<(), RunnerError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| RunnerError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    fs::write(path, content).map_err(|source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, content: &str) -> Result<(), RunnerError> {
    write_bytes(path, content.as_bytes())
}

fn in_file<T>(path: &Path, result: Result<T, RunnerError>) -> Result<T, RunnerError> {
    result.map_err(|source| RunnerError::Ingest {
        path: path.to_path_buf(),
        source: Box::new(source),
    })
}

// ---------------------------------------------------------------------------
// Configuration resolution
// ---------------------------------------------------------------------------

/// Unresolved common flags; `None` falls back to the config file, then the
/// default.
#[derive(Debug, Clone, Default)]
pub struct RawCommon {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

/// Unresolved hyperparameter flags.
#[derive(Debug, Clone, Default)]
pub struct RawHp {
    pub filter_widths: Option<String>,
    pub feature_maps: Option<usize>,
    pub activation: Option<String>,
    pub pooling: Option<String>,
    pub l2: Option<f64>,
    pub learning_rate: Option<f64>,
    pub dropout_keep: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

/// Unresolved data/pipeline flags.
#[derive(Debug, Clone, Default)]
pub struct RawData {
    pub parses: Option<PathBuf>,
    pub scheme: Option<String>,
    pub spans: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    pub paths: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub dim: Option<usize>,
    pub max_len: Option<usize>,
    pub mode: Option<String>,
    pub folds: Option<usize>,
    pub iterations: Option<usize>,
}

/// The optional JSON config file: a flat object whose keys are the long flag
/// names with underscores (e.g. `"learning_rate": 1e-3`). Flags override it.
struct FileConfig(serde_json::Map<String, serde_json::Value>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self, RunnerError> {
        let Some(path) = path else {
            return Ok(FileConfig(serde_json::Map::new()));
        };
        let text = read_file(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
        match value {
            serde_json::Value::Object(map) => Ok(FileConfig(map)),
            _ => Err(RunnerError::Config(format!(
                "{}: config file must hold a JSON object",
                path.display()
            ))),
        }
    }

    fn string(&self, key: &str) -> Option<String> {
        self.0.get(key).and_then(|v| v.as_str()).map(str::to_string)
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.string(key).map(PathBuf::from)
    }

    fn u64v(&self, key: &str) -> Option<u64> {
        self.0.get(key).and_then(|v| v.as_u64())
    }

    fn usizev(&self, key: &str) -> Option<usize> {
        self.u64v(key).map(|v| v as usize)
    }

    fn f64v(&self, key: &str) -> Option<f64> {
        self.0.get(key).and_then(|v| v.as_f64())
    }
}

/// Parse a filter-width list such as `3,4,5` or `4-5`.
pub fn parse_widths(text: &str) -> Result<Vec<usize>, RunnerError> {
    let widths: Result<Vec<usize>, _> = text
        .split(|c| c == ',' || c == '-')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<usize>())
        .collect();
    let widths =
        widths.map_err(|e| RunnerError::Config(format!("bad filter widths {text:?}: {e}")))?;
    if widths.is_empty() {
        return Err(RunnerError::Config(format!(
            "bad filter widths {text:?}: empty"
        )));
    }
    Ok(widths)
}

/// Resolved common options.
#[derive(Debug, Clone)]
pub struct Common {
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
}

fn resolve_common(raw: &RawCommon, fc: &FileConfig) -> Result<Common, RunnerError> {
    let seed = raw
        .seed
        .or_else(|| fc.u64v("seed"))
        .ok_or_else(|| RunnerError::Config("--seed is mandatory".to_string()))?;
    let out = raw
        .out
        .clone()
        .or_else(|| fc.path("out"))
        .ok_or_else(|| RunnerError::Config("--out is mandatory".to_string()))?;
    let jobs = raw.jobs.or_else(|| fc.usizev("jobs")).unwrap_or(1).max(1);
    Ok(Common { seed, out, jobs })
}

fn resolve_hp(raw: &RawHp, fc: &FileConfig, seed: u64) -> Result<HyperParams, RunnerError> {
    let default = HyperParams::default();
    let filter_widths = match raw
        .filter_widths
        .clone()
        .or_else(|| fc.string("filter_widths"))
    {
        Some(text) => parse_widths(&text)?,
        None => default.filter_widths.clone(),
    };
    let activation = match raw.activation.clone().or_else(|| fc.string("activation")) {
        Some(name) => cnn::Activation::parse(&name)?,
        None => default.activation,
    };
    let pooling = match raw.pooling.clone().or_else(|| fc.string("pooling")) {
        Some(name) => cnn::Pooling::parse(&name)?,
        None => default.pooling,
    };
    Ok(HyperParams {
        filter_widths,
        feature_maps: raw
            .feature_maps
            .or_else(|| fc.usizev("feature_maps"))
            .unwrap_or(default.feature_maps),
        activation,
        pooling,
        l2: raw.l2.or_else(|| fc.f64v("l2")).unwrap_or(default.l2),
        learning_rate: raw
            .learning_rate
            .or_else(|| fc.f64v("learning_rate"))
            .unwrap_or(default.learning_rate),
        dropout_keep: raw
            .dropout_keep
            .or_else(|| fc.f64v("dropout_keep"))
            .unwrap_or(default.dropout_keep),
        epochs: raw
            .epochs
            .or_else(|| fc.usizev("epochs"))
            .unwrap_or(default.epochs),
        batch_size: raw
            .batch_size
            .or_else(|| fc.usizev("batch_size"))
            .unwrap_or(default.batch_size),
        seed,
    })
}

fn hp_config_json(hp: &HyperParams) -> serde_json::Value {
    serde_json::json!({
        "filter_widths": hp.filter_widths,
        "feature_maps": hp.feature_maps,
        "activation": hp.activation.as_str(),
        "pooling": hp.pooling.as_str(),
        "l2": hp.l2,
        "learning_rate": hp.learning_rate,
        "dropout_keep": hp.dropout_keep,
        "epochs": hp.epochs,
        "batch_size": hp.batch_size,
    })
}

fn path_str(p: &Path) -> serde_json::Value {
    serde_json::Value::String(p.display().to_string())
}

fn opt_path_str(p: &Option<PathBuf>) -> serde_json::Value {
    p.as_ref().map_or(serde_json::Value::Null, |p| path_str(p))
}

/// JSON envelope common to every report.
fn report(command: &str, config: serde_json::Value, body: serde_json::Value) -> String {
    let value = serde_json::json!({
        "command": command,
        "version": VERSION,
        "config": config,
        "report": body,
    });
    let mut text = serde_json::to_string_pretty(&value).expect("report serializes");
    text.push('\n');
    text
}

// ---------------------------------------------------------------------------
// Corpus ingest & path extraction
// ---------------------------------------------------------------------------

/// A loaded treebank with its entity and relation annotation.
pub struct Corpus {
    pub graphs: Vec<DependencyGraph>,
    pub spans: BTreeMap<String, Vec<EntitySpan>>,
    pub relations: Vec<RelationInstance>,
    index: BTreeMap<String, usize>,
}

impl Corpus {
    /// Assemble a corpus from already-loaded parts (for programmatic use;
    /// file-based pipelines go through [`load_corpus`]).
    pub fn from_parts(
        graphs: Vec<DependencyGraph>,
        spans: BTreeMap<String, Vec<EntitySpan>>,
        relations: Vec<RelationInstance>,
    ) -> Self {
        let mut index = BTreeMap::new();
        for (i, graph) in graphs.iter().enumerate() {
            index.insert(graph.sent_id.clone(), i);
        }
        Corpus {
            graphs,
            spans,
            relations,
            index,
        }
    }

    pub fn graph_for(&self, sent_id: &str) -> Result<&DependencyGraph, RunnerError> {
        self.index
            .get(sent_id)
            .map(|&i| &self.graphs[i])
            .ok_or_else(|| {
                RunnerError::Config(format!("relation references unknown sentence {sent_id:?}"))
            })
    }
}

/// Load parses, optional entity spans, and relations from disk.
pub fn load_corpus(
    parses: &Path,
    scheme: Scheme,
    spans: Option<&Path>,
    relations: &Path,
) -> Result<Corpus, RunnerError> {
    let graphs = in_file(
        parses,
        parse_conll(&read_file(parses)?, scheme).map_err(RunnerError::from),
    )?;
    let spans = match spans {
        Some(path) => in_file(
            path,
            load_spans(&read_file(path)?).map_err(RunnerError::from),
        )?,
        None => BTreeMap::new(),
    };
    let relations = in_file(
        relations,
        load_relations(&read_file(relations)?).map_err(RunnerError::from),
    )?;
    Ok(Corpus::from_parts(graphs, spans, relations))
}

/// One extracted, entity-decoded path.
pub struct ExtractedPath {
    pub path: Sdp,
    pub arc_count: usize,
}

/// Extract the decoded shortest dependency path for every relation instance,
/// in relation-file order. Entity encoding is performed once per sentence.
pub fn extract_corpus_paths(corpus: &Corpus) -> Result<Vec<ExtractedPath>, RunnerError> {
    let mut encoded_cache: BTreeMap<&str, (DependencyGraph, BTreeMap<String, String>)> =
        BTreeMap::new();
    let mut out = Vec::with_capacity(corpus.relations.len());
    for rel in &corpus.relations {
        let graph = corpus.graph_for(&rel.sentence_ref)?;
        if !encoded_cache.contains_key(rel.sentence_ref.as_str()) {
            let spans = corpus
                .spans
                .get(&rel.sentence_ref)
                .map(|v| v.as_slice())
                .unwrap_or(&[]);
            encoded_cache.insert(rel.sentence_ref.as_str(), encode_entities(graph, spans)?);
        }
        let (encoded, table) = &encoded_cache[rel.sentence_ref.as_str()];
        let from = encoded.find_entity_token(&rel.first_entity)?;
        let to = encoded.find_entity_token(&rel.second_entity)?;
        let path = shortest_path(encoded, from, to)?;
        let decoded = decode_entities(&path, table);
        out.push(ExtractedPath {
            arc_count: decoded.arc_count(),
            path: decoded,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

/// A classifier-ready dataset: encoded instances plus the vocabulary and
/// initial embedding table they index into.
pub struct Dataset {
    pub instances: Vec<EncodedInstance>,
    pub vocab: Vocab,
    pub embeddings: EmbeddingMatrix,
    pub max_len: usize,
    pub mode: Mode,
}

/// Options shared by every dataset-building command.
pub struct DataOptions {
    pub embeddings: Option<PathBuf>,
    pub dim: usize,
    pub max_len: Option<usize>,
}

impl DataOptions {
    fn resolve(raw: &RawData, fc: &FileConfig) -> Self {
        DataOptions {
            embeddings: raw.embeddings.clone().or_else(|| fc.path("embeddings")),
            dim: raw.dim.or_else(|| fc.usizev("dim")).unwrap_or(50),
            max_len: raw.max_len.or_else(|| fc.usizev("max_len")),
        }
    }
}

/// Assemble a dataset from per-instance token streams: build the vocabulary,
/// initialize (or load) embeddings with the `vocab-init` sub-seed, pick the
/// input length, and encode. `min_len` keeps the padded length at or above
/// the widest convolution filter in play.
pub fn assemble_dataset(
    token_lists: &[Vec<String>],
    labels: &[(usize, bool)],
    mode: Mode,
    options: &DataOptions,
    min_len: usize,
    seed: u64,
) -> Result<Dataset, RunnerError> {
    assert_eq!(token_lists.len(), labels.len());
    let vocab = build_vocab(token_lists);
    let mut rng = seeded_rng(sub_seed(seed, "vocab-init"));
    let embeddings = match &options.embeddings {
        Some(path) => in_file(
            path,
            load_pretrained(&read_file(path)?, &vocab, options.dim, &mut rng)
                .map_err(RunnerError::from),
        )?,
        None => EmbeddingMatrix::random_init(vocab.len(), options.dim, &mut rng),
    };
    let lengths: Vec<usize> = token_lists.iter().map(|t| t.len()).collect();
    let max_len = options
        .max_len
        .unwrap_or_else(|| default_max_len(&lengths, mode))
        .max(min_len)
        .max(1);
    let instances = token_lists
        .iter()
        .zip(labels)
        .map(|(tokens, &(label, reversed))| {
            crate::features::encode_tokens(tokens, &vocab, max_len, label, reversed)
        })
        .collect();
    Ok(Dataset {
        instances,
        vocab,
        embeddings,
        max_len,
        mode,
    })
}

/// Read a paths file and its aligned labels file into token streams.
fn load_path_instances(
    paths_file: &Path,
    labels_file: &Path,
) -> Result<(Vec<Vec<String>>, Vec<(usize, bool)>), RunnerError> {
    let paths_text = read_file(paths_file)?;
    let relations = in_file(
        labels_file,
        load_relations(&read_file(labels_file)?).map_err(RunnerError::from),
    )?;
    let mut token_lists = Vec::new();
    for line in paths_text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let sdp = in_file(paths_file, parse_sdp(line).map_err(RunnerError::from))?;
        token_lists.push(path_tokens(&sdp));
    }
    if token_lists.len() != relations.len() {
        return Err(RunnerError::Config(format!(
            "{} paths in {} but {} labels in {}",
            token_lists.len(),
            paths_file.display(),
            relations.len(),
            labels_file.display()
        )));
    }
    let labels = relations
        .iter()
        .map(|r| (r.label.index(), r.reversed))
        .collect();
    Ok((token_lists, labels))
}

/// Token streams for sentence mode: the surface forms of each relation's
/// sentence.
fn sentence_instances(
    corpus: &Corpus,
) -> Result<(Vec<Vec<String>>, Vec<(usize, bool)>), RunnerError> {
    let mut token_lists = Vec::new();
    let mut labels = Vec::new();
    for rel in &corpus.relations {
        let graph = corpus.graph_for(&rel.sentence_ref)?;
        token_lists.push(sentence_tokens(graph));
        labels.push((rel.label.index(), rel.reversed));
    }
    Ok((token_lists, labels))
}

fn class_counts(instances: &[EncodedInstance]) -> [usize; NUM_CLASSES] {
    let mut counts = [0usize; NUM_CLASSES];
    for i in instances {
        counts[i.label_index] += 1;
    }
    counts
}

fn require(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf, RunnerError> {
    path.clone()
        .ok_or_else(|| RunnerError::Config(format!("--{flag} is required for this command")))
}

fn resolve_scheme(raw: &RawData, fc: &FileConfig) -> Result<Scheme, RunnerError> {
    match raw.scheme.clone().or_else(|| fc.string("scheme")) {
        Some(name) => Ok(Scheme::parse(&name)?),
        None => Ok(Scheme::StanfordBasic),
    }
}

fn resolve_mode(raw: &RawData, fc: &FileConfig) -> Result<Mode, RunnerError> {
    match raw.mode.clone().or_else(|| fc.string("mode")) {
        Some(name) => Ok(Mode::parse(&name)?),
        None => Ok(Mode::Sdp),
    }
}

/// Build the training dataset for train/eval/tune according to the mode:
/// `sdp` reads extracted paths + labels, `sentence` reads parses + relations.
fn dataset_for_mode(
    raw: &RawData,
    fc: &FileConfig,
    mode: Mode,
    min_len: usize,
    seed: u64,
) -> Result<(Dataset, serde_json::Value), RunnerError> {
    let options = DataOptions::resolve(raw, fc);
    let (token_lists, labels, inputs) = match mode {
        Mode::Sdp => {
            let paths_file = require(&raw.paths.clone().or_else(|| fc.path("paths")), "paths")?;
            let labels_file = require(&raw.labels.clone().or_else(|| fc.path("labels")), "labels")?;
            let (t, l) = load_path_instances(&paths_file, &labels_file)?;
            let inputs = serde_json::json!({
                "paths": path_str(&paths_file),
                "labels": path_str(&labels_file),
            });
            (t, l, inputs)
        }
        Mode::Sentence => {
            let parses = require(&raw.parses.clone().or_else(|| fc.path("parses")), "parses")?;
            let relations = require(
                &raw.relations.clone().or_else(|| fc.path("relations")),
                "relations",
            )?;
            let scheme = resolve_scheme(raw, fc)?;
            let corpus = load_corpus(&parses, scheme, None, &relations)?;
            let (t, l) = sentence_instances(&corpus)?;
            let inputs = serde_json::json!({
                "parses": path_str(&parses),
                "relations": path_str(&relations),
                "scheme": scheme.as_str(),
            });
            (t, l, inputs)
        }
    };
    let dataset = assemble_dataset(&token_lists, &labels, mode, &options, min_len, seed)?;
    let config = serde_json::json!({
        "mode": mode.as_str(),
        "inputs": inputs,
        "embeddings": opt_path_str(&options.embeddings),
        "dim": options.dim,
        "max_len": dataset.max_len,
        "vocab_size": dataset.vocab.len(),
    });
    Ok((dataset, config))
}

fn vocab_tsv(vocab: &Vocab) -> String {
    let mut out = String::new();
    for (i, item) in vocab.items().iter().enumerate() {
        out.push_str(&format!("{i}\t{item}\n"));
    }
    out
}

fn metrics_tsv(cv: &CrossValidation) -> String {
    let mut out = String::from("class\tprecision\trecall\tf1\n");
    for label in crate::treebank::RelationLabel::ALL {
        let c = label.index();
        out.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\n",
            label.as_str(),
            cv.pooled.precision[c],
            cv.pooled.recall[c],
            cv.pooled.f1[c]
        ));
    }
    out.push_str(&format!(
        "macro\t\t\t{:.4}\nmean-of-folds\t\t\t{:.4}\nbest-fold\t\t\t{:.4}\n",
        cv.pooled.macro_f1, cv.mean_macro_f1, cv.best_macro_f1
    ));
    out
}

fn metrics_text(cv: &CrossValidation) -> String {
    let mut out = format!(
        "{:<14}  {:>9}  {:>9}  {:>9}\n{}\n",
        "class",
        "precision",
        "recall",
        "f1",
        "-".repeat(49)
    );
    for label in crate::treebank::RelationLabel::ALL {
        let c = label.index();
        out.push_str(&format!(
            "{:<14}  {:>9.4}  {:>9.4}  {:>9.4}\n",
            label.as_str(),
            cv.pooled.precision[c],
            cv.pooled.recall[c],
            cv.pooled.f1[c]
        ));
    }
    out.push_str(&format!(
        "\npooled macro-F1   {:.4}\nmean-of-folds     {:.4}\nbest fold         {:.4} (fold {})\n",
        cv.pooled.macro_f1, cv.mean_macro_f1, cv.best_macro_f1, cv.best_fold
    ));
    out
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// `extract`: read parses + entity spans + relations, write one serialized
/// decoded path per relation instance plus the aligned labels file, and
/// report a path-length histogram.
pub fn cmd_extract(raw_common: &RawCommon, raw_data: &RawData) -> Result<(), RunnerError> {
    let fc = FileConfig::load(raw_common.config.as_deref())?;
    let common = resolve_common(raw_common, &fc)?;
    let parses = require(
        &raw_data.parses.clone().or_else(|| fc.path("parses")),
        "parses",
    )?;
    let spans = require(&raw_data.spans.clone().or_else(|| fc.path("spans")), "spans")?;
    let relations = require(
        &raw_data.relations.clone().or_else(|| fc.path("relations")),
        "relations",
    )?;
    let scheme = resolve_scheme(raw_data, &fc)?;

    let corpus = load_corpus(&parses, scheme, Some(&spans), &relations)?;
    let extracted = extract_corpus_paths(&corpus)?;

    let mut paths_text = String::new();
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for e in &extracted {
        paths_text.push_str(&crate::sdp::serialize_sdp(&e.path));
        paths_text.push('\n');
        *histogram.entry(e.arc_count).or_insert(0) += 1;
    }
    write_file(&common.out.join("paths.txt"), &paths_text)?;
    write_file(
        &common.out.join("labels.tsv"),
        &write_relations(&corpus.relations),
    )?;

    let config = serde_json::json!({
        "parses": path_str(&parses),
        "spans": path_str(&spans),
        "relations": path_str(&relations),
        "scheme": scheme.as_str(),
        "seed": common.seed,
        "out": path_str(&common.out),
    });
    let body = serde_json::json!({
        "instances": extracted.len(),
        "arc_count_histogram": histogram,
    });
    write_file(
        &common.out.join("extract_report.json"),
        &report("extract", config, body),
    )?;

    let histogram_text = histogram
        .iter()
        .map(|(arcs, count)| format!("{arcs}:{count}"))
        .collect::<Vec<_>>()
        .join(" ");
    println!(
        "extracted {} path(s); arc-count histogram {{{histogram_text}}}",
        extracted.len()
    );
    Ok(())
}

/// `train`: fit one model on the full dataset and save a checkpoint plus a
/// JSON report with the per-epoch loss curve.
pub fn cmd_train(
    raw_common: &RawCommon,
    raw_data: &RawData,
    raw_hp: &RawHp,
) -> Result<(), RunnerError> {
    let fc = FileConfig::load(raw_common.config.as_deref())?;
    let common = resolve_common(raw_common, &fc)?;
    let hp = resolve_hp(raw_hp, &fc, common.seed)?;
    let mode = resolve_mode(raw_data, &fc)?;
    let min_len = hp.filter_widths.iter().copied().max().unwrap_or(1);
    let (dataset, data_config) = dataset_for_mode(raw_data, &fc, mode, min_len, common.seed)?;

    let weights = ClassWeights::from_counts(&class_counts(&dataset.instances));
    let mut model = CnnModel::init(dataset.embeddings.clone(), dataset.embeddings.clone(), &hp)?;
    let losses = cnn::train(&mut model, &dataset.instances, &hp, &weights)?;

    let checkpoint = cnn::save_checkpoint(&model, &hp, dataset.vocab.fingerprint());
    write_bytes(&common.out.join("model.ckpt"), &checkpoint)?;
    write_file(&common.out.join("vocab.tsv"), &vocab_tsv(&dataset.vocab))?;

    let config = serde_json::json!({
        "data": data_config,
        "hyperparameters": hp_config_json(&hp),
        "seed": common.seed,
        "out": path_str(&common.out),
    });
    let body = serde_json::json!({
        "instances": dataset.instances.len(),
        "class_weights": weights.as_array().to_vec(),
        "epoch_losses": losses,
        "vocab_fingerprint": format!("{:016x}", dataset.vocab.fingerprint()),
    });
    write_file(
        &common.out.join("train_report.json"),
        &report("train", config, body),
    )?;
    println!(
        "trained on {} instance(s); final epoch mean loss {}",
        dataset.instances.len(),
        losses
            .last()
            .map_or("n/a".to_string(), |l| format!("{l:.6}")),
    );
    Ok(())
}

/// `eval`: stratified k-fold cross-validation; writes the JSON report, TSV
/// and aligned-text metrics tables, and a checkpoint of a final model fit on
/// the full dataset.
pub fn cmd_eval(
    raw_common: &RawCommon,
    raw_data: &RawData,
    raw_hp: &RawHp,
) -> Result<(), RunnerError> {
    let fc = FileConfig::load(raw_common.config.as_deref())?;
    let common = resolve_common(raw_common, &fc)?;
    let hp = resolve_hp(raw_hp, &fc, common.seed)?;
    let mode = resolve_mode(raw_data, &fc)?;
    let k = raw_data.folds.or_else(|| fc.usizev("folds")).unwrap_or(5);
    let min_len = hp.filter_widths.iter().copied().max().unwrap_or(1);
    let (dataset, data_config) = dataset_for_mode(raw_data, &fc, mode, min_len, common.seed)?;

    let cv = eval::cross_validate(
        &dataset.instances,
        &dataset.embeddings,
        &hp,
        k,
        common.seed,
        common.jobs,
    )?;

    // Final model on the full dataset for downstream prediction.
    let weights = ClassWeights::from_counts(&class_counts(&dataset.instances));
    let mut model = CnnModel::init(dataset.embeddings.clone(), dataset.embeddings.clone(), &hp)?;
    cnn::train(&mut model, &dataset.instances, &hp, &weights)?;
    let checkpoint = cnn::save_checkpoint(&model, &hp, dataset.vocab.fingerprint());
    write_bytes(&common.out.join("model.ckpt"), &checkpoint)?;

    let config = serde_json::json!({
        "data": data_config,
        "hyperparameters": hp_config_json(&hp),
        "folds": k,
        "jobs": common.jobs,
        "seed": common.seed,
        "out": path_str(&common.out),
    });
    write_file(
        &common.out.join("eval_report.json"),
        &report("eval", config, cv_report_json(&cv, &hp)),
    )?;
    write_file(&common.out.join("metrics.tsv"), &metrics_tsv(&cv))?;
    write_file(&common.out.join("metrics.txt"), &metrics_text(&cv))?;
    println!(
        "{k}-fold macro-F1: pooled {:.4}, mean {:.4}, best {:.4} (fold {})",
        cv.pooled.macro_f1, cv.mean_macro_f1, cv.best_macro_f1, cv.best_fold
    );
    Ok(())
}

/// `baseline`: sentence-mode shortcut for `eval` (the "without paths" run).
pub fn cmd_baseline(
    raw_common: &RawCommon,
    raw_data: &RawData,
    raw_hp: &RawHp,
) -> Result<(), RunnerError> {
    let mut data = raw_data.clone();
    data.mode = Some("sentence".to_string());
    cmd_eval(raw_common, &data, raw_hp)
}

/// `tune`: Bayesian search over the seven-dimensional space with objective =
/// mean k-fold macro-F1; writes the trace and a best-config report that also
/// scores the default configuration.
pub fn cmd_tune(
    raw_common: &RawCommon,
    raw_data: &RawData,
    raw_hp: &RawHp,
) -> Result<(), RunnerError> {
    let fc = FileConfig::load(raw_common.config.as_deref())?;
    let common = resolve_common(raw_common, &fc)?;
    let base_hp = resolve_hp(raw_hp, &fc, common.seed)?;
    let mode = resolve_mode(raw_data, &fc)?;
    let k = raw_data.folds.or_else(|| fc.usizev("folds")).unwrap_or(5);
    let iterations = raw_data
        .iterations
        .or_else(|| fc.usizev("iterations"))
        .unwrap_or(40);
    if iterations < 11 {
        return Err(RunnerError::Config(format!(
            "tuning budget {iterations} too small: need at least 11 (10 initial configs + 1)"
        )));
    }
    // Any candidate may use filters up to width 9.
    let (dataset, data_config) = dataset_for_mode(raw_data, &fc, mode, 9, common.seed)?;

    let space = relation_cnn_space();
    let objective = |config: &tuner::Config| -> f64 {
        let hp = match tuner::config_to_hp(config, &base_hp) {
            Ok(hp) => hp,
            Err(_) => return f64::NEG_INFINITY,
        };
        match eval::cross_validate(
            &dataset.instances,
            &dataset.embeddings,
            &hp,
            k,
            common.seed,
            common.jobs,
        ) {
            Ok(cv) => cv.mean_macro_f1,
            Err(_) => f64::NEG_INFINITY,
        }
    };

    // Score the default configuration for the report's "default vs tuned"
    // pair (not part of the search budget).
    let default_tunables = HyperParams {
        epochs: base_hp.epochs,
        batch_size: base_hp.batch_size,
        seed: base_hp.seed,
        ..HyperParams::default()
    };
    let default_config = tuner::hp_to_config(&default_tunables)?;
    let default_f1 = objective(&default_config);

    let (best_config, trace) = tuner::tune(objective, &space, iterations, common.seed)?;
    let best_hp = tuner::config_to_hp(&best_config, &base_hp)?;
    let optimal_f1 = trace
        .iter()
        .map(|e| e.value)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut trace_text = String::from("iteration\tconfig\tobjective\tbest_so_far\n");
    for entry in &trace {
        trace_text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            entry.index,
            space.config_to_json(&entry.config),
            entry.value,
            entry.best_so_far
        ));
    }
    write_file(&common.out.join("trace.tsv"), &trace_text)?;

    let config = serde_json::json!({
        "data": data_config,
        "base": {"epochs": base_hp.epochs, "batch_size": base_hp.batch_size},
        "folds": k,
        "iterations": iterations,
        "jobs": common.jobs,
        "seed": common.seed,
        "out": path_str(&common.out),
    });
    let body = serde_json::json!({
        "filter_widths": best_hp.filter_widths,
        "feature_maps": best_hp.feature_maps,
        "activation": best_hp.activation.as_str(),
        "pooling": best_hp.pooling.as_str(),
        "l2": best_hp.l2,
        "learning_rate": best_hp.learning_rate,
        "dropout_keep": best_hp.dropout_keep,
        "default_f1": default_f1,
        "optimal_f1": optimal_f1,
        "evaluations": trace.len(),
    });
    write_file(
        &common.out.join("best_config.json"),
        &report("tune", config, body),
    )?;
    println!(
        "tuned {} evaluation(s): default macro-F1 {default_f1:.4} -> best {optimal_f1:.4}",
        trace.len()
    );
    Ok(())
}

/// One `--input NAME=SCHEME:PARSES:SPANS` argument of `compare`.
pub struct CompareInput {
    pub name: String,
    pub scheme: Scheme,
    pub parses: PathBuf,
    pub spans: PathBuf,
}

/// Parse `NAME=SCHEME:PARSES:SPANS`.
pub fn parse_compare_input(text: &str) -> Result<CompareInput, RunnerError> {
    let bad = || {
        RunnerError::Config(format!(
            "bad --input {text:?}: expected NAME=SCHEME:PARSES:SPANS"
        ))
    };
    let (name, rest) = text.split_once('=').ok_or_else(bad)?;
    let mut parts = rest.splitn(3, ':');
    let scheme = Scheme::parse(parts.next().ok_or_else(bad)?)?;
    let parses = PathBuf::from(parts.next().ok_or_else(bad)?);
    let spans = PathBuf::from(parts.next().ok_or_else(bad)?);
    if name.is_empty() {
        return Err(bad());
    }
    Ok(CompareInput {
        name: name.to_string(),
        scheme,
        parses,
        spans,
    })
}

/// `compare`: cross-validate several parse representations of the same
/// relation set side by side, optionally against a sentence-mode baseline,
/// and emit the per-relation table as TSV, aligned text, and JSON.
pub fn cmd_compare(
    raw_common: &RawCommon,
    raw_data: &RawData,
    raw_hp: &RawHp,
    inputs: &[String],
    sentence_baseline: Option<&str>,
) -> Result<(), RunnerError> {
    let fc = FileConfig::load(raw_common.config.as_deref())?;
    let common = resolve_common(raw_common, &fc)?;
    let hp = resolve_hp(raw_hp, &fc, common.seed)?;
    let k = raw_data.folds.or_else(|| fc.usizev("folds")).unwrap_or(5);
    let relations_file = require(
        &raw_data.relations.clone().or_else(|| fc.path("relations")),
        "relations",
    )?;
    if inputs.is_empty() {
        return Err(RunnerError::Config(
            "compare needs at least one --input NAME=SCHEME:PARSES:SPANS".to_string(),
        ));
    }
    let parsed_inputs: Vec<CompareInput> = inputs
        .iter()
        .map(|t| parse_compare_input(t))
        .collect::<Result<_, _>>()?;
    let options = DataOptions::resolve(raw_data, &fc);
    let min_len = hp.filter_widths.iter().copied().max().unwrap_or(1);

    // Build one dataset per scheme from its extracted paths.
    let mut datasets: Vec<(String, Dataset)> = Vec::new();
    let mut corpora: BTreeMap<String, Corpus> = BTreeMap::new();
    for input in &parsed_inputs {
        let corpus = load_corpus(
            &input.parses,
            input.scheme,
            Some(&input.spans),
            &relations_file,
        )?;
        let extracted = extract_corpus_paths(&corpus)?;
        let token_lists: Vec<Vec<String>> =
            extracted.iter().map(|e| path_tokens(&e.path)).collect();
        let labels: Vec<(usize, bool)> = corpus
            .relations
            .iter()
            .map(|r| (r.label.index(), r.reversed))
            .collect();
        let dataset = assemble_dataset(
            &token_lists,
            &labels,
            Mode::Sdp,
            &options,
            min_len,
            common.seed,
        )?;
        datasets.push((input.name.clone(), dataset));
        corpora.insert(input.name.clone(), corpus);
    }

    // Optional sentence-mode baseline over one scheme's sentences.
    let baseline_dataset: Option<(String, Dataset)> = match sentence_baseline {
        Some(name) => {
            let corpus = corpora.get(name).ok_or_else(|| {
                RunnerError::Config(format!(
                    "--sentence-baseline {name:?} does not name any --input"
                ))
            })?;
            let (token_lists, labels) = sentence_instances(corpus)?;
            let dataset = assemble_dataset(
                &token_lists,
                &labels,
                Mode::Sentence,
                &options,
                min_len,
                common.seed,
            )?;
            Some((format!("{name}-sentence"), dataset))
        }
        None => None,
    };

    let scheme_runs: Vec<SchemeRun> = datasets
        .iter()
        .map(|(name, d)| SchemeRun {
            name: name.clone(),
            dataset: &d.instances,
            embeddings: &d.embeddings,
            hp: hp.clone(),
        })
        .collect();
    let baseline_run = baseline_dataset.as_ref().map(|(name, d)| SchemeRun {
        name: name.clone(),
        dataset: &d.instances,
        embeddings: &d.embeddings,
        hp: hp.clone(),
    });

    let comparison = eval::compare_representations(
        &scheme_runs,
        baseline_run.as_ref(),
        k,
        common.seed,
        common.jobs,
    )?;

    let config = serde_json::json!({
        "inputs": parsed_inputs.iter().map(|i| serde_json::json!({
            "name": i.name,
            "scheme": i.scheme.as_str(),
            "parses": path_str(&i.parses),
            "spans": path_str(&i.spans),
        })).collect::<Vec<_>>(),
        "relations": path_str(&relations_file),
        "sentence_baseline": sentence_baseline,
        "hyperparameters": hp_config_json(&hp),
        "folds": k,
        "jobs": common.jobs,
        "seed": common.seed,
        "out": path_str(&common.out),
    });
    write_file(&common.out.join("compare.tsv"), &comparison_tsv(&comparison))?;
    write_file(
        &common.out.join("compare.txt"),
        &comparison_text(&comparison),
    )?;
    write_file(
        &common.out.join("compare.json"),
        &report("compare", config, comparison_json(&comparison, &hp)),
    )?;
    print!("{}", comparison_text(&comparison));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn write_corpus(dir: &Path, corpus: &synth::SyntheticCorpus) -> (PathBuf, PathBuf, PathBuf) {
        let parses = dir.join("parses.conll");
        let spans = dir.join("spans.tsv");
        let relations = dir.join("relations.tsv");
        fs::write(&parses, corpus.conll()).unwrap();
        fs::write(&spans, corpus.spans_tsv()).unwrap();
        fs::write(&relations, corpus.relations_tsv()).unwrap();
        (parses, spans, relations)
    }

    #[test]
    fn extract_writes_aligned_deterministic_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth::separable_corpus(24, 5);
        let (parses, spans, relations) = write_corpus(dir.path(), &corpus);
        let raw_common = RawCommon {
            seed: Some(7),
            out: Some(dir.path().join("out")),
            ..Default::default()
        };
        let raw_data = RawData {
            parses: Some(parses),
            spans: Some(spans),
            relations: Some(relations),
            scheme: Some("sb".to_string()),
            ..Default::default()
        };
        cmd_extract(&raw_common, &raw_data).unwrap();
        let paths_1 = fs::read(dir.path().join("out/paths.txt")).unwrap();
        let labels_1 = fs::read(dir.path().join("out/labels.tsv")).unwrap();
        let report_1 = fs::read(dir.path().join("out/extract_report.json")).unwrap();
        assert_eq!(
            String::from_utf8(paths_1.clone()).unwrap().lines().count(),
            24
        );
        cmd_extract(&raw_common, &raw_data).unwrap();
        assert_eq!(paths_1, fs::read(dir.path().join("out/paths.txt")).unwrap());
        assert_eq!(
            labels_1,
            fs::read(dir.path().join("out/labels.tsv")).unwrap()
        );
        assert_eq!(
            report_1,
            fs::read(dir.path().join("out/extract_report.json")).unwrap()
        );
    }

    #[test]
    fn extract_of_empty_relation_file_succeeds_with_empty_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth::separable_corpus(4, 5);
        let (parses, spans, _) = write_corpus(dir.path(), &corpus);
        let relations = dir.path().join("empty.tsv");
        fs::write(&relations, "").unwrap();
        let raw_common = RawCommon {
            seed: Some(7),
            out: Some(dir.path().join("out")),
            ..Default::default()
        };
        let raw_data = RawData {
            parses: Some(parses),
            spans: Some(spans),
            relations: Some(relations),
            scheme: Some("sb".to_string()),
            ..Default::default()
        };
        cmd_extract(&raw_common, &raw_data).unwrap();
        assert_eq!(
            fs::read_to_string(dir.path().join("out/paths.txt")).unwrap(),
            ""
        );
    }

    #[test]
    fn missing_seed_is_rejected() {
        let raw_common = RawCommon {
            out: Some(PathBuf::from("/tmp/nowhere")),
            ..Default::default()
        };
        let err = cmd_extract(&raw_common, &RawData::default()).unwrap_err();
        assert!(err.to_string().contains("--seed"));
    }

    #[test]
    fn ingest_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let parses = dir.path().join("broken.conll");
        fs::write(&parses, "1\tonly-three-columns\tX\n\n").unwrap();
        let spans = dir.path().join("spans.tsv");
        let relations = dir.path().join("relations.tsv");
        fs::write(&spans, "").unwrap();
        fs::write(&relations, "").unwrap();
        let raw_common = RawCommon {
            seed: Some(7),
            out: Some(dir.path().join("out")),
            ..Default::default()
        };
        let raw_data = RawData {
            parses: Some(parses.clone()),
            spans: Some(spans),
            relations: Some(relations),
            ..Default::default()
        };
        let err = cmd_extract(&raw_common, &raw_data).unwrap_err();
        let message = format!("{err}");
        assert!(
            message.contains("broken.conll"),
            "error should name the file: {message}"
        );
    }

    #[test]
    fn config_file_supplies_values_and_flags_override() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.json");
        fs::write(
            &config_path,
            r#"{"seed": 11, "epochs": 3, "learning_rate": 0.004}"#,
        )
        .unwrap();
        let fc = FileConfig::load(Some(&config_path)).unwrap();
        // File value used when no flag is given.
        let common = resolve_common(
            &RawCommon {
                out: Some(PathBuf::from("o")),
                ..Default::default()
            },
            &fc,
        )
        .unwrap();
        assert_eq!(common.seed, 11);
        // Flag overrides file.
        let common = resolve_common(
            &RawCommon {
                seed: Some(99),
                out: Some(PathBuf::from("o")),
                ..Default::default()
            },
            &fc,
        )
        .unwrap();
        assert_eq!(common.seed, 99);
        let hp = resolve_hp(
            &RawHp {
                epochs: Some(8),
                ..Default::default()
            },
            &fc,
            1,
        )
        .unwrap();
        assert_eq!(hp.epochs, 8);
        assert_eq!(hp.learning_rate, 0.004);
    }

    #[test]
    fn widths_parse_both_separators() {
        assert_eq!(parse_widths("3,4,5").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_widths("4-5").unwrap(), vec![4, 5]);
        assert_eq!(parse_widths("7").unwrap(), vec![7]);
        assert!(parse_widths("x").is_err());
        assert!(parse_widths("").is_err());
    }

    #[test]
    fn compare_input_parses_and_rejects() {
        let input = parse_compare_input("sb=stanford_basic:a.conll:a.spans").unwrap();
        assert_eq!(input.name, "sb");
        assert_eq!(input.scheme, Scheme::StanfordBasic);
        assert_eq!(input.parses, PathBuf::from("a.conll"));
        assert_eq!(input.spans, PathBuf::from("a.spans"));
        assert!(parse_compare_input("missing-equals").is_err());
        assert!(parse_compare_input("n=badscheme:a:b").is_err());
    }

    #[test]
    fn train_then_eval_roundtrip_on_extracted_paths() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth::separable_corpus(60, 21);
        let (parses, spans, relations) = write_corpus(dir.path(), &corpus);
        let out_extract = dir.path().join("extract");
        cmd_extract(
            &RawCommon {
                seed: Some(3),
                out: Some(out_extract.clone()),
                ..Default::default()
            },
            &RawData {
                parses: Some(parses),
                spans: Some(spans),
                relations: Some(relations),
                scheme: Some("sb".to_string()),
                ..Default::default()
            },
        )
        .unwrap();

        let hp = RawHp {
            filter_widths: Some("3".to_string()),
            feature_maps: Some(10),
            epochs: Some(30),
            batch_size: Some(10),
            learning_rate: Some(1e-2),
            dropout_keep: Some(1.0),
            l2: Some(1e-4),
            ..Default::default()
        };
        let data = RawData {
            paths: Some(out_extract.join("paths.txt")),
            labels: Some(out_extract.join("labels.tsv")),
            dim: Some(8),
            folds: Some(3),
            ..Default::default()
        };
        let out_train = dir.path().join("train");
        cmd_train(
            &RawCommon {
                seed: Some(3),
                out: Some(out_train.clone()),
                ..Default::default()
            },
            &data,
            &hp,
        )
        .unwrap();
        let ckpt = fs::read(out_train.join("model.ckpt")).unwrap();
        let (model, loaded_hp, fingerprint) = cnn::load_checkpoint(&ckpt).unwrap();
        assert_eq!(loaded_hp.epochs, 30);
        assert!(fingerprint != 0);
        assert!(model.total_maps() > 0);

        let out_eval = dir.path().join("eval");
        cmd_eval(
            &RawCommon {
                seed: Some(3),
                out: Some(out_eval.clone()),
                ..Default::default()
            },
            &data,
            &hp,
        )
        .unwrap();
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out_eval.join("eval_report.json")).unwrap())
                .unwrap();
        assert_eq!(report["command"], "eval");
        assert_eq!(report["version"], VERSION);
        let macro_f1 = report["report"]["aggregates"]["mean_macro_f1"]
            .as_f64()
            .unwrap();
        assert!(macro_f1 > 0.9, "mean macro-F1 {macro_f1} too low");
    }
}
