//! Vocabulary construction, embedding matrices, and index encoding.
//!
//! Classifier inputs are fixed-length index sequences over a single shared
//! vocabulary covering word forms, arc labels, and the two arrow symbols.
//! Index 0 is reserved for padding, index 1 for unknown items.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::sdp::{serialize_sdp, Sdp};
use crate::treebank::{DependencyGraph, RelationInstance};

/// Reserved padding index; its embedding row stays all-zero.
pub const PAD: usize = 0;
/// Reserved unknown-item index.
pub const UNK: usize = 1;

/// Errors raised while loading embeddings or encoding instances.
#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("embedding row for {word:?} has {found} values, expected {expected}")]
    DimensionMismatch {
        word: String,
        expected: usize,
        found: usize,
    },
    #[error("malformed input: {0}")]
    MalformedLine(String),
    #[error("no dependency path available for instance {0}")]
    MissingPath(String),
    #[error("no sentence available for instance {0}")]
    MissingSentence(String),
}

/// Input representation fed to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Tokens of the serialized shortest dependency path.
    Sdp,
    /// Surface forms of the entity-encoded sentence.
    Sentence,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sdp => "sdp",
            Mode::Sentence => "sentence",
        }
    }

    /// Hard cap applied on top of the 99th-percentile length heuristic.
    pub fn max_len_cap(self) -> usize {
        match self {
            Mode::Sdp => 50,
            Mode::Sentence => 100,
        }
    }

    pub fn parse(s: &str) -> Result<Self, FeatureError> {
        match s {
            "sdp" => Ok(Mode::Sdp),
            "sentence" => Ok(Mode::Sentence),
            other => Err(FeatureError::MalformedLine(format!(
                "unknown mode {other:?} (expected sdp or sentence)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Bidirectional item/index map with reserved PAD and UNK entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    items: Vec<String>,
    index_of: BTreeMap<String, usize>,
}

impl Vocab {
    /// Vocabulary containing only the reserved entries.
    pub fn empty() -> Self {
        Vocab {
            items: vec!["<PAD>".to_string(), "<UNK>".to_string()],
            index_of: BTreeMap::new(),
        }
    }

    /// Number of entries including PAD and UNK.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        false // PAD and UNK are always present
    }

    /// Index of an item, or UNK for items never seen.
    pub fn lookup(&self, item: &str) -> usize {
        self.index_of.get(item).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, item: &str) -> bool {
        self.index_of.contains_key(item)
    }

    /// The item stored at an index (PAD and UNK render as `<PAD>`/`<UNK>`).
    pub fn item(&self, index: usize) -> Option<&str> {
        self.items.get(index).map(String::as_str)
    }

    /// All entries in index order.
    pub fn items(&self) -> &[String] {
        &self.items
    }

    fn insert(&mut self, item: &str) {
        if !self.index_of.contains_key(item) {
            self.index_of.insert(item.to_string(), self.items.len());
            self.items.push(item.to_string());
        }
    }

    /// Order-sensitive fingerprint of the item list; stored in checkpoints so
    /// a model is never applied with a different vocabulary.
    pub fn fingerprint(&self) -> u64 {
        const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = FNV_OFFSET;
        for item in &self.items {
            for b in item.as_bytes() {
                h ^= u64::from(*b);
                h = h.wrapping_mul(FNV_PRIME);
            }
            h ^= 0xff;
            h = h.wrapping_mul(FNV_PRIME);
        }
        h
    }
}

/// Build a vocabulary from token sequences in first-seen order.
pub fn build_vocab<S: AsRef<str>>(sequences: &[Vec<S>]) -> Vocab {
    let mut vocab = Vocab::empty();
    for seq in sequences {
        for item in seq {
            vocab.insert(item.as_ref());
        }
    }
    vocab
}

/// Dense V x d embedding table, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    v: usize,
    d: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    /// All-zero matrix.
    pub fn zeros(v: usize, d: usize) -> Self {
        EmbeddingMatrix {
            v,
            d,
            data: vec![0.0; v * d],
        }
    }

    /// Uniform [-0.25, 0.25] initialization for every row except PAD, which
    /// stays zero.
    pub fn random_init(v: usize, d: usize, rng: &mut impl Rng) -> Self {
        let mut m = EmbeddingMatrix::zeros(v, d);
        for i in 1..v {
            for value in m.row_mut(i) {
                *value = rng.random_range(-0.25..0.25);
            }
        }
        m
    }

    pub fn vocab_size(&self) -> usize {
        self.v
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    /// Flat row-major view of all values.
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Load pre-trained vectors for a vocabulary.
///
/// File format: optional `V d` header line, then one `word v1 ... vd` line
/// per word. Rows for vocabulary items found in the file are copied; all
/// other rows (arc labels, arrows, out-of-file words, UNK) are drawn
/// uniformly from [-0.25, 0.25] in index order, so the result depends only
/// on (file, vocab, rng seed). The PAD row is zero.
pub fn load_pretrained(
    text: &str,
    vocab: &Vocab,
    d: usize,
    rng: &mut impl Rng,
) -> Result<EmbeddingMatrix, FeatureError> {
    let mut file_rows: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        // Header detection: a first line of exactly two numeric fields that
        // cannot itself be a data row.
        if lineno == 0
            && fields.len() == 2
            && d != 1
            && fields.iter().all(|f| f.parse::<f64>().is_ok())
        {
            continue;
        }
        if fields.len() != d + 1 {
            return Err(FeatureError::DimensionMismatch {
                word: fields.first().unwrap_or(&"").to_string(),
                expected: d,
                found: fields.len().saturating_sub(1),
            });
        }
        let mut values = Vec::with_capacity(d);
        for f in &fields[1..] {
            values.push(
                f.parse::<f64>()
                    .map_err(|_| FeatureError::MalformedLine(line.to_string()))?,
            );
        }
        file_rows.insert(fields[0], values);
    }

    let mut m = EmbeddingMatrix::zeros(vocab.len(), d);
    for i in 1..vocab.len() {
        let item = vocab.item(i).unwrap();
        if let Some(values) = file_rows.get(item) {
            m.row_mut(i).copy_from_slice(values);
        } else {
            for value in m.row_mut(i) {
                *value = rng.random_range(-0.25..0.25);
            }
        }
    }
    Ok(m)
}

/// Render an embedding matrix back to the text format (with header line).
pub fn write_embedding_file(vocab: &Vocab, matrix: &EmbeddingMatrix) -> String {
    let mut out = format!("{} {}\n", vocab.len().saturating_sub(2), matrix.dim());
    for i in 2..vocab.len() {
        out.push_str(vocab.item(i).unwrap());
        for value in matrix.row(i) {
            out.push_str(&format!(" {value}"));
        }
        out.push('\n');
    }
    out
}

/// One classifier-ready instance: padded indices plus gold label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInstance {
    /// Exactly `max_len` indices, right-padded with PAD.
    pub indices: Vec<usize>,
    /// Number of real (pre-padding) positions; `<= max_len`.
    pub true_len: usize,
    /// Gold class index, 0..=5.
    pub label_index: usize,
    /// Directionality flag carried through from the annotation.
    pub reversed: bool,
}

/// Token stream of a path in serialized order (nodes, labels, and both arrow
/// tokens of each arc).
pub fn path_tokens(path: &Sdp) -> Vec<String> {
    serialize_sdp(path)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Token stream of an entity-encoded sentence: its surface forms.
pub fn sentence_tokens(graph: &DependencyGraph) -> Vec<String> {
    graph.tokens().iter().map(|t| t.form.clone()).collect()
}

/// Encode a token stream: vocabulary lookup (UNK for unseen items), right
/// padding, and right truncation (logged) beyond `max_len`.
pub fn encode_tokens(
    tokens: &[String],
    vocab: &Vocab,
    max_len: usize,
    label_index: usize,
    reversed: bool,
) -> EncodedInstance {
    let mut indices: Vec<usize> = tokens.iter().map(|t| vocab.lookup(t)).collect();
    if indices.len() > max_len {
        log::warn!(
            "truncating sequence of length {} to max_len {max_len}",
            indices.len()
        );
        indices.truncate(max_len);
    }
    let true_len = indices.len();
    indices.resize(max_len, PAD);
    EncodedInstance {
        indices,
        true_len,
        label_index,
        reversed,
    }
}

/// Where an instance's input tokens come from.
#[derive(Debug, Clone, Copy)]
pub struct EncodeSource<'a> {
    /// The instance's extracted path, when one was computed.
    pub path: Option<&'a Sdp>,
    /// The instance's entity-encoded sentence.
    pub sentence: Option<&'a DependencyGraph>,
}

/// Encode one relation instance in the requested mode.
///
/// # Errors
/// [`FeatureError::MissingPath`] in sdp mode without a path;
/// [`FeatureError::MissingSentence`] in sentence mode without a sentence.
pub fn encode(
    instance: &RelationInstance,
    mode: Mode,
    source: EncodeSource<'_>,
    vocab: &Vocab,
    max_len: usize,
) -> Result<EncodedInstance, FeatureError> {
    let describe = || {
        format!(
            "{} {}:{}/{}",
            instance.label, instance.sentence_ref, instance.first_entity, instance.second_entity
        )
    };
    let tokens = match mode {
        Mode::Sdp => {
            let path = source
                .path
                .ok_or_else(|| FeatureError::MissingPath(describe()))?;
            path_tokens(path)
        }
        Mode::Sentence => {
            let sentence = source
                .sentence
                .ok_or_else(|| FeatureError::MissingSentence(describe()))?;
            sentence_tokens(sentence)
        }
    };
    Ok(encode_tokens(
        &tokens,
        vocab,
        max_len,
        instance.label.index(),
        instance.reversed,
    ))
}

/// The default input length: 99th percentile of the observed lengths
/// (nearest-rank), capped per mode and never below 1.
pub fn default_max_len(lengths: &[usize], mode: Mode) -> usize {
    let cap = mode.max_len_cap();
    if lengths.is_empty() {
        return cap;
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let rank = ((0.99 * sorted.len() as f64).ceil() as usize).max(1);
    sorted[rank - 1].clamp(1, cap)
}
