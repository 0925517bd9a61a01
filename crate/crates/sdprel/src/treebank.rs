//! Reading and writing dependency treebanks and relation annotations.
//!
//! Sentences arrive as CoNLL-X or CoNLL-U blocks (auto-detected), become
//! [`DependencyGraph`] values with checked tree invariants, and can have
//! entity mentions collapsed to single code tokens via [`encode_entities`].

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Errors raised while reading corpora or manipulating graphs.
#[derive(Debug, Error)]
pub enum TreebankError {
    /// A malformed line, column, or id sequence.
    #[error("format error: {0}")]
    Format(String),
    /// The arcs of a sentence contain a cycle.
    #[error("cycle involving token {token} in sentence {sent_id}")]
    Cycle { sent_id: String, token: usize },
    /// Zero or more than one token attaches to the artificial root.
    #[error("{count} root tokens in sentence {sent_id} (expected exactly 1)")]
    MultiRoot { sent_id: String, count: usize },
    /// Two entity spans overlap.
    #[error("overlapping entity spans {first} and {second}")]
    Overlap { first: String, second: String },
    /// An entity span has zero or several tokens governed from outside.
    #[error("span {code} has {count} externally governed tokens (expected exactly 1)")]
    NoSpanHead { code: String, count: usize },
    /// A relation label outside the closed six-label set.
    #[error("unknown relation label {0:?}")]
    UnknownLabel(String),
    /// An entity code that does not occur in the referenced sentence.
    #[error("entity {code} not present in sentence {sent_id}")]
    DanglingEntity { code: String, sent_id: String },
}

/// Dependency scheme tag. Metadata only: every algorithm in this crate is
/// scheme-agnostic, but reports and file names want to know which converter
/// produced the trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scheme {
    Conll08,
    StanfordBasic,
    Ud,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Conll08 => "conll08",
            Scheme::StanfordBasic => "stanford_basic",
            Scheme::Ud => "ud",
        }
    }

    pub fn parse(s: &str) -> Result<Self, TreebankError> {
        match s {
            "conll08" => Ok(Scheme::Conll08),
            "stanford_basic" | "sb" => Ok(Scheme::StanfordBasic),
            "ud" => Ok(Scheme::Ud),
            other => Err(TreebankError::Format(format!(
                "unknown scheme {other:?} (expected conll08, sb/stanford_basic, or ud)"
            ))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One token of a dependency tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// 1-based index within the sentence.
    pub id: usize,
    /// Surface form.
    pub form: String,
    /// Part-of-speech tag; may be empty.
    pub pos: String,
    /// Id of the governing token; 0 is the artificial root.
    pub head: usize,
    /// Dependency label of the arc to the head.
    pub deprel: String,
}

/// A single sentence as a rooted dependency tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    /// Stable identifier used to join relation annotations to sentences.
    pub sent_id: String,
    /// Which converter produced the tree; not consulted by any algorithm.
    pub scheme: Scheme,
    tokens: Vec<Token>,
}

impl DependencyGraph {
    /// Build a graph, checking all tree invariants: contiguous 1..n ids,
    /// exactly one root, no cycles.
    pub fn from_tokens(
        sent_id: impl Into<String>,
        scheme: Scheme,
        tokens: Vec<Token>,
    ) -> Result<Self, TreebankError> {
        let sent_id = sent_id.into();
        let n = tokens.len();
        if n == 0 {
            return Err(TreebankError::Format(format!(
                "sentence {sent_id} has no tokens"
            )));
        }
        for (i, tok) in tokens.iter().enumerate() {
            if tok.id != i + 1 {
                return Err(TreebankError::Format(format!(
                    "sentence {sent_id}: token ids not contiguous (expected {}, got {})",
                    i + 1,
                    tok.id
                )));
            }
            if tok.head > n {
                return Err(TreebankError::Format(format!(
                    "sentence {sent_id}: token {} has head {} out of range 0..={n}",
                    tok.id, tok.head
                )));
            }
            if tok.form.is_empty() {
                return Err(TreebankError::Format(format!(
                    "sentence {sent_id}: token {} has an empty form",
                    tok.id
                )));
            }
            if tok.deprel.is_empty() {
                return Err(TreebankError::Format(format!(
                    "sentence {sent_id}: token {} has an empty dependency label",
                    tok.id
                )));
            }
        }
        let roots = tokens.iter().filter(|t| t.head == 0).count();
        if roots != 1 {
            return Err(TreebankError::MultiRoot {
                sent_id,
                count: roots,
            });
        }
        // Acyclicity: from every token, chasing heads must reach the
        // artificial root within n steps.
        for tok in &tokens {
            let mut cur = tok.head;
            let mut steps = 0usize;
            while cur != 0 {
                cur = tokens[cur - 1].head;
                steps += 1;
                if steps > n {
                    return Err(TreebankError::Cycle {
                        sent_id,
                        token: tok.id,
                    });
                }
            }
        }
        Ok(DependencyGraph {
            sent_id,
            scheme,
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// The token with the given 1-based id, if in range.
    pub fn token(&self, id: usize) -> Option<&Token> {
        if id >= 1 && id <= self.tokens.len() {
            Some(&self.tokens[id - 1])
        } else {
            None
        }
    }

    /// Id of the unique token attached to the artificial root.
    pub fn root(&self) -> usize {
        self.tokens
            .iter()
            .find(|t| t.head == 0)
            .map(|t| t.id)
            .expect("validated graph has exactly one root")
    }

    /// Id of the first token whose form equals `code`.
    ///
    /// # Errors
    /// [`TreebankError::DanglingEntity`] when no token matches.
    pub fn find_entity_token(&self, code: &str) -> Result<usize, TreebankError> {
        self.tokens
            .iter()
            .find(|t| t.form == code)
            .map(|t| t.id)
            .ok_or_else(|| TreebankError::DanglingEntity {
                code: code.to_string(),
                sent_id: self.sent_id.clone(),
            })
    }
}

/// A contiguous entity mention to be collapsed to a single code token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntitySpan {
    /// Unique entity identifier, e.g. `P05_1057_3`.
    pub code: String,
    /// Inclusive 1-based offset of the first token.
    pub start: usize,
    /// Inclusive 1-based offset of the last token.
    pub end: usize,
    /// Original surface string of the mention.
    pub surface: String,
}

/// The closed label set, in canonical index order 0..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationLabel {
    Usage,
    Result,
    ModelFeature,
    PartWhole,
    Topic,
    Compare,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 6] = [
        RelationLabel::Usage,
        RelationLabel::Result,
        RelationLabel::ModelFeature,
        RelationLabel::PartWhole,
        RelationLabel::Topic,
        RelationLabel::Compare,
    ];

    /// Canonical class index, 0..=5 in the order of [`RelationLabel::ALL`].
    pub fn index(self) -> usize {
        match self {
            RelationLabel::Usage => 0,
            RelationLabel::Result => 1,
            RelationLabel::ModelFeature => 2,
            RelationLabel::PartWhole => 3,
            RelationLabel::Topic => 4,
            RelationLabel::Compare => 5,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelationLabel::Usage => "USAGE",
            RelationLabel::Result => "RESULT",
            RelationLabel::ModelFeature => "MODEL-FEATURE",
            RelationLabel::PartWhole => "PART_WHOLE",
            RelationLabel::Topic => "TOPIC",
            RelationLabel::Compare => "COMPARE",
        }
    }

    pub fn parse(s: &str) -> Result<Self, TreebankError> {
        match s {
            "USAGE" => Ok(RelationLabel::Usage),
            "RESULT" => Ok(RelationLabel::Result),
            "MODEL-FEATURE" => Ok(RelationLabel::ModelFeature),
            "PART_WHOLE" => Ok(RelationLabel::PartWhole),
            "TOPIC" => Ok(RelationLabel::Topic),
            "COMPARE" => Ok(RelationLabel::Compare),
            other => Err(TreebankError::UnknownLabel(other.to_string())),
        }
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One annotated relation between two entity codes in one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationInstance {
    /// Entity code named first in the annotation.
    pub first_entity: String,
    /// Entity code named second in the annotation.
    pub second_entity: String,
    pub label: RelationLabel,
    /// True when the annotation marks the relation as holding in reverse
    /// textual order.
    pub reversed: bool,
    /// `sent_id` of the containing sentence.
    pub sentence_ref: String,
}

// ---------------------------------------------------------------------------
// CoNLL reading & writing
// ---------------------------------------------------------------------------

/// Parse a blank-line-separated CoNLL-X / CoNLL-U file.
///
/// The two layouts are auto-detected: a block is treated as CoNLL-U when the
/// file contains `#` comment lines or any token id contains `-` or `.`
/// (multiword ranges and empty nodes, both of which are skipped). CoNLL-X
/// takes the part of speech from column 5, CoNLL-U from column 4; both keep
/// the head in column 7 and the dependency label in column 8.
///
/// Sentences with a `# sent_id = …` comment keep that id; all others are
/// numbered `S1`, `S2`, … in file order.
pub fn parse_conll(text: &str, scheme: Scheme) -> Result<Vec<DependencyGraph>, TreebankError> {
    let file_has_comments = text.lines().any(|l| l.starts_with('#'));
    let mut graphs = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    for (lineno, line) in text
        .lines()
        .chain(std::iter::once(""))
        .enumerate()
        .map(|(i, l)| (i + 1, l))
    {
        if line.trim().is_empty() {
            if !block.is_empty() {
                let default_id = format!("S{}", graphs.len() + 1);
                graphs.push(parse_block(&block, scheme, file_has_comments, default_id)?);
                block.clear();
            }
        } else {
            block.push((lineno, line));
        }
    }
    Ok(graphs)
}

fn parse_block(
    lines: &[(usize, &str)],
    scheme: Scheme,
    file_has_comments: bool,
    default_id: String,
) -> Result<DependencyGraph, TreebankError> {
    let mut sent_id = default_id;
    let mut rows: Vec<(usize, Vec<&str>)> = Vec::new();
    let mut block_is_u = file_has_comments;
    for &(lineno, line) in lines {
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    sent_id = value.trim().to_string();
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 8 {
            return Err(TreebankError::Format(format!(
                "line {lineno} {line:?}: expected >= 8 tab-separated columns, found {}",
                cols.len()
            )));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            // Multiword ranges and empty nodes are CoNLL-U bookkeeping lines
            // that carry no tree structure of their own.
            block_is_u = true;
            continue;
        }
        rows.push((lineno, cols));
    }
    let pos_col = if block_is_u { 3 } else { 4 };
    let mut tokens = Vec::with_capacity(rows.len());
    for (lineno, cols) in rows {
        let id: usize = cols[0].parse().map_err(|_| {
            TreebankError::Format(format!("line {lineno}: non-numeric token id {:?}", cols[0]))
        })?;
        let head: usize = cols[6].parse().map_err(|_| {
            TreebankError::Format(format!("line {lineno}: non-numeric head {:?}", cols[6]))
        })?;
        let pos = if cols[pos_col] == "_" {
            String::new()
        } else {
            cols[pos_col].to_string()
        };
        tokens.push(Token {
            id,
            form: cols[1].to_string(),
            pos,
            head,
            deprel: cols[7].to_string(),
        });
    }
    DependencyGraph::from_tokens(sent_id, scheme, tokens)
}

/// Render one sentence as a canonical 10-column block (no trailing blank
/// line), preceded by a `# sent_id = …` comment so the id survives a
/// round trip. Empty part-of-speech tags are written as `_`.
pub fn to_conll_block(graph: &DependencyGraph) -> String {
    let mut out = format!("# sent_id = {}\n", graph.sent_id);
    for tok in graph.tokens() {
        let pos = if tok.pos.is_empty() { "_" } else { &tok.pos };
        // The part of speech goes in both tag columns so the block reads
        // back identically under either column convention.
        out.push_str(&format!(
            "{}\t{}\t_\t{}\t{}\t_\t{}\t{}\t_\t_\n",
            tok.id, tok.form, pos, pos, tok.head, tok.deprel
        ));
    }
    out
}

/// Render a whole treebank: blank-line-separated blocks, trailing newline.
pub fn write_conll(graphs: &[DependencyGraph]) -> String {
    let blocks: Vec<String> = graphs.iter().map(to_conll_block).collect();
    blocks.join("\n")
}

// ---------------------------------------------------------------------------
// Entity-code substitution
// ---------------------------------------------------------------------------

/// Collapse each entity span to a single token whose form is the entity code.
///
/// The collapsed token inherits the head and label of the span head (the
/// unique span token governed from outside the span); arcs from external
/// tokens into the span are redirected to the collapsed token; ids are
/// renumbered contiguously. Returns the new graph plus a table mapping each
/// code to its original surface string.
///
/// # Errors
/// [`TreebankError::Overlap`] when spans overlap, [`TreebankError::NoSpanHead`]
/// when a span has zero or several externally governed tokens, and
/// [`TreebankError::Format`] when a span is out of range.
pub fn encode_entities(
    graph: &DependencyGraph,
    spans: &[EntitySpan],
) -> Result<(DependencyGraph, BTreeMap<String, String>), TreebankError> {
    let n = graph.len();
    for span in spans {
        if span.start < 1 || span.end > n || span.start > span.end {
            return Err(TreebankError::Format(format!(
                "span {} covers {}..={} outside sentence of length {n}",
                span.code, span.start, span.end
            )));
        }
    }
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| s.start);
    for pair in sorted.windows(2) {
        if pair[1].start <= pair[0].end {
            return Err(TreebankError::Overlap {
                first: pair[0].code.clone(),
                second: pair[1].code.clone(),
            });
        }
    }

    // Span head: the unique span token whose head lies outside the span.
    let mut span_heads = Vec::with_capacity(sorted.len());
    for span in &sorted {
        let heads: Vec<&Token> = graph.tokens()[span.start - 1..span.end]
            .iter()
            .filter(|t| t.head < span.start || t.head > span.end)
            .collect();
        if heads.len() != 1 {
            return Err(TreebankError::NoSpanHead {
                code: span.code.clone(),
                count: heads.len(),
            });
        }
        span_heads.push(heads[0].id);
    }

    // Walk the sentence left to right, emitting one token per span and
    // copying everything else; record where every old id ends up.
    let mut new_id_of = vec![0usize; n + 1]; // old id -> new id (0 stays 0)
    let mut new_tokens: Vec<(Token, usize)> = Vec::new(); // (token, old head id)
    let mut old_id = 1usize;
    let mut next_span = 0usize;
    while old_id <= n {
        if next_span < sorted.len() && sorted[next_span].start == old_id {
            let span = sorted[next_span];
            let head_tok = graph.token(span_heads[next_span]).unwrap();
            let new_id = new_tokens.len() + 1;
            for covered in span.start..=span.end {
                new_id_of[covered] = new_id;
            }
            new_tokens.push((
                Token {
                    id: new_id,
                    form: span.code.clone(),
                    pos: head_tok.pos.clone(),
                    head: 0, // patched below from the old head id
                    deprel: head_tok.deprel.clone(),
                },
                head_tok.head,
            ));
            old_id = span.end + 1;
            next_span += 1;
        } else {
            let tok = graph.token(old_id).unwrap();
            let new_id = new_tokens.len() + 1;
            new_id_of[old_id] = new_id;
            new_tokens.push((
                Token {
                    id: new_id,
                    ..tok.clone()
                },
                tok.head,
            ));
            old_id += 1;
        }
    }
    let tokens: Vec<Token> = new_tokens
        .into_iter()
        .map(|(mut tok, old_head)| {
            tok.head = new_id_of[old_head];
            tok
        })
        .collect();

    let mut code_table = BTreeMap::new();
    for span in &sorted {
        code_table.insert(span.code.clone(), span.surface.clone());
    }
    let encoded = DependencyGraph::from_tokens(graph.sent_id.clone(), graph.scheme, tokens)?;
    Ok((encoded, code_table))
}

// ---------------------------------------------------------------------------
// Relation & span annotation files
// ---------------------------------------------------------------------------

/// Parse a relation file: one instance per line,
/// `LABEL<TAB>ENT1<TAB>ENT2<TAB>FLAGS<TAB>SENT_ID` with FLAGS either empty or
/// `REVERSE`.
pub fn load_relations(text: &str) -> Result<Vec<RelationInstance>, TreebankError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(TreebankError::Format(format!(
                "relation line {lineno} {line:?}: expected 5 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let label = RelationLabel::parse(cols[0])?;
        let reversed = match cols[3] {
            "" => false,
            "REVERSE" => true,
            other => {
                return Err(TreebankError::Format(format!(
                    "relation line {lineno} {line:?}: unknown flag {other:?}"
                )))
            }
        };
        out.push(RelationInstance {
            first_entity: cols[1].to_string(),
            second_entity: cols[2].to_string(),
            label,
            reversed,
            sentence_ref: cols[4].to_string(),
        });
    }
    Ok(out)
}

/// Inverse of [`load_relations`].
pub fn write_relations(instances: &[RelationInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            inst.label,
            inst.first_entity,
            inst.second_entity,
            if inst.reversed { "REVERSE" } else { "" },
            inst.sentence_ref
        ));
    }
    out
}

/// Parse an entity-span file: `SENT_ID<TAB>CODE<TAB>START<TAB>END<TAB>SURFACE`
/// per line, grouped by sentence id.
pub fn load_spans(text: &str) -> Result<BTreeMap<String, Vec<EntitySpan>>, TreebankError> {
    let mut out: BTreeMap<String, Vec<EntitySpan>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(TreebankError::Format(format!(
                "span line {lineno} {line:?}: expected 5 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let start: usize = cols[2].parse().map_err(|_| {
            TreebankError::Format(format!("line {lineno}: non-numeric span start {:?}", cols[2]))
        })?;
        let end: usize = cols[3].parse().map_err(|_| {
            TreebankError::Format(format!("line {lineno}: non-numeric span end {:?}", cols[3]))
        })?;
        out.entry(cols[0].to_string()).or_default().push(EntitySpan {
            code: cols[1].to_string(),
            start,
            end,
            surface: cols[4].to_string(),
        });
    }
    Ok(out)
}

/// Inverse of [`load_spans`].
pub fn write_spans(spans: &BTreeMap<String, Vec<EntitySpan>>) -> String {
    let mut out = String::new();
    for (sent_id, list) in spans {
        for span in list {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                sent_id, span.code, span.start, span.end, span.surface
            ));
        }
    }
    out
}
