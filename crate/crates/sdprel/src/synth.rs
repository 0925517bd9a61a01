//! Deterministic synthetic corpora for end-to-end exercises.
//!
//! Two generators are provided:
//!
//! * [`separable_corpus`] — the relation label is fully determined by a
//!   marker token that always sits on the dependency path between the two
//!   entities, while the linear sentence additionally contains the five
//!   marker tokens of the *other* classes as distractors in random order.
//!   A path-based classifier can solve it; a bag-of-sentence classifier
//!   faces near-zero signal, which reproduces the direction of the
//!   path-vs-sentence comparison.
//! * [`contrast_corpora`] — two parallel parses of the same sentences. In
//!   scheme A the class-bearing preposition heads the second entity and
//!   therefore lies on the path; in scheme B the preposition is a `case`
//!   child of the entity and the path bypasses it, so scheme B's paths carry
//!   no label signal.
//!
//! All output is a function of (instance count, seed) alone.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::{seeded_rng, sub_seed};
use crate::treebank::{
    write_conll, write_relations, write_spans, DependencyGraph, EntitySpan, RelationInstance,
    RelationLabel, Scheme, Token,
};

/// Marker token per class for [`separable_corpus`], indexed by
/// [`RelationLabel::index`].
pub const MARKERS: [&str; 6] = [
    "employs",
    "yields",
    "exhibits",
    "within",
    "concerning",
    "versus",
];

/// Class-bearing preposition per class for [`contrast_corpora`].
pub const PREP_CUES: [&str; 6] = ["with", "into", "inside", "of", "about", "than"];

const ENTITY_POOL: [&str; 10] = [
    "parser",
    "tagger",
    "grammar",
    "corpus",
    "lexicon",
    "model",
    "algorithm",
    "treebank",
    "classifier",
    "kernel",
];

const MODIFIER_POOL: [&str; 4] = ["neural", "statistical", "lexicalized", "probabilistic"];

const FILLER_POOL: [&str; 8] = [
    "the", "a", "quite", "rather", "clearly", "often", "really", "perhaps",
];

/// A generated corpus: parsed sentences plus their entity and relation
/// annotation, ready to serialize into the toolkit's file formats.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub graphs: Vec<DependencyGraph>,
    pub spans: BTreeMap<String, Vec<EntitySpan>>,
    pub relations: Vec<RelationInstance>,
}

impl SyntheticCorpus {
    pub fn conll(&self) -> String {
        write_conll(&self.graphs)
    }

    pub fn spans_tsv(&self) -> String {
        write_spans(&self.spans)
    }

    pub fn relations_tsv(&self) -> String {
        write_relations(&self.relations)
    }
}

/// One sentence under construction: nodes are abstract until
/// [`SentenceBuilder::finish`] assigns linear positions.
struct SentenceBuilder {
    /// (form, pos, parent abstract index or None for root, deprel)
    nodes: Vec<(String, String, Option<usize>, String)>,
    /// (modifier, head): modifier must land immediately before head.
    adjacent_before: Vec<(usize, usize)>,
}

impl SentenceBuilder {
    fn new() -> Self {
        SentenceBuilder {
            nodes: Vec::new(),
            adjacent_before: Vec::new(),
        }
    }

    fn add(&mut self, form: &str, pos: &str, parent: Option<usize>, deprel: &str) -> usize {
        self.nodes
            .push((form.to_string(), pos.to_string(), parent, deprel.to_string()));
        self.nodes.len() - 1
    }

    fn pin_before(&mut self, modifier: usize, head: usize) {
        self.adjacent_before.push((modifier, head));
    }

    /// Shuffle the nodes into a linear order (honoring adjacency pins) and
    /// emit the sentence. Returns the graph plus each abstract node's 1-based
    /// token id.
    fn finish(
        self,
        sent_id: &str,
        scheme: Scheme,
        rng: &mut ChaCha8Rng,
    ) -> (DependencyGraph, Vec<usize>) {
        let n = self.nodes.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        for &(modifier, head) in &self.adjacent_before {
            let mpos = order.iter().position(|&x| x == modifier).unwrap();
            order.remove(mpos);
            let hpos = order.iter().position(|&x| x == head).unwrap();
            order.insert(hpos, modifier);
        }
        let mut id_of = vec![0usize; n];
        for (pos, &abstract_idx) in order.iter().enumerate() {
            id_of[abstract_idx] = pos + 1;
        }
        let mut tokens: Vec<Token> = order
            .iter()
            .map(|&abstract_idx| {
                let (form, pos_tag, parent, deprel) = &self.nodes[abstract_idx];
                Token {
                    id: id_of[abstract_idx],
                    form: form.clone(),
                    pos: pos_tag.clone(),
                    head: parent.map_or(0, |p| id_of[p]),
                    deprel: deprel.clone(),
                }
            })
            .collect();
        tokens.sort_by_key(|t| t.id);
        let graph = DependencyGraph::from_tokens(sent_id, scheme, tokens)
            .expect("generated sentence is a valid tree");
        (graph, id_of)
    }
}

/// Reuse the same linear order for a second head/deprel assignment over the
/// same forms (one sentence, two parses).
fn reparse(
    graph: &DependencyGraph,
    id_of: &[usize],
    sent_id: &str,
    scheme: Scheme,
    arcs: &[(usize, Option<usize>, &str)],
) -> DependencyGraph {
    let mut tokens: Vec<Token> = graph.tokens().to_vec();
    for &(abstract_idx, parent, deprel) in arcs {
        let token = &mut tokens[id_of[abstract_idx] - 1];
        token.head = parent.map_or(0, |p| id_of[p]);
        token.deprel = deprel.to_string();
    }
    DependencyGraph::from_tokens(sent_id, scheme, tokens).expect("reparse is a valid tree")
}

fn entity_span(code: &str, id_of: &[usize], head: usize, modifier: Option<usize>, forms: (&str, Option<&str>)) -> EntitySpan {
    let head_id = id_of[head];
    match modifier {
        Some(m) => EntitySpan {
            code: code.to_string(),
            start: id_of[m],
            end: head_id,
            surface: format!("{} {}", forms.1.unwrap(), forms.0),
        },
        None => EntitySpan {
            code: code.to_string(),
            start: head_id,
            end: head_id,
            surface: forms.0.to_string(),
        },
    }
}

/// Generate `instances` labeled sentences (labels rotate through all six
/// classes) where the class marker always lies on the entity-to-entity
/// dependency path and the other five markers appear off-path.
pub fn separable_corpus(instances: usize, seed: u64) -> SyntheticCorpus {
    let mut rng = seeded_rng(sub_seed(seed, "synth-separable"));
    let mut graphs = Vec::with_capacity(instances);
    let mut spans: BTreeMap<String, Vec<EntitySpan>> = BTreeMap::new();
    let mut relations = Vec::with_capacity(instances);

    for i in 0..instances {
        let class = i % 6;
        let label = RelationLabel::from_index(class).unwrap();
        let sent_id = format!("synth-{i:04}");
        let mut b = SentenceBuilder::new();

        let marker = b.add(MARKERS[class], "VBZ", None, "root");
        let e1_form = ENTITY_POOL[rng.random_range(0..ENTITY_POOL.len())];
        let e2_form = ENTITY_POOL[rng.random_range(0..ENTITY_POOL.len())];
        let e1 = b.add(e1_form, "NN", Some(marker), "nsubj");

        // 60% direct object; 40% attach the second entity through a
        // class-independent preposition so path lengths vary.
        let via_prep = rng.random::<f64>() < 0.4;
        let e2 = if via_prep {
            let of = b.add("of", "IN", Some(marker), "prep");
            b.add(e2_form, "NN", Some(of), "pobj")
        } else {
            b.add(e2_form, "NN", Some(marker), "dobj")
        };

        // Entity modifiers give a sprinkling of two-token spans.
        let e1_mod = if i % 5 == 0 {
            let form = MODIFIER_POOL[rng.random_range(0..MODIFIER_POOL.len())];
            let m = b.add(form, "JJ", Some(e1), "amod");
            b.pin_before(m, e1);
            Some((m, form))
        } else {
            None
        };
        let e2_mod = if i % 7 == 3 {
            let form = MODIFIER_POOL[rng.random_range(0..MODIFIER_POOL.len())];
            let m = b.add(form, "JJ", Some(e2), "amod");
            b.pin_before(m, e2);
            Some((m, form))
        } else {
            None
        };

        // Distractors: the other five class markers, attached off-path.
        let hosts = [marker, e1, e2];
        for other in 0..6 {
            if other == class {
                continue;
            }
            let host = hosts[rng.random_range(0..hosts.len())];
            b.add(MARKERS[other], "VBZ", Some(host), "dep");
        }
        // Neutral filler.
        for _ in 0..rng.random_range(3..=6usize) {
            let form = FILLER_POOL[rng.random_range(0..FILLER_POOL.len())];
            let host = hosts[rng.random_range(0..hosts.len())];
            b.add(form, "RB", Some(host), "advmod");
        }

        let (graph, id_of) = b.finish(&sent_id, Scheme::StanfordBasic, &mut rng);

        let code1 = format!("{sent_id}_1");
        let code2 = format!("{sent_id}_2");
        let span1 = entity_span(
            &code1,
            &id_of,
            e1,
            e1_mod.map(|(m, _)| m),
            (e1_form, e1_mod.map(|(_, f)| f)),
        );
        let span2 = entity_span(
            &code2,
            &id_of,
            e2,
            e2_mod.map(|(m, _)| m),
            (e2_form, e2_mod.map(|(_, f)| f)),
        );
        spans.insert(sent_id.clone(), vec![span1, span2]);

        let reversed = i % 8 == 5;
        let (first, second) = if reversed {
            (code2.clone(), code1.clone())
        } else {
            (code1.clone(), code2.clone())
        };
        relations.push(RelationInstance {
            first_entity: first,
            second_entity: second,
            label,
            reversed,
            sentence_ref: sent_id.clone(),
        });
        graphs.push(graph);
    }

    SyntheticCorpus {
        graphs,
        spans,
        relations,
    }
}

/// Generate two parallel corpora over identical sentences and annotations.
/// In the first, the class-bearing preposition heads the second entity
/// (on the path); in the second it is a `case` dependent of that entity
/// (off the path).
pub fn contrast_corpora(instances: usize, seed: u64) -> (SyntheticCorpus, SyntheticCorpus) {
    let mut rng = seeded_rng(sub_seed(seed, "synth-contrast"));
    let mut graphs_a = Vec::with_capacity(instances);
    let mut graphs_b = Vec::with_capacity(instances);
    let mut spans: BTreeMap<String, Vec<EntitySpan>> = BTreeMap::new();
    let mut relations = Vec::with_capacity(instances);

    for i in 0..instances {
        let class = i % 6;
        let label = RelationLabel::from_index(class).unwrap();
        let sent_id = format!("pair-{i:04}");
        let mut b = SentenceBuilder::new();

        let verb = b.add("holds", "VBZ", None, "root");
        let e1_form = ENTITY_POOL[rng.random_range(0..ENTITY_POOL.len())];
        let e2_form = ENTITY_POOL[rng.random_range(0..ENTITY_POOL.len())];
        let e1 = b.add(e1_form, "NN", Some(verb), "nsubj");
        // Scheme A attachment: verb -> prep -> cue -> pobj -> entity.
        let cue = b.add(PREP_CUES[class], "IN", Some(verb), "prep");
        let e2 = b.add(e2_form, "NN", Some(cue), "pobj");
        let mut fillers = Vec::new();
        for _ in 0..rng.random_range(2..=4usize) {
            let form = FILLER_POOL[rng.random_range(0..FILLER_POOL.len())];
            let hosts = [verb, e1, e2];
            let host = hosts[rng.random_range(0..hosts.len())];
            fillers.push(b.add(form, "RB", Some(host), "advmod"));
        }

        let (graph_a, id_of) = b.finish(&sent_id, Scheme::StanfordBasic, &mut rng);
        // Scheme B reattaches: entity under the verb, cue under the entity.
        let graph_b = reparse(
            &graph_a,
            &id_of,
            &sent_id,
            Scheme::Ud,
            &[(e2, Some(verb), "obl"), (cue, Some(e2), "case")],
        );

        let code1 = format!("{sent_id}_1");
        let code2 = format!("{sent_id}_2");
        spans.insert(
            sent_id.clone(),
            vec![
                entity_span(&code1, &id_of, e1, None, (e1_form, None)),
                entity_span(&code2, &id_of, e2, None, (e2_form, None)),
            ],
        );
        relations.push(RelationInstance {
            first_entity: code1,
            second_entity: code2,
            label,
            reversed: false,
            sentence_ref: sent_id.clone(),
        });
        graphs_a.push(graph_a);
        graphs_b.push(graph_b);
    }

    let a = SyntheticCorpus {
        graphs: graphs_a,
        spans: spans.clone(),
        relations: relations.clone(),
    };
    let b = SyntheticCorpus {
        graphs: graphs_b,
        spans,
        relations,
    };
    (a, b)
}
