//! Shortest dependency paths: extraction from a tree, rendering to the
//! one-line text format, and entity-code decoding.
//!
//! A path is the unique tree walk between two tokens. Each traversed arc
//! carries its dependency label plus a direction: an upward step (dependent
//! toward head) renders as `<- LABEL <-`, a downward step as `-> LABEL ->`,
//! so the running example serializes as
//! `knowledge_sources <- SBJ <- are -> VC -> treated -> ADV -> as -> PMOD -> feature_functions`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::treebank::DependencyGraph;

/// Errors raised while extracting or parsing paths.
#[derive(Debug, Error)]
pub enum SdpError {
    /// An endpoint id outside the sentence.
    #[error("token {token} out of range 1..={len} in sentence {sent_id}")]
    TokenOutOfRange {
        sent_id: String,
        token: usize,
        len: usize,
    },
    /// A malformed serialized path.
    #[error("path format error: {0}")]
    Format(String),
}

/// Direction of one arc traversal along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Upward, from a dependent to its head.
    Left,
    /// Downward, from a head to one of its dependents.
    Right,
}

/// One element of a path: a token or a traversed arc.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SdpElement {
    Node { form: String },
    Arc { label: String, direction: Direction },
}

/// A shortest dependency path: alternating nodes and arcs, node-delimited.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sdp {
    elements: Vec<SdpElement>,
}

impl Sdp {
    /// Build a path, checking the alternation invariants.
    pub fn new(elements: Vec<SdpElement>) -> Result<Self, SdpError> {
        if elements.is_empty() || elements.len() % 2 == 0 {
            return Err(SdpError::Format(format!(
                "path must have odd length >= 1, got {}",
                elements.len()
            )));
        }
        for (i, el) in elements.iter().enumerate() {
            match (i % 2, el) {
                (0, SdpElement::Node { form }) if !form.is_empty() => {}
                (1, SdpElement::Arc { label, .. }) if !label.is_empty() => {}
                _ => {
                    return Err(SdpError::Format(format!(
                        "element {i} breaks node/arc alternation or is empty"
                    )))
                }
            }
        }
        Ok(Sdp { elements })
    }

    pub fn elements(&self) -> &[SdpElement] {
        &self.elements
    }

    /// Number of traversed arcs (0 for a single-node path).
    pub fn arc_count(&self) -> usize {
        self.elements.len() / 2
    }

    /// Node forms in path order.
    pub fn node_forms(&self) -> Vec<&str> {
        self.elements
            .iter()
            .filter_map(|el| match el {
                SdpElement::Node { form } => Some(form.as_str()),
                SdpElement::Arc { .. } => None,
            })
            .collect()
    }

    /// The same path walked end to start: element order reversed and every
    /// arc direction flipped.
    pub fn reversed(&self) -> Sdp {
        let elements = self
            .elements
            .iter()
            .rev()
            .map(|el| match el {
                SdpElement::Node { form } => SdpElement::Node { form: form.clone() },
                SdpElement::Arc { label, direction } => SdpElement::Arc {
                    label: label.clone(),
                    direction: match direction {
                        Direction::Left => Direction::Right,
                        Direction::Right => Direction::Left,
                    },
                },
            })
            .collect();
        Sdp { elements }
    }
}

impl fmt::Display for Sdp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_sdp(self))
    }
}

/// Extract the shortest dependency path between two tokens.
///
/// The walk ascends from `from_token` to the lowest common ancestor and
/// descends to `to_token`; upward arcs get [`Direction::Left`], downward arcs
/// [`Direction::Right`], each labelled with the traversed arc's dependency
/// label. `from_token == to_token` yields a single-node path.
pub fn shortest_path(
    graph: &DependencyGraph,
    from_token: usize,
    to_token: usize,
) -> Result<Sdp, SdpError> {
    let check = |id: usize| -> Result<(), SdpError> {
        if id < 1 || id > graph.len() {
            Err(SdpError::TokenOutOfRange {
                sent_id: graph.sent_id.clone(),
                token: id,
                len: graph.len(),
            })
        } else {
            Ok(())
        }
    };
    check(from_token)?;
    check(to_token)?;

    // Mark the ancestors of one endpoint, then walk up from the other until
    // hitting a marked token: that is the lowest common ancestor.
    let mut is_ancestor_of_from = vec![false; graph.len() + 1];
    let mut cur = from_token;
    loop {
        is_ancestor_of_from[cur] = true;
        let head = graph.token(cur).unwrap().head;
        if head == 0 {
            break;
        }
        cur = head;
    }
    let mut lca = to_token;
    while !is_ancestor_of_from[lca] {
        lca = graph.token(lca).unwrap().head;
    }

    // Upward leg: from_token .. lca, one Left arc per step.
    let mut elements = Vec::new();
    let mut cur = from_token;
    elements.push(SdpElement::Node {
        form: graph.token(cur).unwrap().form.clone(),
    });
    while cur != lca {
        let tok = graph.token(cur).unwrap();
        elements.push(SdpElement::Arc {
            label: tok.deprel.clone(),
            direction: Direction::Left,
        });
        cur = tok.head;
        elements.push(SdpElement::Node {
            form: graph.token(cur).unwrap().form.clone(),
        });
    }

    // Downward leg: lca .. to_token, one Right arc per step. Collect the
    // chain to_token -> lca first, then emit it reversed.
    let mut down = Vec::new();
    let mut cur = to_token;
    while cur != lca {
        down.push(cur);
        cur = graph.token(cur).unwrap().head;
    }
    for &id in down.iter().rev() {
        let tok = graph.token(id).unwrap();
        elements.push(SdpElement::Arc {
            label: tok.deprel.clone(),
            direction: Direction::Right,
        });
        elements.push(SdpElement::Node {
            form: tok.form.clone(),
        });
    }

    Ok(Sdp { elements })
}

/// Render a path as one whitespace-tokenizable line.
///
/// Left arcs render as `<- LABEL <-`, right arcs as `-> LABEL ->`; node forms
/// containing whitespace are joined with underscores so the line splits back
/// into the same fields.
pub fn serialize_sdp(path: &Sdp) -> String {
    let mut parts = Vec::with_capacity(path.elements.len());
    for el in &path.elements {
        match el {
            SdpElement::Node { form } => {
                parts.push(form.split_whitespace().collect::<Vec<_>>().join("_"));
            }
            SdpElement::Arc { label, direction } => match direction {
                Direction::Left => parts.push(format!("<- {label} <-")),
                Direction::Right => parts.push(format!("-> {label} ->")),
            },
        }
    }
    parts.join(" ")
}

fn arrow_direction(token: &str) -> Option<Direction> {
    match token {
        "<-" | "\u{2190}" => Some(Direction::Left),
        "->" | "\u{2192}" => Some(Direction::Right),
        _ => None,
    }
}

/// Parse one serialized path line. ASCII (`<-`, `->`) and Unicode arrows
/// (`←`, `→`) are both accepted.
///
/// ```
/// use sdprel::sdp::{parse_sdp, serialize_sdp};
///
/// let line = "model <- SBJ <- achieves -> OBJ -> accuracy";
/// let path = parse_sdp(line).unwrap();
/// assert_eq!(serialize_sdp(&path), line);
/// assert_eq!(
///     serialize_sdp(&path.reversed()),
///     "accuracy <- OBJ <- achieves -> SBJ -> model",
/// );
/// ```
pub fn parse_sdp(line: &str) -> Result<Sdp, SdpError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(SdpError::Format("empty path line".to_string()));
    }
    let mut elements = Vec::new();
    let mut i = 0usize;
    loop {
        let form = tokens[i];
        if arrow_direction(form).is_some() {
            return Err(SdpError::Format(format!(
                "expected a node form at field {i}, found arrow {form:?}"
            )));
        }
        elements.push(SdpElement::Node {
            form: form.to_string(),
        });
        i += 1;
        if i == tokens.len() {
            break;
        }
        if i + 3 > tokens.len() {
            return Err(SdpError::Format(format!(
                "dangling arc after field {i} in {line:?}"
            )));
        }
        let open = arrow_direction(tokens[i]).ok_or_else(|| {
            SdpError::Format(format!("expected an arrow at field {i}, found {:?}", tokens[i]))
        })?;
        let label = tokens[i + 1];
        if arrow_direction(label).is_some() {
            return Err(SdpError::Format(format!(
                "expected an arc label at field {}, found arrow {label:?}",
                i + 1
            )));
        }
        let close = arrow_direction(tokens[i + 2]).ok_or_else(|| {
            SdpError::Format(format!(
                "expected an arrow at field {}, found {:?}",
                i + 2,
                tokens[i + 2]
            ))
        })?;
        if open != close {
            return Err(SdpError::Format(format!(
                "mismatched arrows around label {label:?} in {line:?}"
            )));
        }
        elements.push(SdpElement::Arc {
            label: label.to_string(),
            direction: open,
        });
        i += 3;
        if i == tokens.len() {
            return Err(SdpError::Format(format!("path ends on an arc: {line:?}")));
        }
    }
    Sdp::new(elements)
}

/// Replace entity codes in node forms by their surface strings. Forms absent
/// from the table pass through unchanged.
pub fn decode_entities(path: &Sdp, code_table: &BTreeMap<String, String>) -> Sdp {
    let elements = path
        .elements
        .iter()
        .map(|el| match el {
            SdpElement::Node { form } => SdpElement::Node {
                form: code_table.get(form).cloned().unwrap_or_else(|| form.clone()),
            },
            arc => arc.clone(),
        })
        .collect();
    Sdp { elements }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use crate::treebank::tests::{example_sentence, random_tree};
    use crate::treebank::{encode_entities, DependencyGraph, EntitySpan, Scheme, Token};
    use rand::Rng;

    fn example_encoded() -> (DependencyGraph, BTreeMap<String, String>) {
        let spans = vec![
            EntitySpan {
                code: "P05_1057_3".into(),
                start: 2,
                end: 3,
                surface: "knowledge sources".into(),
            },
            EntitySpan {
                code: "P05_1057_4".into(),
                start: 7,
                end: 8,
                surface: "feature functions".into(),
            },
        ];
        encode_entities(&example_sentence(), &spans).unwrap()
    }

    #[test]
    fn extracts_the_example_path() {
        let (graph, table) = example_encoded();
        let from = graph.find_entity_token("P05_1057_3").unwrap();
        let to = graph.find_entity_token("P05_1057_4").unwrap();
        let path = shortest_path(&graph, from, to).unwrap();
        assert_eq!(
            serialize_sdp(&path),
            "P05_1057_3 <- SBJ <- are -> VC -> treated -> ADV -> as -> PMOD -> P05_1057_4"
        );
        let decoded = decode_entities(&path, &table);
        assert_eq!(
            serialize_sdp(&decoded),
            "knowledge_sources <- SBJ <- are -> VC -> treated -> ADV -> as -> PMOD -> feature_functions"
        );
    }

    /// Hand-encoded UD v1.3 parse of "In the process we also provide a formal
    /// definition of parsing motivated by an informal notion due to Lang ."
    /// where "of parsing" hangs directly off "definition" as nmod.
    fn ud_definition_sentence() -> DependencyGraph {
        let rows: [(&str, &str, usize, &str); 20] = [
            ("In", "ADP", 3, "case"),
            ("the", "DET", 3, "det"),
            ("process", "NOUN", 6, "nmod"),
            ("we", "PRON", 6, "nsubj"),
            ("also", "ADV", 6, "advmod"),
            ("provide", "VERB", 0, "root"),
            ("a", "DET", 9, "det"),
            ("formal", "ADJ", 9, "amod"),
            ("definition", "NOUN", 6, "dobj"),
            ("of", "ADP", 11, "case"),
            ("parsing", "NOUN", 9, "nmod"),
            ("motivated", "VERB", 9, "acl"),
            ("by", "ADP", 16, "case"),
            ("an", "DET", 16, "det"),
            ("informal", "ADJ", 16, "amod"),
            ("notion", "NOUN", 12, "nmod"),
            ("due", "ADJ", 16, "amod"),
            ("to", "ADP", 19, "case"),
            ("Lang", "PROPN", 17, "nmod"),
            (".", "PUNCT", 6, "punct"),
        ];
        let tokens = rows
            .iter()
            .enumerate()
            .map(|(i, (form, pos, head, deprel))| Token {
                id: i + 1,
                form: (*form).to_string(),
                pos: (*pos).to_string(),
                head: *head,
                deprel: (*deprel).to_string(),
            })
            .collect();
        DependencyGraph::from_tokens("S2", Scheme::Ud, tokens).unwrap()
    }

    #[test]
    fn extracts_the_ud_definition_path() {
        let spans = vec![
            EntitySpan {
                code: "E1".into(),
                start: 8,
                end: 9,
                surface: "formal definition".into(),
            },
            EntitySpan {
                code: "E2".into(),
                start: 11,
                end: 11,
                surface: "parsing".into(),
            },
        ];
        let (graph, table) = encode_entities(&ud_definition_sentence(), &spans).unwrap();
        let from = graph.find_entity_token("E1").unwrap();
        let to = graph.find_entity_token("E2").unwrap();
        let path = shortest_path(&graph, from, to).unwrap();
        let decoded = decode_entities(&path, &table);
        assert_eq!(
            serialize_sdp(&decoded),
            "formal_definition -> nmod -> parsing"
        );
    }

    #[test]
    fn same_endpoint_gives_single_node() {
        let (graph, _) = example_encoded();
        let path = shortest_path(&graph, 3, 3).unwrap();
        assert_eq!(path.arc_count(), 0);
        assert_eq!(serialize_sdp(&path), "are");
    }

    #[test]
    fn rejects_out_of_range_endpoints() {
        let (graph, _) = example_encoded();
        assert!(matches!(
            shortest_path(&graph, 0, 3),
            Err(SdpError::TokenOutOfRange { token: 0, .. })
        ));
        assert!(matches!(
            shortest_path(&graph, 1, 99),
            Err(SdpError::TokenOutOfRange { token: 99, .. })
        ));
    }

    /// Breadth-first search over the undirected arc set; the oracle for the
    /// node sequence of `shortest_path`.
    fn bfs_node_sequence(graph: &DependencyGraph, from: usize, to: usize) -> Vec<usize> {
        let n = graph.len();
        let mut adj = vec![Vec::new(); n + 1];
        for tok in graph.tokens() {
            if tok.head != 0 {
                adj[tok.id].push(tok.head);
                adj[tok.head].push(tok.id);
            }
        }
        let mut prev = vec![usize::MAX; n + 1];
        let mut queue = std::collections::VecDeque::from([from]);
        prev[from] = from;
        while let Some(u) = queue.pop_front() {
            if u == to {
                break;
            }
            for &v in &adj[u] {
                if prev[v] == usize::MAX {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        let mut seq = vec![to];
        let mut cur = to;
        while cur != from {
            cur = prev[cur];
            seq.push(cur);
        }
        seq.reverse();
        seq
    }

    #[test]
    fn matches_bfs_on_random_trees() {
        let mut rng = seeded_rng(0x5eed_0010);
        for case in 0..1000 {
            let g = random_tree(&mut rng, 20);
            let from = rng.random_range(1..=g.len());
            let to = rng.random_range(1..=g.len());
            let path = shortest_path(&g, from, to).unwrap();
            // Forms are w{id}, so the form sequence identifies the node ids.
            let got: Vec<usize> = path
                .node_forms()
                .iter()
                .map(|f| f[1..].parse().unwrap())
                .collect();
            assert_eq!(got, bfs_node_sequence(&g, from, to), "case {case}");
        }
    }

    fn depth(graph: &DependencyGraph, id: usize) -> usize {
        let mut d = 0;
        let mut cur = id;
        while graph.token(cur).unwrap().head != 0 {
            cur = graph.token(cur).unwrap().head;
            d += 1;
        }
        d
    }

    #[test]
    fn path_symmetry_and_length_on_random_trees() {
        let mut rng = seeded_rng(0x5eed_0011);
        for _ in 0..300 {
            let g = random_tree(&mut rng, 20);
            let a = rng.random_range(1..=g.len());
            let b = rng.random_range(1..=g.len());
            let forward = shortest_path(&g, a, b).unwrap();
            let backward = shortest_path(&g, b, a).unwrap();
            assert_eq!(forward.reversed(), backward);

            // Arc count equals depth(a) + depth(b) - 2 * depth(lca).
            let lca_depth = forward
                .node_forms()
                .iter()
                .map(|f| depth(&g, f[1..].parse().unwrap()))
                .min()
                .unwrap();
            assert_eq!(
                forward.arc_count(),
                depth(&g, a) + depth(&g, b) - 2 * lca_depth
            );

            // Every arc label on the path occurs on an arc of the graph.
            for el in forward.elements() {
                if let SdpElement::Arc { label, .. } = el {
                    assert!(g.tokens().iter().any(|t| &t.deprel == label));
                }
            }
        }
    }

    #[test]
    fn serializes_single_node_and_underscores_multiword_forms() {
        let path = Sdp::new(vec![SdpElement::Node {
            form: "parsing".into(),
        }])
        .unwrap();
        assert_eq!(serialize_sdp(&path), "parsing");

        let multi = Sdp::new(vec![SdpElement::Node {
            form: "knowledge sources".into(),
        }])
        .unwrap();
        assert_eq!(serialize_sdp(&multi), "knowledge_sources");
    }

    #[test]
    fn accepts_unicode_arrows_on_read() {
        let ascii = parse_sdp("a <- X <- b -> Y -> c").unwrap();
        let unicode = parse_sdp("a \u{2190} X \u{2190} b \u{2192} Y \u{2192} c").unwrap();
        assert_eq!(ascii, unicode);
    }

    #[test]
    fn rejects_malformed_path_lines() {
        assert!(parse_sdp("").is_err());
        assert!(parse_sdp("a <- X").is_err());
        assert!(parse_sdp("a <- X -> b").is_err()); // mismatched arrows
        assert!(parse_sdp("a <- X <-").is_err()); // ends on an arc
        assert!(parse_sdp("<- X <- b").is_err()); // starts on an arc
    }

    #[test]
    fn parse_serialize_round_trip_on_random_paths() {
        let mut rng = seeded_rng(0x5eed_0012);
        let labels = ["SBJ", "VC", "nmod", "case", "dobj_x"];
        for _ in 0..200 {
            let arcs = rng.random_range(0..6);
            let mut elements = vec![SdpElement::Node {
                form: format!("n{}_{}", rng.random_range(0..100), rng.random_range(0..10)),
            }];
            for _ in 0..arcs {
                elements.push(SdpElement::Arc {
                    label: labels[rng.random_range(0..labels.len())].to_string(),
                    direction: if rng.random_range(0..2) == 0 {
                        Direction::Left
                    } else {
                        Direction::Right
                    },
                });
                elements.push(SdpElement::Node {
                    form: format!("n{}", rng.random_range(0..100)),
                });
            }
            let path = Sdp::new(elements).unwrap();
            assert_eq!(parse_sdp(&serialize_sdp(&path)).unwrap(), path);
        }
    }

    #[test]
    fn decode_maps_codes_and_is_idempotent_on_disjoint_tables() {
        let (graph, table) = example_encoded();
        let from = graph.find_entity_token("P05_1057_3").unwrap();
        let to = graph.find_entity_token("P05_1057_4").unwrap();
        let path = shortest_path(&graph, from, to).unwrap();

        let decoded = decode_entities(&path, &table);
        assert_eq!(decoded.node_forms()[0], "knowledge sources");
        // Codes and surfaces are disjoint, so decoding twice changes nothing.
        assert_eq!(decode_entities(&decoded, &table), decoded);
        // An empty table is the identity.
        assert_eq!(decode_entities(&path, &BTreeMap::new()), path);
    }
}
