//! Parse a small treebank, collapse annotated entity spans to codes, and
//! print the shortest dependency path for each annotated relation.
//!
//! ```text
//! cargo run --example extract_paths
//! ```

use std::path::Path;

use sdprel::runner::{extract_corpus_paths, load_corpus};
use sdprel::sdp::serialize_sdp;
use sdprel::treebank::Scheme;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let corpus = load_corpus(
        &data.join("demo.conll"),
        Scheme::Conll08,
        Some(&data.join("demo.spans")),
        &data.join("demo.relations"),
    )?;

    println!(
        "{} sentences, {} relation instances\n",
        corpus.graphs.len(),
        corpus.relations.len()
    );

    let extracted = extract_corpus_paths(&corpus)?;
    for (relation, extracted) in corpus.relations.iter().zip(&extracted) {
        let direction = if relation.reversed { " (reversed)" } else { "" };
        println!(
            "{}  [{}{}]\n    {}\n",
            relation.sentence_ref,
            relation.label.as_str(),
            direction,
            serialize_sdp(&extracted.path)
        );
    }
    Ok(())
}
