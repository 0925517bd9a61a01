//! Stratified k-fold cross-validation on a synthetic path corpus, with the
//! per-class precision/recall/F1 table and the three aggregate scores.
//!
//! ```text
//! cargo run --example cross_validate
//! ```

use sdprel::cnn::HyperParams;
use sdprel::eval::cross_validate;
use sdprel::features::{path_tokens, Mode};
use sdprel::runner::{assemble_dataset, extract_corpus_paths, Corpus, DataOptions};
use sdprel::synth;
use sdprel::treebank::RelationLabel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth::separable_corpus(180, 13);
    let corpus = Corpus::from_parts(corpus.graphs, corpus.spans, corpus.relations);
    let paths = extract_corpus_paths(&corpus)?;
    let tokens: Vec<Vec<String>> = paths.iter().map(|e| path_tokens(&e.path)).collect();
    let labels: Vec<(usize, bool)> = corpus
        .relations
        .iter()
        .map(|r| (r.label.index(), r.reversed))
        .collect();
    let options = DataOptions {
        embeddings: None,
        dim: 8,
        max_len: None,
    };
    let dataset = assemble_dataset(&tokens, &labels, Mode::Sdp, &options, 3, 13)?;

    let hp = HyperParams {
        filter_widths: vec![3],
        feature_maps: 12,
        learning_rate: 1e-2,
        dropout_keep: 1.0,
        epochs: 25,
        batch_size: 20,
        seed: 13,
        ..HyperParams::default()
    };
    let cv = cross_validate(&dataset.instances, &dataset.embeddings, &hp, 5, 13, 1)?;

    println!("{:<14} {:>10} {:>7} {:>7}", "class", "precision", "recall", "F1");
    for label in RelationLabel::ALL {
        let c = label.index();
        println!(
            "{:<14} {:>10.4} {:>7.4} {:>7.4}",
            label.as_str(),
            cv.pooled.precision[c],
            cv.pooled.recall[c],
            cv.pooled.f1[c]
        );
    }
    println!();
    for fold in &cv.folds {
        println!(
            "fold {}: macro-F1 {:.4} on {} held-out instances",
            fold.fold,
            fold.metrics.macro_f1,
            fold.test_indices.len()
        );
    }
    println!(
        "\npooled macro-F1 {:.4} | mean of folds {:.4} | best fold {:.4} (fold {})",
        cv.pooled.macro_f1, cv.mean_macro_f1, cv.best_macro_f1, cv.best_fold
    );
    Ok(())
}
