//! Bayesian hyperparameter search over the seven-dimensional CNN space:
//! filter widths, feature maps, activation, pooling, L2, learning rate, and
//! dropout, scored by mean cross-validated macro-F1.
//!
//! ```text
//! cargo run --release --example tune_hyperparameters
//! ```

use sdprel::cnn::HyperParams;
use sdprel::eval::cross_validate;
use sdprel::features::{path_tokens, Mode};
use sdprel::runner::{assemble_dataset, extract_corpus_paths, Corpus, DataOptions};
use sdprel::synth;
use sdprel::tuner::{config_to_hp, relation_cnn_space, tune};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synth::separable_corpus(90, 4);
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
        dim: 6,
        max_len: None,
    };
    // Padded length must cover the widest filter in the search space (9).
    let dataset = assemble_dataset(&tokens, &labels, Mode::Sdp, &options, 9, 4)?;

    // Cheap training budget per candidate; the searched dimensions come
    // from the tuner, everything else from this base configuration.
    let base = HyperParams {
        epochs: 8,
        batch_size: 15,
        seed: 4,
        ..HyperParams::default()
    };

    let space = relation_cnn_space();
    let objective = |config: &sdprel::tuner::Config| -> f64 {
        let hp = match config_to_hp(config, &base) {
            Ok(hp) => hp,
            Err(_) => return f64::NEG_INFINITY,
        };
        match cross_validate(&dataset.instances, &dataset.embeddings, &hp, 3, 4, 1) {
            Ok(cv) => cv.mean_macro_f1,
            Err(_) => f64::NEG_INFINITY,
        }
    };

    println!("searching 16 configurations (10 seeded + 6 model-guided)...\n");
    let (best, trace) = tune(objective, &space, 16, 4)?;
    for entry in &trace {
        println!(
            "eval {:>2}: macro-F1 {:>7.4} | best so far {:>7.4} | {}",
            entry.index,
            entry.value,
            entry.best_so_far,
            space.config_to_json(&entry.config)
        );
    }

    let best_hp = config_to_hp(&best, &base)?;
    println!(
        "\nbest configuration: widths {:?}, {} maps, {}, {} pooling, l2 {:.2e}, lr {:.2e}, keep {:.2}",
        best_hp.filter_widths,
        best_hp.feature_maps,
        best_hp.activation.as_str(),
        best_hp.pooling.as_str(),
        best_hp.l2,
        best_hp.learning_rate,
        best_hp.dropout_keep
    );
    Ok(())
}
