//! Train the two-channel CNN on a synthetic path corpus, then classify a
//! few held-out instances and print the predictions next to the gold labels.
//!
//! ```text
//! cargo run --example train_and_predict
//! ```

use sdprel::cnn::{self, ClassWeights, CnnModel, HyperParams, NUM_CLASSES};
use sdprel::features::{path_tokens, Mode};
use sdprel::runner::{assemble_dataset, extract_corpus_paths, Corpus, DataOptions};
use sdprel::synth;
use sdprel::treebank::RelationLabel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // 120 generated instances whose label is readable off the path.
    let corpus = synth::separable_corpus(120, 7);
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
    let dataset = assemble_dataset(&tokens, &labels, Mode::Sdp, &options, 3, 7)?;
    println!(
        "dataset: {} instances, vocabulary {}, padded length {}",
        dataset.instances.len(),
        dataset.vocab.len(),
        dataset.max_len
    );

    // Hold out the last dozen instances.
    let split = dataset.instances.len() - 12;
    let (train_set, held_out) = dataset.instances.split_at(split);

    let hp = HyperParams {
        filter_widths: vec![3],
        feature_maps: 12,
        learning_rate: 1e-2,
        dropout_keep: 1.0,
        epochs: 25,
        batch_size: 20,
        seed: 7,
        ..HyperParams::default()
    };
    let mut counts = [0usize; NUM_CLASSES];
    for instance in train_set {
        counts[instance.label_index] += 1;
    }
    let weights = ClassWeights::from_counts(&counts);
    let mut model = CnnModel::init(dataset.embeddings.clone(), dataset.embeddings.clone(), &hp)?;
    let losses = cnn::train(&mut model, train_set, &hp, &weights)?;
    println!(
        "trained {} epochs; loss {:.4} -> {:.4}\n",
        losses.len(),
        losses.first().unwrap(),
        losses.last().unwrap()
    );

    let mut correct = 0;
    for instance in held_out {
        let predicted = cnn::predict(&model, instance, &hp)?;
        let ok = predicted == instance.label_index;
        correct += ok as usize;
        println!(
            "gold {:<14} predicted {:<14} {}",
            RelationLabel::ALL[instance.label_index].as_str(),
            RelationLabel::ALL[predicted].as_str(),
            if ok { "+" } else { "x" }
        );
    }
    println!("\n{correct}/{} held-out instances correct", held_out.len());
    Ok(())
}
