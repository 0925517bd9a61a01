//! Relation classification over shortest dependency paths.
//!
//! The crate turns dependency-parsed text with entity and relation
//! annotation into a six-way relation classifier:
//!
//! 1. [`treebank`] parses CoNLL-X / CoNLL-U treebanks, validates the tree
//!    invariants, and substitutes entity codes for annotated token spans.
//! 2. [`sdp`] extracts the shortest dependency path between two entities,
//!    with direction-tagged arc labels, and round-trips it through a stable
//!    text serialization.
//! 3. [`features`] maps paths (or whole sentences, for the baseline) onto
//!    padded index vectors over a first-seen vocabulary with pretrained or
//!    seeded-random embeddings.
//! 4. [`cnn`] classifies the encoded inputs with a two-channel convolutional
//!    net (frozen and fine-tuned embedding channels) trained by Adam on a
//!    class-weighted cross-entropy loss; gradients are exact.
//! 5. [`tuner`] searches the seven-dimensional hyperparameter space with a
//!    Gaussian-process surrogate and the expected-improvement criterion.
//! 6. [`eval`] runs stratified k-fold cross-validation, computes per-class
//!    and macro-averaged metrics, and compares parse representations side by
//!    side.
//! 7. [`runner`] wires the above into the `sdprel` command-line tool
//!    (`extract`, `train`, `eval`, `tune`, `compare`, `baseline`).
//!
//! Every stage is deterministic: one master seed fans out into named
//! sub-seeds ([`rng::sub_seed`]), so any command rerun with the same inputs
//! and seed reproduces its outputs byte for byte.
//!
//! The `examples/` directory contains one runnable walkthrough per
//! capability:
//!
//! * `extract_paths` — parse a treebank, encode entities, print paths.
//! * `train_and_predict` — fit a model and classify held-out paths.
//! * `cross_validate` — stratified k-fold evaluation with a metrics table.
//! * `tune_hyperparameters` — Bayesian search on a small corpus.
//! * `compare_schemes` — two parse schemes of the same sentences, compared.
//! * `sentence_baseline` — path input vs. whole-sentence input.
//! * `gp_on_toy` — the Gaussian-process tuner on a 1-D toy objective.

pub mod cnn;
pub mod eval;
pub mod features;
pub mod rng;
pub mod runner;
pub mod sdp;
pub mod synth;
pub mod treebank;
pub mod tuner;
