//! Evaluation: stratified k-fold cross-validation, confusion matrices,
//! macro-averaged F1, per-relation breakdowns, and the representation
//! comparison harness.
//!
//! Three aggregate flavors are reported for a cross-validation run — the
//! macro-F1 of the pooled confusion matrix, the mean of the per-fold
//! macro-F1s, and the best single fold — because different experimental
//! write-ups quote different ones. Class weights are always computed on the
//! training folds only.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::cnn::{self, ClassWeights, CnnError, CnnModel, HyperParams, NUM_CLASSES};
use crate::features::{EmbeddingMatrix, EncodedInstance};
use crate::rng::{seeded_rng, sub_seed};
use crate::treebank::RelationLabel;

/// Errors raised during evaluation.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("too few instances: {found} instance(s) cannot fill {k} folds")]
    TooFewInstances { found: usize, k: usize },
    #[error("invalid fold count {0}: need at least 2")]
    InvalidFolds(usize),
    #[error("misaligned instances: {0}")]
    MisalignedInstances(String),
    #[error(transparent)]
    Train(#[from] CnnError),
}

// ---------------------------------------------------------------------------
// Confusion matrix and metrics
// ---------------------------------------------------------------------------

/// 6x6 integer counts; rows are gold classes, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        ConfusionMatrix::default()
    }

    pub fn add(&mut self, gold: usize, predicted: usize) {
        self.counts[gold][predicted] += 1;
    }

    pub fn from_pairs(pairs: &[(usize, usize)]) -> Self {
        let mut cm = ConfusionMatrix::new();
        for &(gold, predicted) in pairs {
            cm.add(gold, predicted);
        }
        cm
    }

    pub fn count(&self, gold: usize, predicted: usize) -> u64 {
        self.counts[gold][predicted]
    }

    /// All counts, rows = gold.
    pub fn rows(&self) -> &[[u64; NUM_CLASSES]; NUM_CLASSES] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for g in 0..NUM_CLASSES {
            for p in 0..NUM_CLASSES {
                self.counts[g][p] += other.counts[g][p];
            }
        }
    }
}

/// Per-class precision/recall/F1 plus their unweighted macro average.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub precision: [f64; NUM_CLASSES],
    pub recall: [f64; NUM_CLASSES],
    pub f1: [f64; NUM_CLASSES],
    /// Arithmetic mean of the six class F1 values, regardless of support.
    pub macro_f1: f64,
}

/// Compute per-class precision, recall, and F1 from a confusion matrix.
/// Zero denominators yield 0; macro-F1 averages all six classes.
pub fn macro_f1(cm: &ConfusionMatrix) -> Metrics {
    let mut precision = [0.0; NUM_CLASSES];
    let mut recall = [0.0; NUM_CLASSES];
    let mut f1 = [0.0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let tp = cm.count(c, c) as f64;
        let predicted: f64 = (0..NUM_CLASSES).map(|g| cm.count(g, c) as f64).sum();
        let gold: f64 = (0..NUM_CLASSES).map(|p| cm.count(c, p) as f64).sum();
        precision[c] = if predicted > 0.0 { tp / predicted } else { 0.0 };
        recall[c] = if gold > 0.0 { tp / gold } else { 0.0 };
        let denom = precision[c] + recall[c];
        f1[c] = if denom > 0.0 {
            2.0 * precision[c] * recall[c] / denom
        } else {
            0.0
        };
    }
    let macro_f1 = f1.iter().sum::<f64>() / NUM_CLASSES as f64;
    Metrics {
        precision,
        recall,
        f1,
        macro_f1,
    }
}

// ---------------------------------------------------------------------------
// Stratified folds
// ---------------------------------------------------------------------------

/// Split instance indices into k disjoint folds, stratified by label: each
/// class is shuffled with the seed and dealt round-robin starting at fold 0,
/// so per-class counts across folds differ by at most one. Fold contents are
/// returned sorted.
pub fn stratified_folds(
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 {
        return Err(EvalError::InvalidFolds(k));
    }
    if labels.len() < k {
        return Err(EvalError::TooFewInstances {
            found: labels.len(),
            k,
        });
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let mut rng = seeded_rng(sub_seed(seed, "folds"));
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for indices in by_class.values_mut() {
        indices.shuffle(&mut rng);
        for (i, &idx) in indices.iter().enumerate() {
            folds[i % k].push(idx);
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

/// Outcome of one held-out fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// Class weights used for this fold, computed on its training folds.
    pub class_weights: [f64; NUM_CLASSES],
    /// Indices of the held-out instances.
    pub test_indices: Vec<usize>,
}

/// Aggregated cross-validation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    /// Confusion matrix pooled over all held-out folds.
    pub pooled_confusion: ConfusionMatrix,
    /// Metrics of the pooled confusion matrix.
    pub pooled: Metrics,
    /// Mean of the per-fold macro-F1 values.
    pub mean_macro_f1: f64,
    /// Highest per-fold macro-F1 and the fold that achieved it.
    pub best_macro_f1: f64,
    pub best_fold: usize,
}

fn run_fold(
    dataset: &[EncodedInstance],
    folds: &[Vec<usize>],
    fold_index: usize,
    embeddings: &EmbeddingMatrix,
    hp: &HyperParams,
    seed: u64,
) -> Result<FoldResult, EvalError> {
    let mut train_set: Vec<EncodedInstance> = Vec::new();
    let mut class_counts = [0usize; NUM_CLASSES];
    for (j, fold) in folds.iter().enumerate() {
        if j == fold_index {
            continue;
        }
        for &idx in fold {
            train_set.push(dataset[idx].clone());
            class_counts[dataset[idx].label_index] += 1;
        }
    }
    let weights = ClassWeights::from_counts(&class_counts);
    let mut hp_fold = hp.clone();
    hp_fold.seed = sub_seed(seed, &format!("fold{fold_index}"));
    let mut model = CnnModel::init(embeddings.clone(), embeddings.clone(), &hp_fold)?;
    cnn::train(&mut model, &train_set, &hp_fold, &weights)?;
    let mut confusion = ConfusionMatrix::new();
    for &idx in &folds[fold_index] {
        let predicted = cnn::predict(&model, &dataset[idx], &hp_fold)?;
        confusion.add(dataset[idx].label_index, predicted);
    }
    let metrics = macro_f1(&confusion);
    Ok(FoldResult {
        fold: fold_index,
        confusion,
        metrics,
        class_weights: *weights.as_array(),
        test_indices: folds[fold_index].clone(),
    })
}

/// Stratified k-fold cross-validation: for each fold, train a fresh model on
/// the remaining folds (class weights from those folds only) and score the
/// held-out instances. `jobs` > 1 trains that many folds concurrently;
/// results are identical either way because every fold derives its own seed.
pub fn cross_validate(
    dataset: &[EncodedInstance],
    embeddings: &EmbeddingMatrix,
    hp: &HyperParams,
    k: usize,
    seed: u64,
    jobs: usize,
) -> Result<CrossValidation, EvalError> {
    let labels: Vec<usize> = dataset.iter().map(|e| e.label_index).collect();
    let folds = stratified_folds(&labels, k, seed)?;

    let mut fold_results: Vec<FoldResult> = Vec::with_capacity(k);
    if jobs <= 1 {
        for i in 0..k {
            fold_results.push(run_fold(dataset, &folds, i, embeddings, hp, seed)?);
        }
    } else {
        let order: Vec<usize> = (0..k).collect();
        for wave in order.chunks(jobs.max(1)) {
            let wave_results = std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|&i| {
                        let folds = &folds;
                        scope.spawn(move || run_fold(dataset, folds, i, embeddings, hp, seed))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("fold worker panicked"))
                    .collect::<Vec<_>>()
            });
            for result in wave_results {
                fold_results.push(result?);
            }
        }
    }

    let mut pooled_confusion = ConfusionMatrix::new();
    for fold in &fold_results {
        pooled_confusion.merge(&fold.confusion);
    }
    let pooled = macro_f1(&pooled_confusion);
    let mean_macro_f1 =
        fold_results.iter().map(|f| f.metrics.macro_f1).sum::<f64>() / fold_results.len() as f64;
    let (best_fold, best_macro_f1) = fold_results
        .iter()
        .map(|f| (f.fold, f.metrics.macro_f1))
        .fold((0usize, f64::NEG_INFINITY), |acc, (i, v)| {
            if v > acc.1 {
                (i, v)
            } else {
                acc
            }
        });
    Ok(CrossValidation {
        k,
        seed,
        folds: fold_results,
        pooled_confusion,
        pooled,
        mean_macro_f1,
        best_macro_f1,
        best_fold,
    })
}

// ---------------------------------------------------------------------------
// Representation comparison
// ---------------------------------------------------------------------------

/// One representation entering a comparison: a name, its encoded instances,
/// the embedding table they index into, and the hyperparameters to train
/// with.
pub struct SchemeRun<'a> {
    pub name: String,
    pub dataset: &'a [EncodedInstance],
    pub embeddings: &'a EmbeddingMatrix,
    pub hp: HyperParams,
}

///// A per-relation comparison table: rows are the six relations plus a macro
/// row; one F1 column per scheme, and, when a baseline run is supplied, a
/// leading baseline column plus a difference column (first scheme minus
/// baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Column headers, in emission order.
    pub columns: Vec<String>,
    /// Row labels: the six relation names, then "macro-F1".
    pub row_labels: Vec<String>,
    /// values[row][column], aligned with `columns`.
    pub values: Vec<Vec<f64>>,
    /// Full per-scheme cross-validation results, aligned with the scheme
    /// columns (baseline first when present).
    pub runs: Vec<(String, CrossValidation)>,
}

fn aligned_labels(runs: &[&SchemeRun]) -> Result<Vec<usize>, EvalError> {
    let first = runs[0];
    let labels: Vec<usize> = first.dataset.iter().map(|e| e.label_index).collect();
    for run in &runs[1..] {
        let other: Vec<usize> = run.dataset.iter().map(|e| e.label_index).collect();
        if other != labels {
            return Err(EvalError::MisalignedInstances(format!(
                "run {:?} has a different relation sequence than run {:?} ({} vs {} instances)",
                run.name,
                first.name,
                other.len(),
                labels.len()
            )));
        }
    }
    Ok(labels)
}

/// Cross-validate every scheme on identical fold splits and tabulate
/// per-relation F1. All runs must carry the same relation sequence
/// (parallel instance sets over different parses); otherwise
/// `MisalignedInstances` is raised. Pooled-confusion F1 fills the table.
pub fn compare_representations(
    schemes: &[SchemeRun<'_>],
    baseline: Option<&SchemeRun<'_>>,
    k: usize,
    seed: u64,
    jobs: usize,
) -> Result<Comparison, EvalError> {
    if schemes.is_empty() {
        return Err(EvalError::MisalignedInstances(
            "no schemes supplied".to_string(),
        ));
    }
    let mut all: Vec<&SchemeRun> = Vec::new();
    if let Some(b) = baseline {
        all.push(b);
    }
    all.extend(schemes.iter());
    aligned_labels(&all)?;

    let mut runs: Vec<(String, CrossValidation)> = Vec::new();
    for run in &all {
        let cv = cross_validate(run.dataset, run.embeddings, &run.hp, k, seed, jobs)?;
        runs.push((run.name.clone(), cv));
    }

    let mut columns: Vec<String> = runs.iter().map(|(name, _)| name.clone()).collect();
    let with_diff = baseline.is_some();
    if with_diff {
        columns.push("diff".to_string());
    }

    let mut row_labels: Vec<String> = RelationLabel::ALL
        .iter()
        .map(|l| l.as_str().to_string())
        .collect();
    row_labels.push("macro-F1".to_string());

    let mut values: Vec<Vec<f64>> = Vec::with_capacity(row_labels.len());
    for row in 0..row_labels.len() {
        let mut cells: Vec<f64> = runs
            .iter()
            .map(|(_, cv)| {
                if row < NUM_CLASSES {
                    cv.pooled.f1[row]
                } else {
                    cv.pooled.macro_f1
                }
            })
            .collect();
        if with_diff {
            // First scheme column sits right after the baseline column.
            let diff = cells[1] - cells[0];
            cells.push(diff);
        }
        values.push(cells);
    }

    Ok(Comparison {
        columns,
        row_labels,
        values,
        runs,
    })
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

/// Render a comparison as TSV: header row, then one row per relation plus
/// the macro row, F1 values with 4 decimals.
pub fn comparison_tsv(cmp: &Comparison) -> String {
    let mut out = String::from("relation");
    for col in &cmp.columns {
        out.push('\t');
        out.push_str(col);
    }
    out.push('\n');
    for (label, row) in cmp.row_labels.iter().zip(&cmp.values) {
        out.push_str(label);
        for v in row {
            out.push_str(&format!("\t{v:.4}"));
        }
        out.push('\n');
    }
    out
}

/// Render a comparison as an aligned plain-text table.
pub fn comparison_text(cmp: &Comparison) -> String {
    let label_width = cmp
        .row_labels
        .iter()
        .map(|l| l.len())
        .chain(std::iter::once("relation".len()))
        .max()
        .unwrap_or(8);
    let col_width = cmp
        .columns
        .iter()
        .map(|c| c.len())
        .max()
        .unwrap_or(6)
        .max(7);
    let mut out = format!("{:<label_width$}", "relation");
    for col in &cmp.columns {
        out.push_str(&format!("  {col:>col_width$}"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(label_width + (col_width + 2) * cmp.columns.len()));
    out.push('\n');
    for (label, row) in cmp.row_labels.iter().zip(&cmp.values) {
        out.push_str(&format!("{label:<label_width$}"));
        for v in row {
            out.push_str(&format!("  {v:>col_width$.4}"));
        }
        out.push('\n');
    }
    out
}

fn metrics_json(metrics: &Metrics) -> serde_json::Value {
    let mut per_class = serde_json::Map::new();
    for label in RelationLabel::ALL {
        let c = label.index();
        per_class.insert(
            label.as_str().to_string(),
            serde_json::json!({
                "precision": metrics.precision[c],
                "recall": metrics.recall[c],
                "f1": metrics.f1[c],
            }),
        );
    }
    serde_json::json!({
        "per_class": serde_json::Value::Object(per_class),
        "macro_f1": metrics.macro_f1,
    })
}

fn confusion_json(cm: &ConfusionMatrix) -> serde_json::Value {
    serde_json::json!({
        "rows": "gold",
        "labels": RelationLabel::ALL.iter().map(|l| l.as_str()).collect::<Vec<_>>(),
        "counts": cm.rows().iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
    })
}

fn hp_json(hp: &HyperParams) -> serde_json::Value {
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
        "seed": hp.seed,
    })
}

/// Machine-readable cross-validation report: seeds, hyperparameters, pooled
/// and per-fold metrics, confusion matrices, and all three aggregates.
pub fn cv_report_json(cv: &CrossValidation, hp: &HyperParams) -> serde_json::Value {
    serde_json::json!({
        "k": cv.k,
        "seed": cv.seed,
        "hyperparameters": hp_json(hp),
        "pooled": {
            "metrics": metrics_json(&cv.pooled),
            "confusion": confusion_json(&cv.pooled_confusion),
            "total": cv.pooled_confusion.total(),
        },
        "aggregates": {
            "pooled_macro_f1": cv.pooled.macro_f1,
            "mean_macro_f1": cv.mean_macro_f1,
            "best_macro_f1": cv.best_macro_f1,
            "best_fold": cv.best_fold,
        },
        "folds": cv.folds.iter().map(|f| serde_json::json!({
            "fold": f.fold,
            "metrics": metrics_json(&f.metrics),
            "confusion": confusion_json(&f.confusion),
            "class_weights": f.class_weights.to_vec(),
            "test_indices": f.test_indices,
        })).collect::<Vec<_>>(),
    })
}

/// Machine-readable comparison report.
pub fn comparison_json(cmp: &Comparison, hp: &HyperParams) -> serde_json::Value {
    serde_json::json!({
        "columns": cmp.columns,
        "rows": cmp.row_labels,
        "values": cmp.values,
        "runs": cmp.runs.iter().map(|(name, cv)| serde_json::json!({
            "scheme": name,
            "report": cv_report_json(cv, hp),
        })).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{Activation, Pooling};
    use crate::features::{EmbeddingMatrix, PAD};
    use rand::Rng;

    #[test]
    fn perfect_diagonal_scores_one() {
        let mut cm = ConfusionMatrix::new();
        for c in 0..NUM_CLASSES {
            for _ in 0..(c + 1) {
                cm.add(c, c);
            }
        }
        let m = macro_f1(&cm);
        for c in 0..NUM_CLASSES {
            assert_eq!(m.precision[c], 1.0);
            assert_eq!(m.recall[c], 1.0);
            assert_eq!(m.f1[c], 1.0);
        }
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(cm.total(), 21);
    }

    #[test]
    fn always_first_class_on_uniform_gold() {
        // Every gold class appears once; everything is predicted as class 0.
        let mut cm = ConfusionMatrix::new();
        for c in 0..NUM_CLASSES {
            cm.add(c, 0);
        }
        let m = macro_f1(&cm);
        assert!((m.precision[0] - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.recall[0], 1.0);
        assert!((m.f1[0] - 2.0 / 7.0).abs() < 1e-15);
        for c in 1..NUM_CLASSES {
            assert_eq!(m.f1[c], 0.0);
        }
        assert!((m.macro_f1 - 1.0 / 21.0).abs() < 1e-15);
        assert!((m.macro_f1 - 0.0476).abs() < 1e-4);
    }

    /// Naive independent recomputation working from raw (gold, pred) pairs.
    fn naive_metrics(pairs: &[(usize, usize)]) -> ([f64; 6], f64) {
        let mut f1 = [0.0; 6];
        for c in 0..6 {
            let tp = pairs.iter().filter(|(g, p)| *g == c && *p == c).count() as f64;
            let pred_c = pairs.iter().filter(|(_, p)| *p == c).count() as f64;
            let gold_c = pairs.iter().filter(|(g, _)| *g == c).count() as f64;
            let precision = if pred_c > 0.0 { tp / pred_c } else { 0.0 };
            let recall = if gold_c > 0.0 { tp / gold_c } else { 0.0 };
            f1[c] = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
        }
        (f1, f1.iter().sum::<f64>() / 6.0)
    }

    #[test]
    fn matches_naive_recomputation_on_random_matrices() {
        let mut rng = seeded_rng(0xF1);
        for _ in 0..50 {
            let mut pairs = Vec::new();
            let n = rng.random_range(1..200);
            for _ in 0..n {
                pairs.push((rng.random_range(0..6), rng.random_range(0..6)));
            }
            let cm = ConfusionMatrix::from_pairs(&pairs);
            assert_eq!(cm.total() as usize, n);
            let m = macro_f1(&cm);
            let (naive_f1, naive_macro) = naive_metrics(&pairs);
            for c in 0..6 {
                assert!((m.f1[c] - naive_f1[c]).abs() < 1e-12);
            }
            assert!((m.macro_f1 - naive_macro).abs() < 1e-12);
        }
    }

    #[test]
    fn macro_f1_invariant_under_label_permutation() {
        let mut rng = seeded_rng(0xF2);
        let permutation = [3usize, 0, 5, 1, 4, 2];
        for _ in 0..20 {
            let pairs: Vec<(usize, usize)> = (0..100)
                .map(|_| (rng.random_range(0..6), rng.random_range(0..6)))
                .collect();
            let permuted: Vec<(usize, usize)> = pairs
                .iter()
                .map(|&(g, p)| (permutation[g], permutation[p]))
                .collect();
            let a = macro_f1(&ConfusionMatrix::from_pairs(&pairs));
            let b = macro_f1(&ConfusionMatrix::from_pairs(&permuted));
            assert!((a.macro_f1 - b.macro_f1).abs() < 1e-15);
        }
    }

    #[test]
    fn two_per_class_two_folds_balance_perfectly() {
        let labels: Vec<usize> = (0..6).flat_map(|c| [c, c]).collect();
        let folds = stratified_folds(&labels, 2, 9).unwrap();
        assert_eq!(folds.len(), 2);
        for fold in &folds {
            assert_eq!(fold.len(), 6);
            for c in 0..6 {
                let count = fold.iter().filter(|&&i| labels[i] == c).count();
                assert_eq!(count, 1, "class {c} not balanced");
            }
        }
    }

    #[test]
    fn fold_counts_track_the_reference_class_profile() {
        // Class sizes from the corpus profile: 947/498/425/258/193/136.
        let profile = [947usize, 498, 425, 258, 193, 136];
        let labels: Vec<usize> = profile
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        let k = 5;
        let folds = stratified_folds(&labels, k, 1234).unwrap();

        // Exact partition.
        let mut seen: Vec<usize> = folds.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..labels.len()).collect::<Vec<_>>());

        for (c, &n) in profile.iter().enumerate() {
            let ideal = n as f64 / k as f64;
            for fold in &folds {
                let count = fold.iter().filter(|&&i| labels[i] == c).count();
                assert!(
                    (count as f64 - ideal).abs() <= 1.0,
                    "class {c}: {count} vs ideal {ideal}"
                );
            }
        }
    }

    #[test]
    fn folds_are_deterministic_and_seed_sensitive() {
        let labels: Vec<usize> = (0..60).map(|i| i % 6).collect();
        let a = stratified_folds(&labels, 5, 7).unwrap();
        let b = stratified_folds(&labels, 5, 7).unwrap();
        let c = stratified_folds(&labels, 5, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fold_errors() {
        assert!(matches!(
            stratified_folds(&[0, 1, 2], 1, 0),
            Err(EvalError::InvalidFolds(1))
        ));
        assert!(matches!(
            stratified_folds(&[0, 1], 3, 0),
            Err(EvalError::TooFewInstances { found: 2, k: 3 })
        ));
    }

    /// A small corpus whose label is fully determined by one marker token.
    /// Vocabulary: 0 PAD, 1 UNK, 2..8 markers, 8/9 shared entity tokens,
    /// 10.. filler.
    fn separable_corpus(per_class: usize, seed: u64) -> (Vec<EncodedInstance>, EmbeddingMatrix) {
        let vocab_size = 16;
        let mut rng = seeded_rng(seed);
        let mut data = Vec::new();
        for c in 0..NUM_CLASSES {
            for _ in 0..per_class {
                let marker = 2 + c;
                let mut filler = || 10 + rand::Rng::random_range(&mut rng, 0..6usize);
                let indices = vec![8, filler(), marker, filler(), 9, PAD, PAD, PAD];
                data.push(EncodedInstance {
                    indices,
                    true_len: 5,
                    label_index: c,
                    reversed: false,
                });
            }
        }
        let emb_rng = &mut seeded_rng(sub_seed(seed, "vocab-init"));
        let embeddings = EmbeddingMatrix::random_init(vocab_size, 6, emb_rng);
        (data, embeddings)
    }

    fn fast_hp(epochs: usize) -> HyperParams {
        HyperParams {
            filter_widths: vec![3],
            feature_maps: 12,
            activation: Activation::Relu,
            pooling: Pooling::Max,
            l2: 1e-4,
            learning_rate: 1e-2,
            dropout_keep: 1.0,
            epochs,
            batch_size: 10,
            seed: 42,
        }
    }

    #[test]
    fn cross_validation_learns_a_separable_corpus() {
        let (data, embeddings) = separable_corpus(10, 0xC0FFEE);
        let cv = cross_validate(&data, &embeddings, &fast_hp(40), 5, 77, 1).unwrap();
        assert!(
            cv.mean_macro_f1 >= 0.95,
            "mean macro-F1 {} too low",
            cv.mean_macro_f1
        );
        assert_eq!(cv.pooled_confusion.total() as usize, data.len());
        assert!(cv.best_macro_f1 >= cv.mean_macro_f1 - 1e-12);
        assert_eq!(cv.folds.len(), 5);
    }

    #[test]
    fn zero_epochs_reduces_to_the_always_first_class_baseline() {
        let (data, embeddings) = separable_corpus(5, 0xC0FFEF);
        let cv = cross_validate(&data, &embeddings, &fast_hp(0), 5, 77, 1).unwrap();
        // Expected confusion: every instance lands in column 0.
        let mut expected = ConfusionMatrix::new();
        for instance in &data {
            expected.add(instance.label_index, 0);
        }
        assert_eq!(cv.pooled_confusion, expected);
        let oracle = macro_f1(&expected);
        assert!((cv.pooled.macro_f1 - oracle.macro_f1).abs() < 1e-15);
        // Uniform gold over six classes, all predicted as class 0.
        assert!((cv.pooled.macro_f1 - 1.0 / 21.0).abs() < 1e-12);
    }

    #[test]
    fn cross_validation_is_deterministic() {
        let (data, embeddings) = separable_corpus(4, 0xC10) ;
        let a = cross_validate(&data, &embeddings, &fast_hp(3), 4, 5, 1).unwrap();
        let b = cross_validate(&data, &embeddings, &fast_hp(3), 4, 5, 1).unwrap();
        assert_eq!(a, b);
        let ja = cv_report_json(&a, &fast_hp(3)).to_string();
        let jb = cv_report_json(&b, &fast_hp(3)).to_string();
        assert_eq!(ja, jb);
    }

    #[test]
    fn parallel_folds_match_sequential_folds() {
        let (data, embeddings) = separable_corpus(4, 0xC11);
        let sequential = cross_validate(&data, &embeddings, &fast_hp(3), 4, 5, 1).unwrap();
        let parallel = cross_validate(&data, &embeddings, &fast_hp(3), 4, 5, 3).unwrap();
        assert_eq!(sequential, parallel);
    }

    #[test]
    fn class_weights_come_from_training_folds_only() {
        // 12 instances of class 0, 2 each of classes 1..5, k=2: the training
        // complement of each fold has a different class balance than the
        // full set, and the weights must reflect the training folds.
        let mut labels = vec![0usize; 12];
        for c in 1..6 {
            labels.push(c);
            labels.push(c);
        }
        let mut data = Vec::new();
        for &c in &labels {
            data.push(EncodedInstance {
                indices: vec![2 + c, 8, 9, PAD],
                true_len: 3,
                label_index: c,
                reversed: false,
            });
        }
        let embeddings = EmbeddingMatrix::random_init(16, 4, &mut seeded_rng(1));
        let cv = cross_validate(&data, &embeddings, &fast_hp(1), 2, 3, 1).unwrap();
        for fold in &cv.folds {
            // Count training labels for this fold and recompute the weights.
            let mut counts = [0usize; 6];
            let test: std::collections::BTreeSet<usize> =
                fold.test_indices.iter().copied().collect();
            for (i, &c) in labels.iter().enumerate() {
                if !test.contains(&i) {
                    counts[c] += 1;
                }
            }
            let expected = ClassWeights::from_counts(&counts);
            assert_eq!(&fold.class_weights, expected.as_array());
        }
        // With 6 training instances of class 0 vs 1 of class 5, weights differ.
        let w = &cv.folds[0].class_weights;
        assert!(w[0] < w[5]);
    }

    #[test]
    fn weight_of_class_absent_from_training_folds_is_one() {
        // Class 5 has exactly 2 instances; with k=2 each fold holds one, so
        // it is never absent. Instead give class 5 a single instance pinned
        // to fold 0, so fold 0's training complement (fold 1) lacks it.
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for c in 0..5 {
            for _ in 0..4 {
                labels.push(c);
            }
        }
        labels.push(5);
        for &c in &labels {
            data.push(EncodedInstance {
                indices: vec![2 + c, 8, 9, PAD],
                true_len: 3,
                label_index: c,
                reversed: false,
            });
        }
        let embeddings = EmbeddingMatrix::random_init(16, 4, &mut seeded_rng(2));
        let cv = cross_validate(&data, &embeddings, &fast_hp(1), 2, 3, 1).unwrap();
        let lone_fold = cv
            .folds
            .iter()
            .find(|f| f.test_indices.iter().any(|&i| labels[i] == 5))
            .expect("some fold holds the lone class-5 instance");
        let other = cv.folds.iter().find(|f| f.fold != lone_fold.fold).unwrap();
        // The fold testing the lone instance trained without class 5.
        assert_eq!(lone_fold.class_weights[5], 1.0);
        assert!(other.class_weights[5] > 1.0);
    }

    #[test]
    fn identical_runs_produce_identical_columns() {
        let (data, embeddings) = separable_corpus(4, 0xC12);
        let hp = fast_hp(4);
        let a = SchemeRun {
            name: "first".to_string(),
            dataset: &data,
            embeddings: &embeddings,
            hp: hp.clone(),
        };
        let b = SchemeRun {
            name: "second".to_string(),
            dataset: &data,
            embeddings: &embeddings,
            hp: hp.clone(),
        };
        let cmp = compare_representations(&[a, b], None, 4, 9, 1).unwrap();
        assert_eq!(cmp.columns, vec!["first".to_string(), "second".to_string()]);
        assert_eq!(cmp.row_labels.len(), 7);
        assert_eq!(cmp.row_labels[6], "macro-F1");
        for row in &cmp.values {
            assert_eq!(row[0], row[1]);
        }
    }

    #[test]
    fn degraded_representation_scores_strictly_lower() {
        let (data, embeddings) = separable_corpus(6, 0xC13);
        // Scheme B sees the same relations but its "paths" replace the
        // discriminative marker with a constant token, as when a parse
        // routes around the informative word.
        let degraded: Vec<EncodedInstance> = data
            .iter()
            .map(|e| {
                let mut d = e.clone();
                d.indices[2] = 10;
                d
            })
            .collect();
        let hp = fast_hp(8);
        let good = SchemeRun {
            name: "informative".to_string(),
            dataset: &data,
            embeddings: &embeddings,
            hp: hp.clone(),
        };
        let bad = SchemeRun {
            name: "degraded".to_string(),
            dataset: &degraded,
            embeddings: &embeddings,
            hp: hp.clone(),
        };
        let cmp = compare_representations(&[good, bad], None, 3, 11, 1).unwrap();
        let macro_row = &cmp.values[6];
        assert!(
            macro_row[1] < macro_row[0],
            "degraded {} should be below informative {}",
            macro_row[1],
            macro_row[0]
        );
        assert!(macro_row[0] - macro_row[1] > 0.05);
    }

    #[test]
    fn baseline_adds_diff_column() {
        let (data, embeddings) = separable_corpus(3, 0xC14);
        let hp = fast_hp(2);
        let scheme = SchemeRun {
            name: "paths".to_string(),
            dataset: &data,
            embeddings: &embeddings,
            hp: hp.clone(),
        };
        let base = SchemeRun {
            name: "sentence".to_string(),
            dataset: &data,
            embeddings: &embeddings,
            hp: hp.clone(),
        };
        let cmp = compare_representations(&[scheme], Some(&base), 3, 13, 1).unwrap();
        assert_eq!(cmp.columns, vec!["sentence", "paths", "diff"]);
        for row in &cmp.values {
            assert!((row[2] - (row[1] - row[0])).abs() < 1e-15);
        }
    }

    #[test]
    fn misaligned_relation_sequences_are_rejected() {
        let (data, embeddings) = separable_corpus(3, 0xC15);
        let mut shifted = data.clone();
        shifted[0].label_index = (shifted[0].label_index + 1) % 6;
        let hp = fast_hp(1);
        let a = SchemeRun {
            name: "a".to_string(),
            dataset: &data,
            embeddings: &embeddings,
            hp: hp.clone(),
        };
        let b = SchemeRun {
            name: "b".to_string(),
            dataset: &shifted,
            embeddings: &embeddings,
            hp: hp.clone(),
        };
        assert!(matches!(
            compare_representations(&[a, b], None, 3, 1, 1),
            Err(EvalError::MisalignedInstances(_))
        ));
    }

    #[test]
    fn reports_render_all_rows_and_columns() {
        let (data, embeddings) = separable_corpus(3, 0xC16);
        let hp = fast_hp(2);
        let run = SchemeRun {
            name: "paths".to_string(),
            dataset: &data,
            embeddings: &embeddings,
            hp: hp.clone(),
        };
        let cmp = compare_representations(&[run], None, 3, 13, 1).unwrap();
        let tsv = comparison_tsv(&cmp);
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 8); // header + 6 relations + macro
        assert!(lines[0].starts_with("relation\t"));
        assert!(lines[7].starts_with("macro-F1\t"));
        let text = comparison_text(&cmp);
        assert_eq!(text.lines().count(), 9); // header + rule + 7 rows
        let json = comparison_json(&cmp, &hp);
        assert_eq!(json["rows"].as_array().unwrap().len(), 7);
        assert_eq!(
            json["runs"][0]["report"]["aggregates"]["pooled_macro_f1"]
                .as_f64()
                .unwrap(),
            cmp.runs[0].1.pooled.macro_f1
        );
    }
}
