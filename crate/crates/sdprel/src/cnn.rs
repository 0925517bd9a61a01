//! The relation classifier: a two-channel convolutional network over index
//! sequences with exact analytic gradients.
//!
//! Layer stack: embedding lookup in a static and a non-static channel
//! (concatenated per position), valid convolutions with one kernel bank per
//! filter width, sigmoid/ReLU/tanh/softplus/identity activation, max or
//! average pooling over the unpadded positions, inverted dropout, and a
//! fully connected softmax over the six relation classes. Training is
//! mini-batch Adam with class-weighted cross-entropy and an L2 penalty on
//! the fully connected weights; the static channel is never touched.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::features::{EmbeddingMatrix, EncodedInstance, PAD};
use crate::rng::{seeded_rng, sub_seed};

/// Number of relation classes.
pub const NUM_CLASSES: usize = 6;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Errors raised by model construction, training, or checkpoints.
#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Activation applied after each convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
    Tanh,
    Softplus,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Sigmoid,
        Activation::Relu,
        Activation::Tanh,
        Activation::Softplus,
        Activation::Identity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CnnError> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| CnnError::ShapeMismatch(format!("unknown activation {s:?}")))
    }

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Softplus => softplus(z),
            Activation::Identity => z,
        }
    }

    /// d(apply)/dz at pre-activation z.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Softplus => sigmoid(z),
            Activation::Identity => 1.0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    // ln(1 + e^z) without overflow for large |z|.
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// Pooling applied over convolution positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Max,
    Avg,
}

impl Pooling {
    pub const ALL: [Pooling; 2] = [Pooling::Max, Pooling::Avg];

    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Max => "max",
            Pooling::Avg => "avg",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CnnError> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| CnnError::ShapeMismatch(format!("unknown pooling {s:?}")))
    }
}

/// All knobs of one training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Filter widths, each with its own kernel bank; sorted ascending.
    pub filter_widths: Vec<usize>,
    /// Kernels per width.
    pub feature_maps: usize,
    pub activation: Activation,
    pub pooling: Pooling,
    /// Coefficient of the L2 penalty on the fully connected weights.
    pub l2: f64,
    pub learning_rate: f64,
    /// Probability that each pooled feature is kept during training.
    pub dropout_keep: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            filter_widths: vec![3, 4, 5],
            feature_maps: 128,
            activation: Activation::Relu,
            pooling: Pooling::Max,
            l2: 3.0,
            learning_rate: 1e-3,
            dropout_keep: 0.5,
            epochs: 30,
            batch_size: 50,
            seed: 42,
        }
    }
}

impl HyperParams {
    /// The tunable filter-width catalogue: singletons 3..9, adjacent pairs,
    /// adjacent triples.
    pub fn width_catalogue() -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = (3..=9).map(|w| vec![w]).collect();
        out.extend((3..=8).map(|w| vec![w, w + 1]));
        out.extend((3..=7).map(|w| vec![w, w + 1, w + 2]));
        out
    }

    /// Check the tunable fields against their search ranges. Programmatic
    /// construction outside these ranges is allowed (small test models);
    /// configurations accepted from users or proposed by the tuner are not.
    pub fn validate_search_ranges(&self) -> Result<(), CnnError> {
        if !Self::width_catalogue().contains(&self.filter_widths) {
            return Err(CnnError::ShapeMismatch(format!(
                "filter widths {:?} not in the catalogue of singletons, adjacent pairs, and adjacent triples over 3..=9",
                self.filter_widths
            )));
        }
        if !(10..=1000).contains(&self.feature_maps) {
            return Err(CnnError::ShapeMismatch(format!(
                "feature_maps {} outside [10, 1000]",
                self.feature_maps
            )));
        }
        if !(1e-4..=1e2).contains(&self.l2) {
            return Err(CnnError::ShapeMismatch(format!(
                "l2 {} outside [1e-4, 1e2]",
                self.l2
            )));
        }
        if !(1e-6..=1e-2).contains(&self.learning_rate) {
            return Err(CnnError::ShapeMismatch(format!(
                "learning_rate {} outside [1e-6, 1e-2]",
                self.learning_rate
            )));
        }
        if !(0.1..=1.0).contains(&self.dropout_keep) {
            return Err(CnnError::ShapeMismatch(format!(
                "dropout_keep {} outside [0.1, 1]",
                self.dropout_keep
            )));
        }
        Ok(())
    }
}

/// Per-class loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights([f64; NUM_CLASSES]);

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights([1.0; NUM_CLASSES])
    }

    /// w(c) = N_total / (6 * N_c). Classes absent from the counts get weight
    /// 1; their weight can never be exercised by the data that produced the
    /// counts.
    pub fn from_counts(counts: &[usize; NUM_CLASSES]) -> Self {
        let total: usize = counts.iter().sum();
        let mut w = [1.0; NUM_CLASSES];
        for (wi, &c) in w.iter_mut().zip(counts) {
            if c > 0 {
                *wi = total as f64 / (NUM_CLASSES as f64 * c as f64);
            }
        }
        ClassWeights(w)
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn as_array(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }
}

/// One bank of convolution kernels sharing a width.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub width: usize,
    pub maps: usize,
    /// `maps` kernels, each `width * 2d` values, row-major per kernel.
    pub kernels: Vec<f64>,
    pub biases: Vec<f64>,
}

impl FilterBank {
    fn kernel(&self, k: usize, span: usize) -> &[f64] {
        &self.kernels[k * span..(k + 1) * span]
    }
}

#[derive(Debug, Clone, Default)]
struct AdamState {
    step: u64,
    kernels_m: Vec<Vec<f64>>,
    kernels_v: Vec<Vec<f64>>,
    biases_m: Vec<Vec<f64>>,
    biases_v: Vec<Vec<f64>>,
    fc_m: Vec<f64>,
    fc_v: Vec<f64>,
    fc_bias_m: Vec<f64>,
    fc_bias_v: Vec<f64>,
    nonstatic_m: Vec<f64>,
    nonstatic_v: Vec<f64>,
}

/// The full parameter set of one classifier.
#[derive(Debug, Clone)]
pub struct CnnModel {
    /// Embedding dimension of each channel.
    pub d: usize,
    /// Pre-trained channel; bit-identical before and after training.
    pub static_channel: EmbeddingMatrix,
    /// Randomly initialized channel, fine-tuned during training.
    pub nonstatic_channel: EmbeddingMatrix,
    pub banks: Vec<FilterBank>,
    /// (total feature maps) x 6, row-major by feature.
    pub fc_weights: Vec<f64>,
    pub fc_bias: Vec<f64>,
    adam: Option<Box<AdamState>>,
}

impl CnnModel {
    /// Build a model: kernels uniform in [-0.1, 0.1] from the model-init
    /// sub-seed of `hp.seed`, fully connected weights and all biases zero
    /// (so an untrained model scores every class equally and ties break to
    /// class 0).
    pub fn init(
        static_channel: EmbeddingMatrix,
        nonstatic_channel: EmbeddingMatrix,
        hp: &HyperParams,
    ) -> Result<Self, CnnError> {
        if static_channel.dim() != nonstatic_channel.dim()
            || static_channel.vocab_size() != nonstatic_channel.vocab_size()
        {
            return Err(CnnError::ShapeMismatch(format!(
                "channel shapes differ: static {}x{}, non-static {}x{}",
                static_channel.vocab_size(),
                static_channel.dim(),
                nonstatic_channel.vocab_size(),
                nonstatic_channel.dim()
            )));
        }
        if hp.filter_widths.is_empty() {
            return Err(CnnError::ShapeMismatch(
                "at least one filter width required".to_string(),
            ));
        }
        if hp.filter_widths.iter().any(|&w| w == 0) {
            return Err(CnnError::ShapeMismatch("filter width 0".to_string()));
        }
        if hp.feature_maps == 0 {
            return Err(CnnError::ShapeMismatch("feature_maps 0".to_string()));
        }
        let d = static_channel.dim();
        let mut rng = seeded_rng(sub_seed(hp.seed, "model-init"));
        let mut widths = hp.filter_widths.clone();
        widths.sort_unstable();
        widths.dedup();
        let banks = widths
            .iter()
            .map(|&width| {
                let span = width * 2 * d;
                let kernels = (0..hp.feature_maps * span)
                    .map(|_| rng.random_range(-0.1..0.1))
                    .collect();
                FilterBank {
                    width,
                    maps: hp.feature_maps,
                    kernels,
                    biases: vec![0.0; hp.feature_maps],
                }
            })
            .collect::<Vec<_>>();
        let total_maps: usize = banks.iter().map(|b| b.maps).sum();
        Ok(CnnModel {
            d,
            static_channel,
            nonstatic_channel,
            banks,
            fc_weights: vec![0.0; total_maps * NUM_CLASSES],
            fc_bias: vec![0.0; NUM_CLASSES],
            adam: None,
        })
    }

    /// Total pooled features across banks.
    pub fn total_maps(&self) -> usize {
        self.banks.iter().map(|b| b.maps).sum()
    }

    /// Order-sensitive hash of every trainable parameter plus both channels.
    pub fn parameter_fingerprint(&self) -> u64 {
        let mut all = Vec::new();
        all.extend_from_slice(self.static_channel.values());
        all.extend_from_slice(self.nonstatic_channel.values());
        for bank in &self.banks {
            all.extend_from_slice(&bank.kernels);
            all.extend_from_slice(&bank.biases);
        }
        all.extend_from_slice(&self.fc_weights);
        all.extend_from_slice(&self.fc_bias);
        crate::rng::hash_f64s(&all)
    }

    fn ensure_adam(&mut self) {
        if self.adam.is_some() {
            return;
        }
        let state = AdamState {
            step: 0,
            kernels_m: self.banks.iter().map(|b| vec![0.0; b.kernels.len()]).collect(),
            kernels_v: self.banks.iter().map(|b| vec![0.0; b.kernels.len()]).collect(),
            biases_m: self.banks.iter().map(|b| vec![0.0; b.biases.len()]).collect(),
            biases_v: self.banks.iter().map(|b| vec![0.0; b.biases.len()]).collect(),
            fc_m: vec![0.0; self.fc_weights.len()],
            fc_v: vec![0.0; self.fc_weights.len()],
            fc_bias_m: vec![0.0; NUM_CLASSES],
            fc_bias_v: vec![0.0; NUM_CLASSES],
            nonstatic_m: vec![0.0; self.nonstatic_channel.values().len()],
            nonstatic_v: vec![0.0; self.nonstatic_channel.values().len()],
        };
        self.adam = Some(Box::new(state));
    }
}

/// Intermediate activations of one forward pass, kept for backprop.
pub struct Cache {
    indices: Vec<usize>,
    true_len: usize,
    /// Position-concatenated input, `len x 2d`, zero beyond `true_len`.
    x: Vec<f64>,
    /// Pre-activation convolution values per bank: `maps x n_pool`.
    pre: Vec<Vec<f64>>,
    /// Pooling window size per bank.
    n_pool: Vec<usize>,
    /// Argmax position per kernel per bank (max pooling only).
    argmax: Vec<Vec<usize>>,
    /// Pooled features before dropout.
    pooled: Vec<f64>,
    /// Dropout scaling per feature: 1/keep, 0, or 1 when inactive.
    mask: Vec<f64>,
    /// Pooled features after dropout; input to the fully connected layer.
    dropped: Vec<f64>,
    logits: [f64; NUM_CLASSES],
    probs: [f64; NUM_CLASSES],
}

impl Cache {
    pub fn probs(&self) -> &[f64; NUM_CLASSES] {
        &self.probs
    }

    /// Pooled feature vector (before dropout): the network's fixed-size
    /// representation of the input.
    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }

    pub fn logits(&self) -> &[f64; NUM_CLASSES] {
        &self.logits
    }
}

/// Run the network on one encoded instance.
///
/// In train mode with `dropout_keep < 1`, one Bernoulli mask over pooled
/// features is drawn from `rng` with inverted 1/keep scaling; with
/// `dropout_keep = 1` or in eval mode the rng is never touched. Positions at
/// or beyond `true_len` contribute zero vectors, and pooling is restricted
/// to windows starting in `1..=max(true_len - width + 1, 1)`, so padding can
/// never win a max pool.
pub fn forward(
    model: &CnnModel,
    encoded: &EncodedInstance,
    hp: &HyperParams,
    train_mode: bool,
    rng: &mut impl Rng,
) -> Result<([f64; NUM_CLASSES], Cache), CnnError> {
    let len = encoded.indices.len();
    let two_d = 2 * model.d;
    let max_width = model.banks.iter().map(|b| b.width).max().unwrap_or(1);
    if len < max_width {
        return Err(CnnError::ShapeMismatch(format!(
            "sequence length {len} shorter than max filter width {max_width}"
        )));
    }
    if encoded.true_len > len {
        return Err(CnnError::ShapeMismatch(format!(
            "true_len {} exceeds padded length {len}",
            encoded.true_len
        )));
    }
    for &idx in &encoded.indices {
        if idx >= model.static_channel.vocab_size() {
            return Err(CnnError::ShapeMismatch(format!(
                "index {idx} outside vocabulary of {}",
                model.static_channel.vocab_size()
            )));
        }
    }

    // Input block: static ++ non-static per position, zero past true_len.
    let mut x = vec![0.0; len * two_d];
    for (p, &idx) in encoded.indices.iter().enumerate().take(encoded.true_len) {
        x[p * two_d..p * two_d + model.d].copy_from_slice(model.static_channel.row(idx));
        x[p * two_d + model.d..(p + 1) * two_d].copy_from_slice(model.nonstatic_channel.row(idx));
    }

    let mut pre = Vec::with_capacity(model.banks.len());
    let mut n_pools = Vec::with_capacity(model.banks.len());
    let mut argmax = Vec::with_capacity(model.banks.len());
    let mut pooled = Vec::with_capacity(model.total_maps());
    for bank in &model.banks {
        let span = bank.width * two_d;
        let n_pool = if encoded.true_len >= bank.width {
            encoded.true_len - bank.width + 1
        } else {
            1
        };
        let mut bank_pre = vec![0.0; bank.maps * n_pool];
        let mut bank_argmax = vec![0usize; bank.maps];
        for k in 0..bank.maps {
            let kernel = bank.kernel(k, span);
            let mut best = f64::NEG_INFINITY;
            let mut best_p = 0usize;
            let mut sum = 0.0;
            for p in 0..n_pool {
                let window = &x[p * two_d..p * two_d + span];
                let mut z = bank.biases[k];
                for (xv, kv) in window.iter().zip(kernel) {
                    z += xv * kv;
                }
                bank_pre[k * n_pool + p] = z;
                let a = hp.activation.apply(z);
                if a > best {
                    best = a;
                    best_p = p;
                }
                sum += a;
            }
            match hp.pooling {
                Pooling::Max => pooled.push(best),
                Pooling::Avg => pooled.push(sum / n_pool as f64),
            }
            bank_argmax[k] = best_p;
        }
        pre.push(bank_pre);
        n_pools.push(n_pool);
        argmax.push(bank_argmax);
    }

    let apply_dropout = train_mode && hp.dropout_keep < 1.0;
    let mask: Vec<f64> = if apply_dropout {
        pooled
            .iter()
            .map(|_| {
                if rng.random::<f64>() < hp.dropout_keep {
                    1.0 / hp.dropout_keep
                } else {
                    0.0
                }
            })
            .collect()
    } else {
        vec![1.0; pooled.len()]
    };
    let dropped: Vec<f64> = pooled.iter().zip(&mask).map(|(h, m)| h * m).collect();

    let mut logits = [0.0; NUM_CLASSES];
    for (c, logit) in logits.iter_mut().enumerate() {
        let mut z = model.fc_bias[c];
        for (f, h) in dropped.iter().enumerate() {
            z += h * model.fc_weights[f * NUM_CLASSES + c];
        }
        *logit = z;
    }
    let probs = softmax(&logits);

    let cache = Cache {
        indices: encoded.indices.clone(),
        true_len: encoded.true_len,
        x,
        pre,
        n_pool: n_pools,
        argmax,
        pooled,
        mask,
        dropped,
        logits,
        probs,
    };
    Ok((probs, cache))
}

/// Numerically stable softmax (max subtraction).
fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_CLASSES];
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Class-weighted cross-entropy plus the L2 penalty on the fully connected
/// weights: `w(gold) * (-ln probs[gold]) + (l2/2) * ||fc||^2`, with the gold
/// probability clamped at 1e-30.
pub fn loss(
    probs: &[f64; NUM_CLASSES],
    gold: usize,
    class_weights: &ClassWeights,
    model: &CnnModel,
    hp: &HyperParams,
) -> f64 {
    let ce = -probs[gold].max(1e-30).ln() * class_weights.get(gold);
    ce + l2_penalty(model, hp)
}

/// The same value computed from logits via log-sum-exp; used during training
/// so the recorded loss never passes through the probability clamp.
pub fn loss_from_logits(
    logits: &[f64; NUM_CLASSES],
    gold: usize,
    class_weights: &ClassWeights,
    model: &CnnModel,
    hp: &HyperParams,
) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    class_weights.get(gold) * (lse - logits[gold]) + l2_penalty(model, hp)
}

fn l2_penalty(model: &CnnModel, hp: &HyperParams) -> f64 {
    0.5 * hp.l2 * model.fc_weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gradients of [`loss`] for every trainable tensor. The non-static channel
/// gradient is sparse: only rows looked up by the instance appear.
pub struct Gradients {
    pub kernels: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub fc_weights: Vec<f64>,
    pub fc_bias: Vec<f64>,
    pub nonstatic_rows: BTreeMap<usize, Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &CnnModel) -> Self {
        Gradients {
            kernels: model.banks.iter().map(|b| vec![0.0; b.kernels.len()]).collect(),
            biases: model.banks.iter().map(|b| vec![0.0; b.biases.len()]).collect(),
            fc_weights: vec![0.0; model.fc_weights.len()],
            fc_bias: vec![0.0; NUM_CLASSES],
            nonstatic_rows: BTreeMap::new(),
        }
    }

    fn accumulate(&mut self, other: &Gradients, d: usize) {
        for (a, b) in self.kernels.iter_mut().zip(&other.kernels) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.fc_weights.iter_mut().zip(&other.fc_weights) {
            *x += y;
        }
        for (x, y) in self.fc_bias.iter_mut().zip(&other.fc_bias) {
            *x += y;
        }
        for (&row, grad) in &other.nonstatic_rows {
            let acc = self
                .nonstatic_rows
                .entry(row)
                .or_insert_with(|| vec![0.0; d]);
            for (x, y) in acc.iter_mut().zip(grad) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for bank in &mut self.kernels {
            for x in bank {
                *x *= factor;
            }
        }
        for bank in &mut self.biases {
            for x in bank {
                *x *= factor;
            }
        }
        for x in &mut self.fc_weights {
            *x *= factor;
        }
        for x in &mut self.fc_bias {
            *x *= factor;
        }
        for grad in self.nonstatic_rows.values_mut() {
            for x in grad {
                *x *= factor;
            }
        }
    }
}

/// Exact gradients of [`loss`] at the forward pass recorded in `cache`.
/// The static channel's gradient is discarded; PAD rows and masked positions
/// never receive gradient.
pub fn backward(
    model: &CnnModel,
    cache: &Cache,
    gold: usize,
    class_weights: &ClassWeights,
    hp: &HyperParams,
) -> Gradients {
    let two_d = 2 * model.d;
    let mut grads = Gradients::zeros_like(model);

    // Softmax + weighted CE: dL/dlogit_c = w * (p_c - [c == gold]).
    let w = class_weights.get(gold);
    let mut dlogits = [0.0; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        dlogits[c] = w * (cache.probs[c] - if c == gold { 1.0 } else { 0.0 });
    }

    // Fully connected layer (the L2 penalty differentiates to l2 * W).
    for c in 0..NUM_CLASSES {
        grads.fc_bias[c] = dlogits[c];
    }
    let mut d_dropped = vec![0.0; cache.dropped.len()];
    for f in 0..cache.dropped.len() {
        for c in 0..NUM_CLASSES {
            grads.fc_weights[f * NUM_CLASSES + c] =
                cache.dropped[f] * dlogits[c] + hp.l2 * model.fc_weights[f * NUM_CLASSES + c];
            d_dropped[f] += model.fc_weights[f * NUM_CLASSES + c] * dlogits[c];
        }
    }

    // Dropout is an elementwise product with the cached mask.
    let d_pooled: Vec<f64> = d_dropped
        .iter()
        .zip(&cache.mask)
        .map(|(g, m)| g * m)
        .collect();

    // Convolution banks.
    let mut dx = vec![0.0; cache.x.len()];
    let mut feature = 0usize;
    for (bi, bank) in model.banks.iter().enumerate() {
        let span = bank.width * two_d;
        let n_pool = cache.n_pool[bi];
        for k in 0..bank.maps {
            let g_pool = d_pooled[feature];
            feature += 1;
            if g_pool == 0.0 {
                continue;
            }
            let kernel = bank.kernel(k, span);
            let push = |p: usize, da: f64, grads: &mut Gradients, dx: &mut [f64]| {
                let z = cache.pre[bi][k * n_pool + p];
                let dz = da * hp.activation.derivative(z);
                if dz == 0.0 {
                    return;
                }
                grads.biases[bi][k] += dz;
                let window = &cache.x[p * two_d..p * two_d + span];
                let kernel_grad = &mut grads.kernels[bi][k * span..(k + 1) * span];
                for j in 0..span {
                    kernel_grad[j] += dz * window[j];
                    dx[p * two_d + j] += dz * kernel[j];
                }
            };
            match hp.pooling {
                Pooling::Max => push(cache.argmax[bi][k], g_pool, &mut grads, &mut dx),
                Pooling::Avg => {
                    let share = g_pool / n_pool as f64;
                    for p in 0..n_pool {
                        push(p, share, &mut grads, &mut dx);
                    }
                }
            }
        }
    }

    // Input gradient -> non-static rows (second half of each position);
    // positions past true_len are constant zeros and PAD rows stay frozen.
    for (p, &idx) in cache.indices.iter().enumerate().take(cache.true_len) {
        if idx == PAD {
            continue;
        }
        let src = &dx[p * two_d + model.d..(p + 1) * two_d];
        if src.iter().all(|&s| s == 0.0) {
            continue;
        }
        let row = grads
            .nonstatic_rows
            .entry(idx)
            .or_insert_with(|| vec![0.0; model.d]);
        for (r, s) in row.iter_mut().zip(src) {
            *r += s;
        }
    }

    grads
}

/// Argmax prediction from an eval-mode forward pass; ties break to the
/// lowest class index.
pub fn predict(
    model: &CnnModel,
    encoded: &EncodedInstance,
    hp: &HyperParams,
) -> Result<usize, CnnError> {
    let mut rng = seeded_rng(0); // never drawn from in eval mode
    let (probs, _) = forward(model, encoded, hp, false, &mut rng)?;
    Ok(argmax(&probs))
}

/// Index of the largest value; first occurrence wins.
pub fn argmax(values: &[f64; NUM_CLASSES]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch Adam training. Returns the per-epoch mean training loss.
///
/// Deterministic given `hp.seed`: epoch shuffling, dropout, and (via
/// [`CnnModel::init`]) kernel initialization all derive from named sub-seeds
/// of it. The static channel is never written to.
pub fn train(
    model: &mut CnnModel,
    dataset: &[EncodedInstance],
    hp: &HyperParams,
    class_weights: &ClassWeights,
) -> Result<Vec<f64>, CnnError> {
    if dataset.is_empty() {
        return Err(CnnError::EmptyDataset);
    }
    model.ensure_adam();
    let mut shuffle_rng = seeded_rng(sub_seed(hp.seed, "shuffle"));
    let mut dropout_rng = seeded_rng(sub_seed(hp.seed, "dropout"));
    let batch_size = hp.batch_size.max(1);
    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..hp.epochs {
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(batch_size) {
            let mut acc = Gradients::zeros_like(model);
            for &i in batch {
                let inst = &dataset[i];
                let (_, cache) = forward(model, inst, hp, true, &mut dropout_rng)?;
                epoch_loss +=
                    loss_from_logits(cache.logits(), inst.label_index, class_weights, model, hp);
                let grads = backward(model, &cache, inst.label_index, class_weights, hp);
                acc.accumulate(&grads, model.d);
            }
            acc.scale(1.0 / batch.len() as f64);
            adam_step(model, &acc, hp.learning_rate);
        }
        let mean = epoch_loss / dataset.len() as f64;
        epoch_losses.push(mean);
        log::debug!("epoch {}: mean training loss {mean:.6}", epoch + 1);
    }
    Ok(epoch_losses)
}

fn adam_step(model: &mut CnnModel, grads: &Gradients, lr: f64) {
    let adam = model.adam.as_mut().expect("ensure_adam ran");
    adam.step += 1;
    let t = adam.step;
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    let update = |theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..theta.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    };
    for (bi, bank) in model.banks.iter_mut().enumerate() {
        update(
            &mut bank.kernels,
            &grads.kernels[bi],
            &mut adam.kernels_m[bi],
            &mut adam.kernels_v[bi],
        );
        update(
            &mut bank.biases,
            &grads.biases[bi],
            &mut adam.biases_m[bi],
            &mut adam.biases_v[bi],
        );
    }
    update(
        &mut model.fc_weights,
        &grads.fc_weights,
        &mut adam.fc_m,
        &mut adam.fc_v,
    );
    update(
        &mut model.fc_bias,
        &grads.fc_bias,
        &mut adam.fc_bias_m,
        &mut adam.fc_bias_v,
    );
    // Lazy sparse update: only rows with gradient move (and their moments).
    let d = model.d;
    for (&row, g) in &grads.nonstatic_rows {
        let theta = model.nonstatic_channel.row_mut(row);
        let m = &mut adam.nonstatic_m[row * d..(row + 1) * d];
        let v = &mut adam.nonstatic_v[row * d..(row + 1) * d];
        update(theta, g, m, v);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"SDPRELCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Serialize a model (parameters only — no optimizer state) together with
/// its hyper-parameters and the fingerprint of the vocabulary it was built
/// over. Binary little-endian layout behind an 8-byte magic and a version.
pub fn save_checkpoint(model: &CnnModel, hp: &HyperParams, vocab_fingerprint: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&vocab_fingerprint.to_le_bytes());
    out.extend_from_slice(&(model.static_channel.vocab_size() as u32).to_le_bytes());
    out.extend_from_slice(&(model.d as u32).to_le_bytes());
    out.extend_from_slice(&(model.banks.len() as u32).to_le_bytes());
    for bank in &model.banks {
        out.extend_from_slice(&(bank.width as u32).to_le_bytes());
        out.extend_from_slice(&(bank.maps as u32).to_le_bytes());
    }
    out.push(match hp.activation {
        Activation::Sigmoid => 0,
        Activation::Relu => 1,
        Activation::Tanh => 2,
        Activation::Softplus => 3,
        Activation::Identity => 4,
    });
    out.push(match hp.pooling {
        Pooling::Max => 0,
        Pooling::Avg => 1,
    });
    out.extend_from_slice(&hp.l2.to_le_bytes());
    out.extend_from_slice(&hp.learning_rate.to_le_bytes());
    out.extend_from_slice(&hp.dropout_keep.to_le_bytes());
    out.extend_from_slice(&(hp.epochs as u32).to_le_bytes());
    out.extend_from_slice(&(hp.batch_size as u32).to_le_bytes());
    out.extend_from_slice(&hp.seed.to_le_bytes());
    let write_f64s = |out: &mut Vec<u8>, values: &[f64]| {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    write_f64s(&mut out, model.static_channel.values());
    write_f64s(&mut out, model.nonstatic_channel.values());
    for bank in &model.banks {
        write_f64s(&mut out, &bank.kernels);
        write_f64s(&mut out, &bank.biases);
    }
    write_f64s(&mut out, &model.fc_weights);
    write_f64s(&mut out, &model.fc_bias);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CnnError> {
        if self.pos + n > self.bytes.len() {
            return Err(CnnError::Checkpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CnnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CnnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, CnnError> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64, CnnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CnnError> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(bytes: &[u8]) -> Result<(CnnModel, HyperParams, u64), CnnError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(CnnError::Checkpoint("bad magic bytes".to_string()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CnnError::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let vocab_fingerprint = r.u64()?;
    let v = r.u32()? as usize;
    let d = r.u32()? as usize;
    let n_banks = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(n_banks);
    for _ in 0..n_banks {
        let width = r.u32()? as usize;
        let maps = r.u32()? as usize;
        shapes.push((width, maps));
    }
    let activation = match r.u8()? {
        0 => Activation::Sigmoid,
        1 => Activation::Relu,
        2 => Activation::Tanh,
        3 => Activation::Softplus,
        4 => Activation::Identity,
        other => {
            return Err(CnnError::Checkpoint(format!(
                "unknown activation tag {other}"
            )))
        }
    };
    let pooling = match r.u8()? {
        0 => Pooling::Max,
        1 => Pooling::Avg,
        other => return Err(CnnError::Checkpoint(format!("unknown pooling tag {other}"))),
    };
    let l2 = r.f64()?;
    let learning_rate = r.f64()?;
    let dropout_keep = r.f64()?;
    let epochs = r.u32()? as usize;
    let batch_size = r.u32()? as usize;
    let seed = r.u64()?;
    let hp = HyperParams {
        filter_widths: shapes.iter().map(|&(w, _)| w).collect(),
        feature_maps: shapes.first().map(|&(_, m)| m).unwrap_or(0),
        activation,
        pooling,
        l2,
        learning_rate,
        dropout_keep,
        epochs,
        batch_size,
        seed,
    };

    let mut static_channel = EmbeddingMatrix::zeros(v, d);
    static_channel
        .values_mut()
        .copy_from_slice(&r.f64s(v * d)?);
    let mut nonstatic_channel = EmbeddingMatrix::zeros(v, d);
    nonstatic_channel
        .values_mut()
        .copy_from_slice(&r.f64s(v * d)?);
    let mut banks = Vec::with_capacity(n_banks);
    for &(width, maps) in &shapes {
        let kernels = r.f64s(maps * width * 2 * d)?;
        let biases = r.f64s(maps)?;
        banks.push(FilterBank {
            width,
            maps,
            kernels,
            biases,
        });
    }
    let total_maps: usize = shapes.iter().map(|&(_, m)| m).sum();
    let fc_weights = r.f64s(total_maps * NUM_CLASSES)?;
    let fc_bias = r.f64s(NUM_CLASSES)?;
    if r.pos != bytes.len() {
        return Err(CnnError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let model = CnnModel {
        d,
        static_channel,
        nonstatic_channel,
        banks,
        fc_weights,
        fc_bias,
        adam: None,
    };
    Ok((model, hp, vocab_fingerprint))
}
