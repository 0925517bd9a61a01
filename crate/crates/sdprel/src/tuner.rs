//! Bayesian hyperparameter search: a Gaussian-process surrogate with a
//! Matérn-5/2 ARD kernel and Expected Improvement acquisition over a mixed
//! categorical/continuous space.
//!
//! The search space is declared as typed dimensions; configurations encode
//! to real vectors (one-hot categoricals, min-max scaled numerics, log10
//! domain for scale-free ranges) for the surrogate. Acquisition is maximized
//! by scoring a large uniform candidate sample, which sidesteps gradient
//! ascent through one-hot blocks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::cnn::{Activation, HyperParams, Pooling};
use crate::rng::{seeded_rng, sub_seed};

/// Objective evaluations in the initial quasi-random design.
const INITIAL_DESIGN: usize = 10;
/// Uniform candidates scored by EI per iteration.
const CANDIDATES: usize = 5000;
/// Default exploration offset in the EI criterion.
pub const DEFAULT_XI: f64 = 0.01;
/// Fitted observation-noise variance never drops below this.
const NOISE_FLOOR: f64 = 1e-6;
/// Jitter escalation ceiling for the Cholesky factorization.
const MAX_JITTER: f64 = 1e-4;

/// Errors raised by the search machinery.
#[derive(Debug, Error)]
pub enum TunerError {
    #[error("configuration outside the search space: {0}")]
    OutOfSpace(String),
    #[error("kernel matrix not positive definite after jitter {MAX_JITTER}")]
    SingularKernel,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// One dimension of a search space.
#[derive(Debug, Clone, PartialEq)]
pub enum Dim {
    /// Closed option catalogue; encodes as a one-hot block.
    Categorical { name: String, options: Vec<String> },
    /// Inclusive integer range; encodes min-max scaled to [0,1].
    Integer { name: String, lo: i64, hi: i64 },
    /// Inclusive real range; `log10` ranges scale in the log domain.
    Continuous {
        name: String,
        lo: f64,
        hi: f64,
        log10: bool,
    },
}

impl Dim {
    fn name(&self) -> &str {
        match self {
            Dim::Categorical { name, .. } => name,
            Dim::Integer { name, .. } => name,
            Dim::Continuous { name, .. } => name,
        }
    }

    fn encoded_len(&self) -> usize {
        match self {
            Dim::Categorical { options, .. } => options.len(),
            _ => 1,
        }
    }

    fn is_singleton(&self) -> bool {
        match self {
            Dim::Categorical { options, .. } => options.len() == 1,
            Dim::Integer { lo, hi, .. } => lo == hi,
            Dim::Continuous { lo, hi, .. } => lo == hi,
        }
    }

    /// Map a unit-interval coordinate to a value of this dimension.
    fn from_unit(&self, u: f64) -> ConfigValue {
        let u = u.clamp(0.0, 1.0);
        match self {
            Dim::Categorical { options, .. } => {
                let idx = ((u * options.len() as f64) as usize).min(options.len() - 1);
                ConfigValue::Choice(idx)
            }
            Dim::Integer { lo, hi, .. } => {
                let v = *lo as f64 + u * (*hi - *lo) as f64;
                ConfigValue::Int(v.round() as i64)
            }
            Dim::Continuous { lo, hi, log10, .. } => {
                let v = if *log10 {
                    let (a, b) = (lo.log10(), hi.log10());
                    10f64.powf(a + u * (b - a))
                } else {
                    lo + u * (hi - lo)
                };
                ConfigValue::Real(v.clamp(*lo, *hi))
            }
        }
    }
}

/// A concrete value for one dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigValue {
    /// Index into a categorical catalogue.
    Choice(usize),
    Int(i64),
    Real(f64),
}

/// One point of the search space: a value per dimension, in order.
pub type Config = Vec<ConfigValue>;

/// An ordered set of dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    dims: Vec<Dim>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dim>) -> Self {
        SearchSpace { dims }
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }

    /// Length of encoded configuration vectors.
    pub fn encoded_len(&self) -> usize {
        self.dims.iter().map(Dim::encoded_len).sum()
    }

    /// True when exactly one configuration exists.
    pub fn is_singleton(&self) -> bool {
        self.dims.iter().all(Dim::is_singleton)
    }

    /// Uniform sample: each dimension drawn independently (log-uniform on
    /// log-scaled ranges).
    pub fn sample(&self, rng: &mut impl Rng) -> Config {
        self.dims
            .iter()
            .map(|d| d.from_unit(rng.random::<f64>()))
            .collect()
    }

    fn validate(&self, config: &Config) -> Result<(), TunerError> {
        if config.len() != self.dims.len() {
            return Err(TunerError::OutOfSpace(format!(
                "config has {} values, space has {} dimensions",
                config.len(),
                self.dims.len()
            )));
        }
        for (dim, value) in self.dims.iter().zip(config) {
            let ok = match (dim, value) {
                (Dim::Categorical { options, .. }, ConfigValue::Choice(i)) => *i < options.len(),
                (Dim::Integer { lo, hi, .. }, ConfigValue::Int(v)) => lo <= v && v <= hi,
                (Dim::Continuous { lo, hi, .. }, ConfigValue::Real(v)) => {
                    *lo <= *v && *v <= *hi && v.is_finite()
                }
                _ => false,
            };
            if !ok {
                return Err(TunerError::OutOfSpace(format!(
                    "value {value:?} invalid for dimension {}",
                    dim.name()
                )));
            }
        }
        Ok(())
    }

    /// Encode a configuration as a real vector: one-hot categorical blocks,
    /// [0,1]-scaled numerics, log10 domain where declared.
    pub fn encode(&self, config: &Config) -> Result<Vec<f64>, TunerError> {
        self.validate(config)?;
        let mut out = Vec::with_capacity(self.encoded_len());
        for (dim, value) in self.dims.iter().zip(config) {
            match (dim, value) {
                (Dim::Categorical { options, .. }, ConfigValue::Choice(i)) => {
                    for k in 0..options.len() {
                        out.push(if k == *i { 1.0 } else { 0.0 });
                    }
                }
                (Dim::Integer { lo, hi, .. }, ConfigValue::Int(v)) => {
                    out.push(if hi == lo {
                        0.0
                    } else {
                        (*v - *lo) as f64 / (*hi - *lo) as f64
                    });
                }
                (Dim::Continuous { lo, hi, log10, .. }, ConfigValue::Real(v)) => {
                    out.push(if hi == lo {
                        0.0
                    } else if *log10 {
                        (v.log10() - lo.log10()) / (hi.log10() - lo.log10())
                    } else {
                        (v - lo) / (hi - lo)
                    });
                }
                _ => unreachable!("validate checked the pairing"),
            }
        }
        Ok(out)
    }

    /// Invert [`SearchSpace::encode`]: one-hot blocks by argmax, integers by
    /// rounding. Exact for categorical and integer dimensions; continuous
    /// values return within floating-point round-off.
    pub fn decode(&self, vector: &[f64]) -> Result<Config, TunerError> {
        if vector.len() != self.encoded_len() {
            return Err(TunerError::OutOfSpace(format!(
                "encoded vector has {} values, space encodes to {}",
                vector.len(),
                self.encoded_len()
            )));
        }
        let mut config = Vec::with_capacity(self.dims.len());
        let mut pos = 0usize;
        for dim in &self.dims {
            match dim {
                Dim::Categorical { options, .. } => {
                    let block = &vector[pos..pos + options.len()];
                    let mut best = 0usize;
                    for (i, &v) in block.iter().enumerate() {
                        if v > block[best] {
                            best = i;
                        }
                    }
                    config.push(ConfigValue::Choice(best));
                    pos += options.len();
                }
                Dim::Integer { lo, hi, .. } => {
                    let v = *lo as f64 + vector[pos].clamp(0.0, 1.0) * (*hi - *lo) as f64;
                    config.push(ConfigValue::Int(v.round() as i64));
                    pos += 1;
                }
                Dim::Continuous { .. } => {
                    config.push(dim.from_unit(vector[pos]));
                    pos += 1;
                }
            }
        }
        Ok(config)
    }

    /// JSON object {dimension name: value}; categorical values render as
    /// their option labels.
    pub fn config_to_json(&self, config: &Config) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (dim, value) in self.dims.iter().zip(config) {
            let v = match (dim, value) {
                (Dim::Categorical { options, .. }, ConfigValue::Choice(i)) => {
                    serde_json::Value::String(options[*i].clone())
                }
                (_, ConfigValue::Int(v)) => serde_json::json!(v),
                (_, ConfigValue::Real(v)) => serde_json::json!(v),
                _ => serde_json::Value::Null,
            };
            map.insert(dim.name().to_string(), v);
        }
        serde_json::Value::Object(map)
    }

    /// The i-th point of a shifted Halton sequence over the space (one prime
    /// base per dimension, Cranley-Patterson rotation by `shifts`).
    fn halton_config(&self, index: usize, shifts: &[f64]) -> Config {
        const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
        self.dims
            .iter()
            .enumerate()
            .map(|(j, dim)| {
                let base = PRIMES[j % PRIMES.len()];
                let u = (halton(index as u64 + 1, base) + shifts[j]).fract();
                dim.from_unit(u)
            })
            .collect()
    }
}

fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

// ---------------------------------------------------------------------------
// Gaussian process
// ---------------------------------------------------------------------------

/// Matérn-5/2 kernel with per-dimension (ARD) length scales.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub signal_var: f64,
    pub noise_var: f64,
    pub length_scales: Vec<f64>,
}

impl Kernel {
    pub fn isotropic(dim: usize, signal_var: f64, noise_var: f64, length_scale: f64) -> Self {
        Kernel {
            signal_var,
            noise_var,
            length_scales: vec![length_scale; dim],
        }
    }

    /// k(a, b) = s² (1 + √5 r + 5r²/3) e^{−√5 r}, r per-dimension scaled.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.length_scales) {
            let d = (x - y) / l;
            r2 += d * d;
        }
        let s = (5.0 * r2).sqrt();
        self.signal_var * (1.0 + s + 5.0 * r2 / 3.0) * (-s).exp()
    }
}

/// A fitted GP over standardized observations, ready for posterior queries.
pub struct GpState {
    x: Vec<Vec<f64>>,
    kernel: Kernel,
    /// Lower Cholesky factor of K + noise I (+ jitter), row-major n x n.
    chol: Vec<f64>,
    /// (K + noise I)^{-1} y_standardized.
    alpha: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    /// Standardized observations (kept for the marginal likelihood).
    y_tilde: Vec<f64>,
}

impl GpState {
    /// Condition on observations. y is standardized internally (population
    /// mean/std); posterior outputs are de-standardized. Zero observations
    /// produce the prior.
    pub fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, kernel: Kernel) -> Result<Self, TunerError> {
        if x.len() != y.len() {
            return Err(TunerError::Invalid(format!(
                "{} inputs vs {} observations",
                x.len(),
                y.len()
            )));
        }
        let n = y.len();
        let y_mean = if n == 0 {
            0.0
        } else {
            y.iter().sum::<f64>() / n as f64
        };
        let var = if n == 0 {
            1.0
        } else {
            y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64
        };
        let y_std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        let y_tilde: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();

        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = kernel.eval(&x[i], &x[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
            k[i * n + i] += kernel.noise_var;
        }
        let chol = cholesky_with_jitter(k, n)?;
        let alpha = chol_solve(&chol, n, &y_tilde);
        Ok(GpState {
            x,
            kernel,
            chol,
            alpha,
            y_mean,
            y_std,
            y_tilde,
        })
    }

    /// Posterior mean and standard deviation at a point. The variance is the
    /// latent (noise-free) one, so it never exceeds the prior variance.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let n = self.x.len();
        let prior_sigma = self.kernel.signal_var.sqrt();
        if n == 0 {
            return (self.y_mean, self.y_std * prior_sigma);
        }
        let k_star: Vec<f64> = self.x.iter().map(|xi| self.kernel.eval(xi, x)).collect();
        let mu_tilde: f64 = k_star.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        // v = L^{-1} k*; latent var = k(x,x) − vᵀv.
        let v = forward_substitute(&self.chol, n, &k_star);
        let explained: f64 = v.iter().map(|a| a * a).sum();
        let var = (self.kernel.eval(x, x) - explained).max(0.0);
        (
            self.y_mean + self.y_std * mu_tilde,
            self.y_std * var.sqrt(),
        )
    }

    /// Log marginal likelihood of the standardized observations.
    pub fn log_marginal(&self) -> f64 {
        let n = self.x.len();
        if n == 0 {
            return 0.0;
        }
        let fit: f64 = self.y_tilde.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let log_det: f64 = (0..n).map(|i| self.chol[i * n + i].ln()).sum();
        -0.5 * fit - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Lower Cholesky with escalating diagonal jitter up to [`MAX_JITTER`].
fn cholesky_with_jitter(k: Vec<f64>, n: usize) -> Result<Vec<f64>, TunerError> {
    let jitters = [0.0, 1e-10, 1e-8, 1e-6, MAX_JITTER];
    'attempt: for &jitter in &jitters {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = k[i * n + j];
                if i == j {
                    sum += jitter;
                }
                for t in 0..j {
                    sum -= l[i * n + t] * l[j * n + t];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        continue 'attempt;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        return Ok(l);
    }
    Err(TunerError::SingularKernel)
}

/// Solve L z = b.
fn forward_substitute(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for j in 0..i {
            sum -= l[i * n + j] * z[j];
        }
        z[i] = sum / l[i * n + i];
    }
    z
}

/// Solve (L Lᵀ) x = b.
fn chol_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let z = forward_substitute(l, n, b);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = z[i];
        for j in i + 1..n {
            sum -= l[j * n + i] * x[j];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

/// Expected Improvement for maximization: with z = (mu − best − xi)/sigma,
/// EI = (mu − best − xi) Φ(z) + sigma φ(z); at sigma = 0 it degenerates to
/// max(mu − best − xi, 0).
///
/// ```
/// use sdprel::tuner::expected_improvement;
///
/// // No posterior uncertainty: EI is the plain (non-negative) improvement.
/// assert_eq!(expected_improvement(1.5, 0.0, 1.0, 0.0), 0.5);
/// assert_eq!(expected_improvement(0.5, 0.0, 1.0, 0.0), 0.0);
///
/// // At mu == best and xi == 0, EI = sigma / sqrt(2 pi).
/// let ei = expected_improvement(1.0, 2.0, 1.0, 0.0);
/// assert!((ei - 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
/// ```
pub fn expected_improvement(mu: f64, sigma: f64, best_so_far: f64, xi: f64) -> f64 {
    let improvement = mu - best_so_far - xi;
    if sigma <= 0.0 {
        return improvement.max(0.0);
    }
    let z = improvement / sigma;
    let standard_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (improvement * standard_normal.cdf(z) + sigma * phi).max(0.0)
}

/// Fit kernel hyperparameters (length scales, signal and noise variances) by
/// multi-restart coordinate ascent on the log marginal likelihood over
/// standardized observations.
fn fit_kernel_params(
    x: &[Vec<f64>],
    y: &[f64],
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Kernel {
    let ml = |kernel: &Kernel| -> f64 {
        match GpState::fit(x.to_vec(), y.to_vec(), kernel.clone()) {
            Ok(gp) => gp.log_marginal(),
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let mut best_kernel = Kernel::isotropic(dim, 1.0, 1e-2, 1.0);
    let mut best_ml = ml(&best_kernel);
    for restart in 0..2 {
        let mut kernel = if restart == 0 {
            Kernel::isotropic(dim, 1.0, 1e-2, 1.0)
        } else {
            Kernel {
                signal_var: 10f64.powf(rng.random_range(-0.5..0.5)),
                noise_var: 10f64.powf(rng.random_range(-3.0..-1.0)),
                length_scales: (0..dim)
                    .map(|_| 10f64.powf(rng.random_range(-0.5..0.5)))
                    .collect(),
            }
        };
        let mut current = ml(&kernel);
        for _pass in 0..2 {
            for param in 0..dim + 2 {
                for &factor in &[0.5, 2.0] {
                    let mut trial = kernel.clone();
                    match param {
                        0 => trial.signal_var = (trial.signal_var * factor).clamp(1e-3, 1e3),
                        1 => trial.noise_var = (trial.noise_var * factor).clamp(NOISE_FLOOR, 1.0),
                        p => {
                            trial.length_scales[p - 2] =
                                (trial.length_scales[p - 2] * factor).clamp(5e-2, 1e2)
                        }
                    }
                    let trial_ml = ml(&trial);
                    if trial_ml > current {
                        current = trial_ml;
                        kernel = trial;
                    }
                }
            }
        }
        if current > best_ml {
            best_ml = current;
            best_kernel = kernel;
        }
    }
    best_kernel
}

/// One objective evaluation in a search trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    /// 1-based evaluation index.
    pub index: usize,
    pub config: Config,
    /// Observed objective; −∞ records a failed (non-finite) evaluation.
    pub value: f64,
    /// Highest objective observed so far.
    pub best_so_far: f64,
}

/// Maximize a black-box objective over a search space.
///
/// `iterations` counts total objective evaluations, including the 10-point
/// shifted-Halton initial design. Each subsequent evaluation refits the
/// kernel by marginal-likelihood ascent and queries the EI argmax over 5000
/// uniform candidates. Objective values that are not finite are recorded as
/// −∞ and excluded from surrogate fitting. A singleton space short-circuits
/// to a single evaluation.
pub fn tune<F>(
    mut objective: F,
    space: &SearchSpace,
    iterations: usize,
    seed: u64,
) -> Result<(Config, Vec<TraceEntry>), TunerError>
where
    F: FnMut(&Config) -> f64,
{
    if iterations == 0 {
        return Err(TunerError::Invalid("iterations must be >= 1".to_string()));
    }
    if space.dims().is_empty() {
        return Err(TunerError::Invalid("empty search space".to_string()));
    }
    let mut rng = seeded_rng(sub_seed(seed, "tuner"));
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut best_value = f64::NEG_INFINITY;

    let record = |config: Config, raw: f64, trace: &mut Vec<TraceEntry>, best: &mut f64| {
        let value = if raw.is_finite() {
            raw
        } else {
            f64::NEG_INFINITY
        };
        if value > *best {
            *best = value;
        }
        trace.push(TraceEntry {
            index: trace.len() + 1,
            config,
            value,
            best_so_far: *best,
        });
    };

    if space.is_singleton() {
        let config = space.sample(&mut rng);
        let value = objective(&config);
        record(config, value, &mut trace, &mut best_value);
        let best = trace[0].config.clone();
        return Ok((best, trace));
    }

    let shifts: Vec<f64> = (0..space.dims().len())
        .map(|_| rng.random::<f64>())
        .collect();
    let n_init = INITIAL_DESIGN.min(iterations);
    for i in 0..n_init {
        let config = space.halton_config(i, &shifts);
        let value = objective(&config);
        record(config, value, &mut trace, &mut best_value);
    }

    while trace.len() < iterations {
        let observed: Vec<(&Config, f64)> = trace
            .iter()
            .filter(|e| e.value.is_finite())
            .map(|e| (&e.config, e.value))
            .collect();
        let config = if observed.len() < 2 {
            // Not enough signal for a surrogate; keep exploring uniformly.
            space.sample(&mut rng)
        } else {
            let x: Vec<Vec<f64>> = observed
                .iter()
                .map(|(c, _)| space.encode(c))
                .collect::<Result<_, _>>()?;
            let y: Vec<f64> = observed.iter().map(|&(_, v)| v).collect();
            let kernel = fit_kernel_params(&x, &y, space.encoded_len(), &mut rng);
            let gp = GpState::fit(x, y, kernel)?;
            let mut best_candidate: Option<(f64, Config)> = None;
            for _ in 0..CANDIDATES {
                let candidate = space.sample(&mut rng);
                let encoded = space.encode(&candidate)?;
                let (mu, sigma) = gp.posterior(&encoded);
                let ei = expected_improvement(mu, sigma, best_value, DEFAULT_XI);
                if best_candidate.as_ref().is_none_or(|(b, _)| ei > *b) {
                    best_candidate = Some((ei, candidate));
                }
            }
            best_candidate.expect("CANDIDATES > 0").1
        };
        let value = objective(&config);
        record(config, value, &mut trace, &mut best_value);
    }

    let best_entry = trace
        .iter()
        .max_by(|a, b| a.value.total_cmp(&b.value))
        .expect("trace non-empty");
    Ok((best_entry.config.clone(), trace))
}

// ---------------------------------------------------------------------------
// The concrete relation-classifier space
// ---------------------------------------------------------------------------

/// The seven-dimensional hyperparameter space: filter-width catalogue (18
/// options), feature maps [10,1000], activation (5), pooling (2), L2
/// [1e-4,1e2] log-scaled, learning rate [1e-6,1e-2] log-scaled, dropout keep
/// probability [0.1,1]. Encodes to 29 coordinates.
pub fn relation_cnn_space() -> SearchSpace {
    let width_labels: Vec<String> = HyperParams::width_catalogue()
        .iter()
        .map(|ws| {
            ws.iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join("-")
        })
        .collect();
    SearchSpace::new(vec![
        Dim::Categorical {
            name: "filter_widths".to_string(),
            options: width_labels,
        },
        Dim::Integer {
            name: "feature_maps".to_string(),
            lo: 10,
            hi: 1000,
        },
        Dim::Categorical {
            name: "activation".to_string(),
            options: Activation::ALL.iter().map(|a| a.as_str().to_string()).collect(),
        },
        Dim::Categorical {
            name: "pooling".to_string(),
            options: Pooling::ALL.iter().map(|p| p.as_str().to_string()).collect(),
        },
        Dim::Continuous {
            name: "l2".to_string(),
            lo: 1e-4,
            hi: 1e2,
            log10: true,
        },
        Dim::Continuous {
            name: "learning_rate".to_string(),
            lo: 1e-6,
            hi: 1e-2,
            log10: true,
        },
        Dim::Continuous {
            name: "dropout_keep".to_string(),
            lo: 0.1,
            hi: 1.0,
            log10: false,
        },
    ])
}

/// Express tunable hyperparameters as a configuration of
/// [`relation_cnn_space`].
pub fn hp_to_config(hp: &HyperParams) -> Result<Config, TunerError> {
    let widths_idx = HyperParams::width_catalogue()
        .iter()
        .position(|ws| *ws == hp.filter_widths)
        .ok_or_else(|| {
            TunerError::OutOfSpace(format!("filter widths {:?} not in catalogue", hp.filter_widths))
        })?;
    let act_idx = Activation::ALL
        .iter()
        .position(|a| *a == hp.activation)
        .expect("closed enum");
    let pool_idx = Pooling::ALL
        .iter()
        .position(|p| *p == hp.pooling)
        .expect("closed enum");
    let config = vec![
        ConfigValue::Choice(widths_idx),
        ConfigValue::Int(hp.feature_maps as i64),
        ConfigValue::Choice(act_idx),
        ConfigValue::Choice(pool_idx),
        ConfigValue::Real(hp.l2),
        ConfigValue::Real(hp.learning_rate),
        ConfigValue::Real(hp.dropout_keep),
    ];
    relation_cnn_space().validate(&config)?;
    Ok(config)
}

/// Materialize a configuration of [`relation_cnn_space`] as hyperparameters;
/// `base` supplies the fixed fields (epochs, batch size, seed).
pub fn config_to_hp(config: &Config, base: &HyperParams) -> Result<HyperParams, TunerError> {
    relation_cnn_space().validate(config)?;
    let choice = |v: &ConfigValue| match v {
        ConfigValue::Choice(i) => *i,
        _ => unreachable!("validated"),
    };
    let real = |v: &ConfigValue| match v {
        ConfigValue::Real(x) => *x,
        _ => unreachable!("validated"),
    };
    let feature_maps = match config[1] {
        ConfigValue::Int(v) => v as usize,
        _ => unreachable!("validated"),
    };
    Ok(HyperParams {
        filter_widths: HyperParams::width_catalogue()[choice(&config[0])].clone(),
        feature_maps,
        activation: Activation::ALL[choice(&config[2])],
        pooling: Pooling::ALL[choice(&config[3])],
        l2: real(&config[4]),
        learning_rate: real(&config[5]),
        dropout_keep: real(&config[6]),
        epochs: base.epochs,
        batch_size: base.batch_size,
        seed: base.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_1d_space() -> SearchSpace {
        SearchSpace::new(vec![Dim::Continuous {
            name: "x".to_string(),
            lo: 0.0,
            hi: 1.0,
            log10: false,
        }])
    }

    #[test]
    fn encodes_the_sb_optimum() {
        let hp = HyperParams {
            filter_widths: vec![4, 5],
            feature_maps: 806,
            activation: Activation::Sigmoid,
            pooling: Pooling::Max,
            l2: 8.13e-2,
            learning_rate: 1.79e-3,
            dropout_keep: 0.87,
            ..HyperParams::default()
        };
        let space = relation_cnn_space();
        let config = hp_to_config(&hp).unwrap();
        let v = space.encode(&config).unwrap();
        assert_eq!(v.len(), 29);
        // One-hot block for the width catalogue: "4-5" is entry 8
        // (singletons 3..9 occupy 0..=6, then 3-4, 4-5).
        for (i, &x) in v[..18].iter().enumerate() {
            assert_eq!(x, if i == 8 { 1.0 } else { 0.0 }, "width one-hot {i}");
        }
        assert!((v[18] - (806.0 - 10.0) / 990.0).abs() < 1e-12);
        assert!((v[18] - 0.8040).abs() < 1e-4);
        // Activation one-hot: sigmoid is entry 0; pooling: max is entry 0.
        assert_eq!(&v[19..24], &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&v[24..26], &[1.0, 0.0]);
        assert!((v[26] - ((8.13e-2f64).log10() + 4.0) / 6.0).abs() < 1e-12);
        assert!((v[27] - ((1.79e-3f64).log10() + 6.0) / 4.0).abs() < 1e-12);
        assert!((v[28] - (0.87 - 0.1) / 0.9).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_config_encodes_to_zero_coordinates() {
        let hp = HyperParams {
            filter_widths: vec![3],
            feature_maps: 10,
            activation: Activation::Sigmoid,
            pooling: Pooling::Max,
            l2: 1e-4,
            learning_rate: 1e-6,
            dropout_keep: 0.1,
            ..HyperParams::default()
        };
        let space = relation_cnn_space();
        let v = space.encode(&hp_to_config(&hp).unwrap()).unwrap();
        // Every scaled (non-one-hot) coordinate sits at 0.
        for &i in &[18usize, 26, 27, 28] {
            assert_eq!(v[i], 0.0, "coordinate {i}");
        }
    }

    #[test]
    fn rejects_out_of_space_configs() {
        let space = relation_cnn_space();
        let mut config = hp_to_config(&HyperParams::default()).unwrap();
        config[1] = ConfigValue::Int(5000);
        assert!(matches!(
            space.encode(&config),
            Err(TunerError::OutOfSpace(_))
        ));
        let hp = HyperParams {
            filter_widths: vec![3, 7],
            ..HyperParams::default()
        };
        assert!(matches!(hp_to_config(&hp), Err(TunerError::OutOfSpace(_))));
    }

    #[test]
    fn encode_decode_round_trip_on_random_configs() {
        let space = relation_cnn_space();
        let mut rng = seeded_rng(0x7e57);
        for case in 0..500 {
            let config = space.sample(&mut rng);
            let decoded = space.decode(&space.encode(&config).unwrap()).unwrap();
            for (a, b) in config.iter().zip(&decoded) {
                match (a, b) {
                    (ConfigValue::Choice(x), ConfigValue::Choice(y)) => {
                        assert_eq!(x, y, "case {case}")
                    }
                    (ConfigValue::Int(x), ConfigValue::Int(y)) => assert_eq!(x, y, "case {case}"),
                    (ConfigValue::Real(x), ConfigValue::Real(y)) => assert!(
                        (x - y).abs() <= 1e-9 * x.abs().max(1.0),
                        "case {case}: {x} vs {y}"
                    ),
                    other => panic!("case {case}: kind changed: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn round_trip_through_hyper_params() {
        let space = relation_cnn_space();
        let mut rng = seeded_rng(0x7e58);
        let base = HyperParams::default();
        for _ in 0..100 {
            let config = space.sample(&mut rng);
            let hp = config_to_hp(&config, &base).unwrap();
            assert!(hp.validate_search_ranges().is_ok());
            let back = hp_to_config(&hp).unwrap();
            assert_eq!(&back[..4], &config[..4]); // categorical + integer dims
        }
    }

    #[test]
    fn prior_posterior_with_no_observations() {
        let kernel = Kernel::isotropic(2, 2.25, 1e-6, 1.0);
        let gp = GpState::fit(vec![], vec![], kernel).unwrap();
        let (mu, sigma) = gp.posterior(&[0.3, 0.7]);
        assert_eq!(mu, 0.0);
        assert!((sigma - 1.5).abs() < 1e-12);
    }

    #[test]
    fn near_zero_noise_interpolates_observations() {
        let kernel = Kernel::isotropic(1, 1.0, 1e-12, 0.5);
        let x = vec![vec![0.2], vec![0.5], vec![0.8]];
        let y = vec![1.0, -0.5, 0.25];
        let gp = GpState::fit(x.clone(), y.clone(), kernel).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let (mu, sigma) = gp.posterior(xi);
            assert!((mu - yi).abs() < 1e-6, "mu {mu} vs y {yi}");
            assert!(sigma < 1e-3);
        }
    }

    /// Independent Matérn-5/2 evaluation for the linear-algebra oracle.
    fn matern52_oracle(a: &[f64], b: &[f64], ls: &[f64], s2: f64) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(ls)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        let s = (5.0 * r2).sqrt();
        s2 * (1.0 + s + 5.0 * r2 / 3.0) * (-s).exp()
    }

    /// 3x3 linear solve by Gauss-Jordan elimination with partial pivoting.
    fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
        for col in 0..3 {
            let pivot = (col..3)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, pivot);
            b.swap(col, pivot);
            let p = a[col][col];
            for j in 0..3 {
                a[col][j] /= p;
            }
            b[col] /= p;
            for i in 0..3 {
                if i != col {
                    let f = a[i][col];
                    for j in 0..3 {
                        a[i][j] -= f * a[col][j];
                    }
                    b[i] -= f * b[col];
                }
            }
        }
        b
    }

    #[test]
    fn posterior_matches_explicit_three_point_solve() {
        let ls = [0.4];
        let s2 = 1.5;
        let noise = 0.1;
        let x = [[0.1], [0.5], [0.9]];
        let y = [1.0, 2.0, 1.5];
        let query = [0.3];

        // Oracle: standardize y, build K + noise I, solve directly.
        let mean = y.iter().sum::<f64>() / 3.0;
        let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        let yt = [
            (y[0] - mean) / std,
            (y[1] - mean) / std,
            (y[2] - mean) / std,
        ];
        let mut k = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                k[i][j] = matern52_oracle(&x[i], &x[j], &ls, s2);
            }
            k[i][i] += noise;
        }
        let alpha = solve3(k, yt);
        let k_star = [
            matern52_oracle(&x[0], &query, &ls, s2),
            matern52_oracle(&x[1], &query, &ls, s2),
            matern52_oracle(&x[2], &query, &ls, s2),
        ];
        let mu_oracle =
            mean + std * (k_star[0] * alpha[0] + k_star[1] * alpha[1] + k_star[2] * alpha[2]);
        let kinv_kstar = solve3(k, k_star);
        let explained: f64 = k_star.iter().zip(&kinv_kstar).map(|(a, b)| a * b).sum();
        let sigma_oracle = std * (s2 - explained).max(0.0).sqrt();

        let kernel = Kernel {
            signal_var: s2,
            noise_var: noise,
            length_scales: ls.to_vec(),
        };
        let gp = GpState::fit(
            x.iter().map(|v| v.to_vec()).collect(),
            y.to_vec(),
            kernel,
        )
        .unwrap();
        let (mu, sigma) = gp.posterior(&query);
        assert!((mu - mu_oracle).abs() < 1e-10, "{mu} vs {mu_oracle}");
        assert!(
            (sigma - sigma_oracle).abs() < 1e-10,
            "{sigma} vs {sigma_oracle}"
        );
    }

    #[test]
    fn posterior_sigma_never_exceeds_prior_sigma() {
        let kernel = Kernel::isotropic(1, 2.0, 0.05, 0.3);
        let mut rng = seeded_rng(0x60_0d);
        let x: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random::<f64>()]).collect();
        let y: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let gp = GpState::fit(x.clone(), y, kernel.clone()).unwrap();
        let prior_sigma = gp.y_std * kernel.signal_var.sqrt();
        for xi in &x {
            let (_, sigma) = gp.posterior(xi);
            assert!(sigma <= prior_sigma + 1e-12);
        }
        for _ in 0..50 {
            let (_, sigma) = gp.posterior(&[rng.random::<f64>()]);
            assert!(sigma <= prior_sigma + 1e-12);
        }
    }

    #[test]
    fn pathological_kernel_reports_singularity() {
        // Two identical points, zero noise, and a colossal signal variance:
        // the diagonal jitter (capped at 1e-4) vanishes in the floating-point
        // sum, so the factorization must give up rather than loop.
        let kernel = Kernel::isotropic(1, 1e20, 0.0, 1.0);
        let x = vec![vec![0.5], vec![0.5]];
        let y = vec![1.0, 1.0];
        assert!(matches!(
            GpState::fit(x, y, kernel),
            Err(TunerError::SingularKernel)
        ));
    }

    #[test]
    fn ei_trivial_values() {
        assert_eq!(expected_improvement(0.5, 0.0, 0.7, 0.0), 0.0);
        assert_eq!(expected_improvement(0.7, 0.0, 0.7, 0.0), 0.0);
        assert!((expected_improvement(1.0, 0.0, 0.2, 0.0) - 0.8).abs() < 1e-15);
        // mu = best, xi = 0, sigma = 2: the Φ term cancels, leaving 2 φ(0).
        let ei = expected_improvement(1.0, 2.0, 1.0, 0.0);
        let expected = 2.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((ei - expected).abs() < 1e-12);
        assert!((ei - 0.7979).abs() < 1e-4);
    }

    #[test]
    fn ei_matches_monte_carlo() {
        let mut rng = seeded_rng(0xE1);
        for &(mu, sigma, best) in &[(0.3, 0.5, 0.4), (1.2, 2.0, 0.9), (-0.5, 0.8, 0.2)] {
            let xi = 0.01;
            let analytic = expected_improvement(mu, sigma, best, xi);
            let n = 1_000_000;
            let mut sum = 0.0;
            for _ in 0..n / 2 {
                // Box-Muller gives two independent standard normals.
                let u1: f64 = rng.random::<f64>().max(1e-300);
                let u2: f64 = rng.random();
                let r = (-2.0 * u1.ln()).sqrt();
                for z in [
                    r * (2.0 * std::f64::consts::PI * u2).cos(),
                    r * (2.0 * std::f64::consts::PI * u2).sin(),
                ] {
                    sum += (mu + sigma * z - best - xi).max(0.0);
                }
            }
            let mc = sum / n as f64;
            assert!(
                (analytic - mc).abs() < 1e-2,
                "mu {mu} sigma {sigma}: {analytic} vs {mc}"
            );
        }
    }

    #[test]
    fn ei_is_nonnegative_and_grows_with_sigma() {
        let mut rng = seeded_rng(0xE2);
        for _ in 0..200 {
            let mu = rng.random_range(-1.0..1.0);
            let best = mu + rng.random_range(0.0..1.0); // mu <= best
            let s1 = rng.random_range(0.0..1.0);
            let s2 = s1 + rng.random_range(0.01..1.0);
            let e1 = expected_improvement(mu, s1, best, 0.01);
            let e2 = expected_improvement(mu, s2, best, 0.01);
            assert!(e1 >= 0.0);
            assert!(e2 >= e1 - 1e-12, "EI not increasing in sigma");
        }
    }

    #[test]
    fn singleton_space_returns_after_one_evaluation() {
        let space = SearchSpace::new(vec![
            Dim::Categorical {
                name: "only".to_string(),
                options: vec!["a".to_string()],
            },
            Dim::Integer {
                name: "n".to_string(),
                lo: 4,
                hi: 4,
            },
        ]);
        let mut calls = 0usize;
        let (best, trace) = tune(
            |_| {
                calls += 1;
                0.5
            },
            &space,
            100,
            7,
        )
        .unwrap();
        assert_eq!(calls, 1);
        assert_eq!(trace.len(), 1);
        assert_eq!(best, vec![ConfigValue::Choice(0), ConfigValue::Int(4)]);
    }

    #[test]
    fn finds_the_quadratic_optimum_in_one_dimension() {
        let space = unit_1d_space();
        let objective = |c: &Config| match c[0] {
            ConfigValue::Real(x) => -(x - 0.3) * (x - 0.3),
            _ => unreachable!(),
        };
        let (best, trace) = tune(objective, &space, 30, 123).unwrap();
        assert_eq!(trace.len(), 30);
        match best[0] {
            ConfigValue::Real(x) => assert!((x - 0.3).abs() < 0.05, "best x = {x}"),
            _ => unreachable!(),
        }
    }

    #[test]
    fn traces_are_deterministic_and_best_monotone() {
        let space = unit_1d_space();
        let objective = |c: &Config| match c[0] {
            ConfigValue::Real(x) => (x * 7.0).sin(),
            _ => unreachable!(),
        };
        let (best1, trace1) = tune(objective, &space, 18, 99).unwrap();
        let (best2, trace2) = tune(objective, &space, 18, 99).unwrap();
        assert_eq!(trace1, trace2);
        assert_eq!(best1, best2);
        for pair in trace1.windows(2) {
            assert!(pair[1].best_so_far >= pair[0].best_so_far);
        }
        assert_eq!(
            trace1.iter().map(|e| e.index).collect::<Vec<_>>(),
            (1..=18).collect::<Vec<_>>()
        );
    }

    #[test]
    fn failed_evaluations_record_negative_infinity() {
        let space = unit_1d_space();
        let objective = |c: &Config| match c[0] {
            // Half the domain "crashes" (NaN); the rest scores its x.
            ConfigValue::Real(x) => {
                if x < 0.5 {
                    f64::NAN
                } else {
                    x
                }
            }
            _ => unreachable!(),
        };
        let (best, trace) = tune(objective, &space, 16, 5).unwrap();
        assert!(trace.iter().any(|e| e.value == f64::NEG_INFINITY));
        assert!(trace.iter().any(|e| e.value.is_finite()));
        match best[0] {
            ConfigValue::Real(x) => assert!(x >= 0.5),
            _ => unreachable!(),
        }
        // best_so_far never regresses even across failures.
        for pair in trace.windows(2) {
            assert!(pair[1].best_so_far >= pair[0].best_so_far);
        }
    }

    #[test]
    fn config_json_uses_dimension_names_and_labels() {
        let space = relation_cnn_space();
        let hp = HyperParams {
            filter_widths: vec![4, 5],
            feature_maps: 806,
            activation: Activation::Sigmoid,
            pooling: Pooling::Max,
            l2: 8.13e-2,
            learning_rate: 1.79e-3,
            dropout_keep: 0.87,
            ..HyperParams::default()
        };
        let json = space.config_to_json(&hp_to_config(&hp).unwrap());
        assert_eq!(json["filter_widths"], "4-5");
        assert_eq!(json["feature_maps"], 806);
        assert_eq!(json["activation"], "sigmoid");
        assert_eq!(json["pooling"], "max");
    }
}
