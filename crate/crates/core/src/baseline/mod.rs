//! From-scratch trainable baselines: full-batch SGD linear regression, a
//! 2-layer neural network (one hidden ReLU layer plus a linear output
//! layer), and a small CNN for matrix tasks.
//!
//! Weights live in one flat `Vec<f64>` with a fixed layout per kind:
//!
//! * `LinearSgd`:  `[ W (out x in, row-major) | b (out) ]`
//! * `TwoLayerNn`: `[ W1 (hidden x in) | b1 (hidden) | W2 (out x hidden) | b2 (out) ]`
//! * `SmallCnn`:   `[ kernels (ch x k x k) | conv bias (ch) | W (out x feat) | b (out) ]`
//!   where `feat = ch * (rows-k+1) * (cols-k+1)`, flattened channel-major.
//!
//! Initialization draws from a `SplitMix64` seeded with `init_seed`, in
//! layout order, so training is bit-reproducible.

mod train;

pub use train::{fit_to_convergence, grid_search, train_step, FitResult, LEARNING_RATE_GRID};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::NumericArray;
use crate::rng::SplitMix64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("input shape {got_rows}x{got_cols} does not match model shape {rows}x{cols}")]
    InputShape { got_rows: usize, got_cols: usize, rows: usize, cols: usize },
    #[error("cnn requires a matrix input of at least {kernel}x{kernel}, got {rows}x{cols}")]
    CnnShape { rows: usize, cols: usize, kernel: usize },
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("target length {got} does not match model output length {expected}")]
    TargetLength { got: usize, expected: usize },
    #[error("training diverged at epoch {epoch} (non-finite loss, gradient, or weight)")]
    Diverged { epoch: usize },
    #[error("all learning-rate candidates diverged")]
    AllCandidatesDiverged,
    #[error("grid search needs at least 2 examples, got {got}")]
    TooFewExamples { got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearSgd,
    TwoLayerNn,
    SmallCnn,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::LinearSgd => "linear_sgd",
            ModelKind::TwoLayerNn => "two_layer_nn",
            ModelKind::SmallCnn => "small_cnn",
        }
    }

    /// Stable code mixed into per-trial init seeds.
    pub fn seed_code(&self) -> u64 {
        match self {
            ModelKind::LinearSgd => 1,
            ModelKind::TwoLayerNn => 2,
            ModelKind::SmallCnn => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub tol: f64,
    pub hidden_width: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub init_seed: u64,
    /// Standardize features to zero mean / unit variance on the training
    /// batch before fitting. Off by default: raw entries feed the models.
    pub standardize: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 5000,
            patience: 100,
            tol: 1e-8,
            hidden_width: 64,
            conv_channels: 8,
            kernel: 3,
            init_seed: 0,
            standardize: false,
        }
    }
}

/// A trainable model: kind, architecture dimensions, and the flat weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub hyper: Hyperparams,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) output_len: usize,
    pub weights: Vec<f64>,
    /// Per-feature affine transform applied before the model; identity unless
    /// `standardize` was on at fit time.
    pub(crate) feature_mean: Vec<f64>,
    pub(crate) feature_std: Vec<f64>,
}

impl ModelParams {
    pub(crate) fn input_dim(&self) -> usize {
        self.rows * self.cols
    }

    fn conv_dims(&self) -> (usize, usize, usize) {
        let k = self.hyper.kernel;
        (self.hyper.conv_channels, self.rows - k + 1, self.cols - k + 1)
    }

    pub(crate) fn feature_count(&self) -> usize {
        match self.kind {
            ModelKind::SmallCnn => {
                let (ch, oh, ow) = self.conv_dims();
                ch * oh * ow
            }
            _ => self.input_dim(),
        }
    }

    pub fn weight_count(&self) -> usize {
        let (in_dim, out) = (self.input_dim(), self.output_len);
        match self.kind {
            ModelKind::LinearSgd => out * in_dim + out,
            ModelKind::TwoLayerNn => {
                let h = self.hyper.hidden_width;
                h * in_dim + h + out * h + out
            }
            ModelKind::SmallCnn => {
                let k = self.hyper.kernel;
                let (ch, _, _) = self.conv_dims();
                let feat = self.feature_count();
                ch * k * k + ch + out * feat + out
            }
        }
    }

    pub(crate) fn standardized_features(&self, input: &NumericArray) -> Vec<f64> {
        input
            .as_slice()
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }
}

/// Builds a model with freshly initialized weights for the given input shape
/// and output length.
///
/// LinearSgd weights and bias are uniform(-0.01, 0.01); the network layers
/// use Glorot-uniform weights with zero biases. All draws come from
/// `hyper.init_seed` in layout order.
pub fn init_model(
    kind: ModelKind,
    input_shape: (usize, usize),
    output_len: usize,
    hyper: &Hyperparams,
) -> Result<ModelParams, BaselineError> {
    let (rows, cols) = input_shape;
    if kind == ModelKind::SmallCnn && (cols < 2 || rows < hyper.kernel || cols < hyper.kernel) {
        return Err(BaselineError::CnnShape { rows, cols, kernel: hyper.kernel });
    }

    let mut model = ModelParams {
        kind,
        hyper: hyper.clone(),
        rows,
        cols,
        output_len,
        weights: Vec::new(),
        feature_mean: vec![0.0; rows * cols],
        feature_std: vec![1.0; rows * cols],
    };

    let mut rng = SplitMix64::new(hyper.init_seed);
    let mut uniform = |n: usize, limit: f64, out: &mut Vec<f64>| {
        out.extend((0..n).map(|_| rng.uniform_in(-limit, limit)));
    };

    let in_dim = model.input_dim();
    let out = output_len;
    let mut w = Vec::with_capacity(model.weight_count());
    match kind {
        ModelKind::LinearSgd => {
            uniform(out * in_dim + out, 0.01, &mut w);
        }
        ModelKind::TwoLayerNn => {
            let h = hyper.hidden_width;
            uniform(h * in_dim, glorot_limit(in_dim, h), &mut w);
            w.extend(std::iter::repeat(0.0).take(h));
            uniform(out * h, glorot_limit(h, out), &mut w);
            w.extend(std::iter::repeat(0.0).take(out));
        }
        ModelKind::SmallCnn => {
            let k = hyper.kernel;
            let ch = hyper.conv_channels;
            let feat = model.feature_count();
            uniform(ch * k * k, glorot_limit(k * k, k * k * ch), &mut w);
            w.extend(std::iter::repeat(0.0).take(ch));
            uniform(out * feat, glorot_limit(feat, out), &mut w);
            w.extend(std::iter::repeat(0.0).take(out));
        }
    }
    model.weights = w;
    debug_assert_eq!(model.weights.len(), model.weight_count());
    Ok(model)
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Deterministic prediction for one input.
pub fn forward(model: &ModelParams, input: &NumericArray) -> Result<Vec<f64>, BaselineError> {
    let (got_rows, got_cols) = input.shape();
    if (got_rows, got_cols) != (model.rows, model.cols) {
        return Err(BaselineError::InputShape {
            got_rows,
            got_cols,
            rows: model.rows,
            cols: model.cols,
        });
    }
    let x = model.standardized_features(input);
    Ok(forward_features(model, &x))
}

/// Forward pass on a preprocessed feature vector.
pub(crate) fn forward_features(model: &ModelParams, x: &[f64]) -> Vec<f64> {
    match model.kind {
        ModelKind::LinearSgd => {
            let (w, b) = linear_slices(model);
            dense(w, b, x, model.output_len)
        }
        ModelKind::TwoLayerNn => {
            let (w1, b1, w2, b2) = nn_slices(model);
            let h = model.hyper.hidden_width;
            let mut hidden = dense(w1, b1, x, h);
            for v in &mut hidden {
                *v = v.max(0.0);
            }
            dense(w2, b2, &hidden, model.output_len)
        }
        ModelKind::SmallCnn => {
            let (kern, cb, w, b) = cnn_slices(model);
            let feat = conv_relu_features(model, kern, cb, x);
            dense(w, b, &feat, model.output_len)
        }
    }
}

fn dense(w: &[f64], b: &[f64], x: &[f64], out_len: usize) -> Vec<f64> {
    let in_len = x.len();
    (0..out_len)
        .map(|o| {
            let row = &w[o * in_len..(o + 1) * in_len];
            b[o] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>()
        })
        .collect()
}

/// Valid-padding convolution over the (rows x cols) grid followed by ReLU,
/// flattened channel-major.
pub(crate) fn conv_relu_features(
    model: &ModelParams,
    kern: &[f64],
    cb: &[f64],
    x: &[f64],
) -> Vec<f64> {
    let k = model.hyper.kernel;
    let (ch, oh, ow) = model.conv_dims();
    let cols = model.cols;
    let mut feat = Vec::with_capacity(ch * oh * ow);
    for c in 0..ch {
        let kernel = &kern[c * k * k..(c + 1) * k * k];
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = cb[c];
                for u in 0..k {
                    for v in 0..k {
                        acc += kernel[u * k + v] * x[(i + u) * cols + (j + v)];
                    }
                }
                feat.push(acc.max(0.0));
            }
        }
    }
    feat
}

// Weight-slice accessors per layout.

pub(crate) fn linear_slices(m: &ModelParams) -> (&[f64], &[f64]) {
    let in_dim = m.input_dim();
    let out = m.output_len;
    let (w, b) = m.weights.split_at(out * in_dim);
    (w, b)
}

pub(crate) fn nn_slices(m: &ModelParams) -> (&[f64], &[f64], &[f64], &[f64]) {
    let in_dim = m.input_dim();
    let h = m.hyper.hidden_width;
    let out = m.output_len;
    let (w1, rest) = m.weights.split_at(h * in_dim);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(out * h);
    (w1, b1, w2, b2)
}

pub(crate) fn cnn_slices(m: &ModelParams) -> (&[f64], &[f64], &[f64], &[f64]) {
    let k = m.hyper.kernel;
    let ch = m.hyper.conv_channels;
    let feat = m.feature_count();
    let out = m.output_len;
    let (kern, rest) = m.weights.split_at(ch * k * k);
    let (cb, rest) = rest.split_at(ch);
    let (w, b) = rest.split_at(out * feat);
    (kern, cb, w, b)
}
