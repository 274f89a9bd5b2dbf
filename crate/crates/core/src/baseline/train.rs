//! Full-batch gradient training, convergence loop, and learning-rate grid
//! search over a holdout split.

use super::{
    cnn_slices, conv_relu_features, dense, forward_features, init_model, nn_slices,
    BaselineError, Hyperparams, ModelKind, ModelParams,
};
use crate::datagen::Demonstration;
use crate::eval::rmse;

/// Learning rates tried by `grid_search`.
pub const LEARNING_RATE_GRID: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Mean-squared-error loss and its gradient with respect to every weight,
/// averaged over the batch and output components.
fn loss_and_gradient(
    model: &ModelParams,
    batch: &[(Vec<f64>, &[f64])],
) -> Result<(f64, Vec<f64>), BaselineError> {
    let out_len = model.output_len;
    let scale = 1.0 / (batch.len() * out_len) as f64;
    let mut grad = vec![0.0; model.weights.len()];
    let mut loss = 0.0;

    for (x, target) in batch {
        if target.len() != out_len {
            return Err(BaselineError::TargetLength { got: target.len(), expected: out_len });
        }
        let pred = forward_features(model, x);
        // d loss / d pred_o
        let dy: Vec<f64> = pred
            .iter()
            .zip(*target)
            .map(|(p, t)| {
                let e = p - t;
                loss += scale * e * e;
                2.0 * scale * e
            })
            .collect();
        accumulate_example_gradient(model, x, &dy, &mut grad);
    }
    Ok((loss, grad))
}

fn accumulate_example_gradient(model: &ModelParams, x: &[f64], dy: &[f64], grad: &mut [f64]) {
    let in_dim = model.input_dim();
    let out = model.output_len;
    match model.kind {
        ModelKind::LinearSgd => {
            let (gw, gb) = grad.split_at_mut(out * in_dim);
            for (o, &d) in dy.iter().enumerate() {
                for (i, &xi) in x.iter().enumerate() {
                    gw[o * in_dim + i] += d * xi;
                }
                gb[o] += d;
            }
        }
        ModelKind::TwoLayerNn => {
            let h = model.hyper.hidden_width;
            let (w1, b1, w2, _) = nn_slices(model);
            let z1 = dense(w1, b1, x, h);
            let hidden: Vec<f64> = z1.iter().map(|z| z.max(0.0)).collect();

            // Backprop through the hidden layer.
            let mut dz1 = vec![0.0; h];
            {
                let (gw1, rest) = grad.split_at_mut(h * in_dim);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(out * h);
                for (o, &d) in dy.iter().enumerate() {
                    for j in 0..h {
                        gw2[o * h + j] += d * hidden[j];
                        dz1[j] += d * w2[o * h + j];
                    }
                    gb2[o] += d;
                }
                for j in 0..h {
                    if z1[j] <= 0.0 {
                        dz1[j] = 0.0;
                    }
                    for (i, &xi) in x.iter().enumerate() {
                        gw1[j * in_dim + i] += dz1[j] * xi;
                    }
                    gb1[j] += dz1[j];
                }
            }
        }
        ModelKind::SmallCnn => {
            let k = model.hyper.kernel;
            let ch = model.hyper.conv_channels;
            let (_, oh, ow) = model.conv_dims();
            let cols = model.cols;
            let feat_len = model.feature_count();
            let (kern, cb, w, _) = cnn_slices(model);
            let feat = conv_relu_features(model, kern, cb, x);

            let mut dfeat = vec![0.0; feat_len];
            {
                let kk = ch * k * k;
                let (gkern, rest) = grad.split_at_mut(kk);
                let (gcb, rest) = rest.split_at_mut(ch);
                let (gw, gb) = rest.split_at_mut(out * feat_len);
                for (o, &d) in dy.iter().enumerate() {
                    for f in 0..feat_len {
                        gw[o * feat_len + f] += d * feat[f];
                        dfeat[f] += d * w[o * feat_len + f];
                    }
                    gb[o] += d;
                }
                // ReLU gate: feat == 0 means the pre-activation was <= 0.
                for c in 0..ch {
                    for i in 0..oh {
                        for j in 0..ow {
                            let f = c * oh * ow + i * ow + j;
                            if feat[f] <= 0.0 {
                                continue;
                            }
                            let df = dfeat[f];
                            for u in 0..k {
                                for v in 0..k {
                                    gkern[c * k * k + u * k + v] +=
                                        df * x[(i + u) * cols + (j + v)];
                                }
                            }
                            gcb[c] += df;
                        }
                    }
                }
            }
        }
    }
}

impl ModelParams {
    fn batch_features<'a>(
        &self,
        batch: &'a [Demonstration],
    ) -> Result<Vec<(Vec<f64>, &'a [f64])>, BaselineError> {
        batch
            .iter()
            .map(|d| {
                let (got_rows, got_cols) = d.input.shape();
                if (got_rows, got_cols) != (self.rows, self.cols) {
                    return Err(BaselineError::InputShape {
                        got_rows,
                        got_cols,
                        rows: self.rows,
                        cols: self.cols,
                    });
                }
                Ok((self.standardized_features(&d.input), d.target.as_slice()))
            })
            .collect()
    }

    /// Fits the feature transform to the batch (identity when standardization
    /// is off).
    fn fit_feature_transform(&mut self, batch: &[Demonstration]) {
        if !self.hyper.standardize {
            return;
        }
        let n = batch.len() as f64;
        let dim = self.input_dim();
        let mut mean = vec![0.0; dim];
        for d in batch {
            for (m, &x) in mean.iter_mut().zip(d.input.as_slice()) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; dim];
        for d in batch {
            for ((v, &x), &m) in var.iter_mut().zip(d.input.as_slice()).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        self.feature_mean = mean;
        self.feature_std = var.iter().map(|v| v.sqrt().max(1e-12)).collect();
    }
}

/// One full-batch gradient step. Returns the pre-step loss.
///
/// A non-finite loss, gradient, or post-step weight is reported as
/// divergence; the caller drops the run.
pub fn train_step(
    model: &mut ModelParams,
    batch: &[Demonstration],
    learning_rate: f64,
) -> Result<f64, BaselineError> {
    if batch.is_empty() {
        return Err(BaselineError::EmptyBatch);
    }
    let features = model.batch_features(batch)?;
    let (loss, grad) = loss_and_gradient(model, &features)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(BaselineError::Diverged { epoch: 0 });
    }
    for (w, g) in model.weights.iter_mut().zip(&grad) {
        *w -= learning_rate * g;
    }
    if model.weights.iter().any(|w| !w.is_finite()) {
        return Err(BaselineError::Diverged { epoch: 0 });
    }
    Ok(loss)
}

/// Final parameters plus the recorded loss curve.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelParams,
    pub loss_curve: Vec<f64>,
}

/// Trains until the loss improvement stays below `tol` for `patience`
/// consecutive epochs, or `max_epochs` is reached.
pub fn fit_to_convergence(
    kind: ModelKind,
    train: &[Demonstration],
    input_shape: (usize, usize),
    output_len: usize,
    hyper: &Hyperparams,
) -> Result<FitResult, BaselineError> {
    if train.is_empty() {
        return Err(BaselineError::EmptyBatch);
    }
    let mut model = init_model(kind, input_shape, output_len, hyper)?;
    model.fit_feature_transform(train);

    let mut loss_curve = Vec::new();
    let mut previous = f64::INFINITY;
    let mut flat_streak = 0usize;
    for epoch in 0..hyper.max_epochs {
        let loss = train_step(&mut model, train, hyper.learning_rate)
            .map_err(|e| match e {
                BaselineError::Diverged { .. } => BaselineError::Diverged { epoch },
                other => other,
            })?;
        loss_curve.push(loss);
        if previous - loss < hyper.tol {
            flat_streak += 1;
            if flat_streak >= hyper.patience {
                break;
            }
        } else {
            flat_streak = 0;
        }
        previous = loss;
    }
    Ok(FitResult { model, loss_curve })
}

/// Picks the learning rate with the lowest holdout RMSE.
///
/// The holdout is the trailing `ceil(holdout_fraction * n)` examples
/// (at least 1, at most n-1); candidates are fitted on the remainder.
/// Diverged candidates are skipped; ties go to the smaller learning rate.
/// The caller refits on the full prefix with the winner.
pub fn grid_search(
    kind: ModelKind,
    train: &[Demonstration],
    input_shape: (usize, usize),
    output_len: usize,
    base: &Hyperparams,
    holdout_fraction: f64,
) -> Result<Hyperparams, BaselineError> {
    let n = train.len();
    if n < 2 {
        return Err(BaselineError::TooFewExamples { got: n });
    }
    let holdout_len = ((holdout_fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let (fit_part, holdout) = train.split_at(n - holdout_len);

    let mut best: Option<(f64, f64)> = None; // (holdout rmse, lr)
    for &lr in &LEARNING_RATE_GRID {
        let hyper = Hyperparams { learning_rate: lr, ..base.clone() };
        let fitted = match fit_to_convergence(kind, fit_part, input_shape, output_len, &hyper) {
            Ok(f) => f,
            Err(BaselineError::Diverged { .. }) => continue,
            Err(other) => return Err(other),
        };
        let mut score = 0.0;
        let mut ok = true;
        for demo in holdout {
            let pred = forward_features(&fitted.model, &fitted.model.standardized_features(&demo.input));
            match rmse(&pred, &demo.target) {
                Ok(r) if r.is_finite() => score += r / holdout.len() as f64,
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        // The grid runs largest to smallest, so <= keeps the smaller rate on ties.
        if best.map_or(true, |(s, _)| score <= s) {
            best = Some((score, lr));
        }
    }
    match best {
        Some((_, lr)) => Ok(Hyperparams { learning_rate: lr, ..base.clone() }),
        None => Err(BaselineError::AllCandidatesDiverged),
    }
}
