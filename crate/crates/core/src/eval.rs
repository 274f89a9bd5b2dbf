//! The sequential evaluation protocol: at trial i the predictor sees the
//! first i demonstrations as context and must predict the target of
//! demonstration i (0-based), so trial indices run 1..=N-1 and count prior
//! examples. Per-trial RMSE is aggregated over a trailing window.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Dataset;
use crate::predictor::Predictor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("prediction length {pred} does not match truth length {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("rmse needs at least one component")]
    Empty,
    #[error("trial index {index} out of range 1..={max}")]
    TrialOutOfRange { index: usize, max: usize },
}

/// Root mean square error between two equal-length value sequences.
pub fn rmse(prediction: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    if prediction.len() != truth.len() {
        return Err(EvalError::LengthMismatch { pred: prediction.len(), truth: truth.len() });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let mean_sq = prediction
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / truth.len() as f64;
    Ok(mean_sq.sqrt())
}

/// One evaluation step of one predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Number of prior examples the predictor saw (1-based trial index).
    pub trial_index: usize,
    pub predictor_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Vec<f64>>,
    pub truth: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    pub attempts: usize,
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

/// Trailing aggregation window over trial indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TailWindow {
    /// The last k trials of the run.
    LastK(usize),
    /// Trials with `from <= index <= to`, clamped to the run length. The
    /// upper bound is inclusive but index N-1 is the largest that exists,
    /// so `35to50` on an N=50 run covers indices 35..=49.
    Range { from: usize, to: usize },
}

impl Default for TailWindow {
    fn default() -> Self {
        TailWindow::LastK(25)
    }
}

impl TailWindow {
    /// Concrete inclusive index range for a run with `n_trials` trials.
    pub fn resolve(&self, n_trials: usize) -> (usize, usize) {
        match *self {
            TailWindow::LastK(k) => {
                let from = if k >= n_trials { 1 } else { n_trials - k + 1 };
                (from, n_trials)
            }
            TailWindow::Range { from, to } => (from.max(1), to.min(n_trials)),
        }
    }
}

impl fmt::Display for TailWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TailWindow::LastK(k) => write!(f, "last{k}"),
            TailWindow::Range { from, to } => write!(f, "{from}to{to}"),
        }
    }
}

impl FromStr for TailWindow {
    type Err = String;

    /// Accepts `last<K>` (e.g. `last25`) and `<A>to<B>` (e.g. `35to50`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(k) = s.strip_prefix("last") {
            let k: usize =
                k.parse().map_err(|_| format!("bad window {s:?}: expected lastK"))?;
            if k == 0 {
                return Err(format!("bad window {s:?}: k must be positive"));
            }
            return Ok(TailWindow::LastK(k));
        }
        if let Some((a, b)) = s.split_once("to") {
            let from: usize =
                a.parse().map_err(|_| format!("bad window {s:?}: expected AtoB"))?;
            let to: usize =
                b.parse().map_err(|_| format!("bad window {s:?}: expected AtoB"))?;
            if from == 0 || to < from {
                return Err(format!("bad window {s:?}: need 1 <= A <= B"));
            }
            return Ok(TailWindow::Range { from, to });
        }
        Err(format!("bad window {s:?}: expected lastK or AtoB"))
    }
}

impl TryFrom<String> for TailWindow {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<TailWindow> for String {
    fn from(w: TailWindow) -> String {
        w.to_string()
    }
}

/// Window aggregate for one predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_mean_rmse: Option<f64>,
    pub window_from: usize,
    pub window_to: usize,
    /// Invalid trials inside the window (excluded from the mean).
    pub invalid_count: usize,
}

/// All trials and the window aggregate for one predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSeries {
    pub predictor_id: String,
    pub records: Vec<TrialRecord>,
    pub aggregate: Aggregate,
}

/// Result of one full experiment over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_digest: String,
    pub task_label: String,
    pub n_examples: usize,
    pub window: TailWindow,
    pub series: Vec<PredictorSeries>,
}

/// Runs trial `trial_index` (1..=N-1): context is the first `trial_index`
/// demonstrations, the query is demonstration `trial_index`, whose target
/// stays hidden from the predictor.
pub fn run_trial(
    dataset: &Dataset,
    trial_index: usize,
    predictor: &mut dyn Predictor,
) -> Result<TrialRecord, EvalError> {
    let n = dataset.len();
    if trial_index == 0 || trial_index >= n {
        return Err(EvalError::TrialOutOfRange { index: trial_index, max: n - 1 });
    }
    let context = &dataset.demonstrations[..trial_index];
    let query = &dataset.demonstrations[trial_index];

    let outcome = predictor.predict(context, &query.input, &dataset.task, trial_index);
    let mut record = TrialRecord {
        trial_index,
        predictor_id: predictor.id().to_string(),
        prediction: None,
        truth: query.target.clone(),
        rmse: None,
        attempts: outcome.attempts,
        valid: false,
        failure_reason: None,
    };
    match outcome.values {
        Some(values) => match rmse(&values, &query.target) {
            Ok(r) if r.is_finite() => {
                record.prediction = Some(values);
                record.rmse = Some(r);
                record.valid = true;
            }
            Ok(_) => {
                record.failure_reason = Some("non-finite rmse".into());
            }
            Err(e) => {
                record.failure_reason = Some(e.to_string());
            }
        },
        None => {
            record.failure_reason =
                Some(outcome.failure_reason.unwrap_or_else(|| "unknown failure".into()));
        }
    }
    Ok(record)
}

/// Mean per-trial RMSE of the valid trials inside the window, plus the count
/// of invalid ones. `None` when every windowed trial is invalid.
pub fn tail_average(records: &[TrialRecord], window: &TailWindow) -> Aggregate {
    let n_trials = records.iter().map(|r| r.trial_index).max().unwrap_or(0);
    let (from, to) = window.resolve(n_trials);
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut invalid = 0usize;
    for record in records {
        if record.trial_index < from || record.trial_index > to {
            continue;
        }
        match record.rmse {
            Some(r) if record.valid => {
                sum += r;
                count += 1;
            }
            _ => invalid += 1,
        }
    }
    Aggregate {
        tail_mean_rmse: if count > 0 { Some(sum / count as f64) } else { None },
        window_from: from,
        window_to: to,
        invalid_count: invalid,
    }
}

/// Evaluates every predictor on every trial of one shared dataset.
///
/// Trials run in dataset order per predictor; every predictor sees the
/// byte-identical demonstration sequence. Failures are recorded per trial,
/// never raised, so a run always completes.
pub fn run_experiment(
    dataset: &Dataset,
    predictors: &mut [Box<dyn Predictor>],
    window: TailWindow,
    config_digest: &str,
) -> RunResult {
    run_experiment_observed(dataset, predictors, window, config_digest, &mut |_| {})
}

/// Like [`run_experiment`], invoking `observe` on every finished trial so
/// callers can persist records append-only as they happen.
pub fn run_experiment_observed(
    dataset: &Dataset,
    predictors: &mut [Box<dyn Predictor>],
    window: TailWindow,
    config_digest: &str,
    observe: &mut dyn FnMut(&TrialRecord),
) -> RunResult {
    let mut series = Vec::with_capacity(predictors.len());
    for predictor in predictors.iter_mut() {
        let mut records = Vec::with_capacity(dataset.len() - 1);
        for trial_index in 1..dataset.len() {
            let record = run_trial(dataset, trial_index, predictor.as_mut())
                .expect("trial index in range by construction");
            observe(&record);
            records.push(record);
        }
        let aggregate = tail_average(&records, &window);
        series.push(PredictorSeries {
            predictor_id: predictor.id().to_string(),
            records,
            aggregate,
        });
    }
    RunResult {
        config_digest: config_digest.to_string(),
        task_label: dataset.task.label(),
        n_examples: dataset.len(),
        window,
        series,
    }
}
