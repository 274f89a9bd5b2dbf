//! Uniform predictor abstraction over remote chat models, offline reference
//! predictors, and the trainable baselines, with format-validated retry.
//!
//! Every predictor sees the same interface: a context of demonstrations, a
//! query input, and the task. What comes back is a `PredictionOutcome` that
//! either carries values of the task's output length or a failure reason —
//! never a panic, and never more than `max_retries` attempts.

mod remote;

pub use remote::{send_chat_request, RateLimiter, RemoteChatPredictor, TransportError};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{
    fit_to_convergence, forward, grid_search, BaselineError, Hyperparams, ModelKind,
};
use crate::datagen::{Demonstration, TaskSpec};
use crate::linalg::NumericArray;
use crate::prompt::{parse_reply, PromptConfig};
use crate::rng::{derive_seed, SplitMix64, STREAM_INIT, STREAM_NOISE};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("replay file {path}: {source}")]
    ReplayFile { path: PathBuf, source: std::io::Error },
    #[error("api key environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("invalid predictor config for {id}: {reason}")]
    InvalidConfig { id: String, reason: String },
}

fn default_max_retries() -> usize {
    5
}

fn default_rate_limit() -> u32 {
    60
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_backoff_base_ms() -> u64 {
    1000
}

/// One predictor as declared in the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub id: String,
    #[serde(flatten)]
    pub kind: PredictorKind,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorKind {
    /// OpenAI-compatible chat-completions endpoint.
    RemoteChat {
        endpoint_url: String,
        model_name: String,
        api_key_env: String,
        #[serde(default)]
        temperature: f64,
        /// Requests per 60-second sliding window; 0 disables limiting.
        #[serde(default = "default_rate_limit")]
        rate_limit_per_minute: u32,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        /// First backoff delay after a transport error; doubles per error.
        #[serde(default = "default_backoff_base_ms")]
        backoff_base_ms: u64,
    },
    /// Exact ground truth; calibrates the harness at RMSE 0.
    Oracle,
    /// Ground truth plus zero-mean Gaussian noise, seeded per trial.
    NoisyOracle { sigma: f64 },
    /// Elementwise mean of the context targets.
    MeanOfContext,
    /// Canned reply text fed through the real parser, one record per reply.
    Replay { path: PathBuf },
}

/// Result of one predict call.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutcome {
    pub values: Option<Vec<f64>>,
    pub attempts: usize,
    pub failure_reason: Option<String>,
    /// Wall-clock milliseconds per attempt; informational only, never
    /// persisted (results files must be bit-reproducible).
    pub latency_ms: Vec<u64>,
}

impl PredictionOutcome {
    pub fn success(values: Vec<f64>, attempts: usize, latency_ms: Vec<u64>) -> Self {
        Self { values: Some(values), attempts, failure_reason: None, latency_ms }
    }

    pub fn failure(reason: impl Into<String>, attempts: usize, latency_ms: Vec<u64>) -> Self {
        Self { values: None, attempts, failure_reason: Some(reason.into()), latency_ms }
    }

    pub fn is_success(&self) -> bool {
        self.values.is_some()
    }
}

/// A source of predictions evaluated under the sequential protocol.
///
/// `trial_index` is the number of prior examples in `context`; predictors
/// that need per-trial seeding (noise, weight init) derive it from there.
pub trait Predictor {
    fn id(&self) -> &str;

    fn predict(
        &mut self,
        context: &[Demonstration],
        query: &NumericArray,
        task: &TaskSpec,
        trial_index: usize,
    ) -> PredictionOutcome;
}

// ── Offline predictors ──────────────────────────────────────────────

pub struct OraclePredictor {
    id: String,
}

impl OraclePredictor {
    pub fn new(id: &str) -> Self {
        Self { id: id.to_string() }
    }
}

impl Predictor for OraclePredictor {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(
        &mut self,
        _context: &[Demonstration],
        query: &NumericArray,
        task: &TaskSpec,
        _trial_index: usize,
    ) -> PredictionOutcome {
        match task.ground_truth(query) {
            Ok(values) => PredictionOutcome::success(values, 1, vec![0]),
            Err(e) => PredictionOutcome::failure(e.to_string(), 1, vec![0]),
        }
    }
}

pub struct NoisyOraclePredictor {
    id: String,
    sigma: f64,
    run_seed: u64,
}

impl NoisyOraclePredictor {
    pub fn new(id: &str, sigma: f64, run_seed: u64) -> Self {
        Self { id: id.to_string(), sigma, run_seed }
    }
}

impl Predictor for NoisyOraclePredictor {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(
        &mut self,
        _context: &[Demonstration],
        query: &NumericArray,
        task: &TaskSpec,
        trial_index: usize,
    ) -> PredictionOutcome {
        let truth = match task.ground_truth(query) {
            Ok(v) => v,
            Err(e) => return PredictionOutcome::failure(e.to_string(), 1, vec![0]),
        };
        let mut rng =
            SplitMix64::new(derive_seed(self.run_seed, STREAM_NOISE, trial_index as u64));
        let values = truth.iter().map(|t| t + self.sigma * rng.next_normal()).collect();
        PredictionOutcome::success(values, 1, vec![0])
    }
}

pub struct MeanOfContextPredictor {
    id: String,
}

impl MeanOfContextPredictor {
    pub fn new(id: &str) -> Self {
        Self { id: id.to_string() }
    }
}

impl Predictor for MeanOfContextPredictor {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(
        &mut self,
        context: &[Demonstration],
        _query: &NumericArray,
        task: &TaskSpec,
        _trial_index: usize,
    ) -> PredictionOutcome {
        let len = task.output_len();
        let mut mean = vec![0.0; len];
        if !context.is_empty() {
            for demo in context {
                for (m, t) in mean.iter_mut().zip(&demo.target) {
                    *m += t;
                }
            }
            // Divide once at the end; identical targets then average exactly.
            for m in &mut mean {
                *m /= context.len() as f64;
            }
        }
        PredictionOutcome::success(mean, 1, vec![0])
    }
}

/// Replays canned reply text through the real parser. Records are separated
/// by lines consisting of exactly `---`; a reply may span multiple lines.
pub struct ReplayPredictor {
    id: String,
    replies: Vec<String>,
    cursor: usize,
    max_retries: usize,
}

impl ReplayPredictor {
    pub fn from_path(id: &str, path: &Path, max_retries: usize) -> Result<Self, PredictorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| PredictorError::ReplayFile { path: path.to_path_buf(), source })?;
        Ok(Self::from_text(id, &text, max_retries))
    }

    pub fn from_text(id: &str, text: &str, max_retries: usize) -> Self {
        let mut replies = Vec::new();
        let mut current = String::new();
        for line in text.lines() {
            if line.trim_end() == "---" {
                replies.push(std::mem::take(&mut current));
            } else {
                if !current.is_empty() {
                    current.push('\n');
                }
                current.push_str(line);
            }
        }
        if !current.trim().is_empty() {
            replies.push(current);
        }
        Self { id: id.to_string(), replies, cursor: 0, max_retries }
    }

    pub fn remaining(&self) -> usize {
        self.replies.len().saturating_sub(self.cursor)
    }
}

impl Predictor for ReplayPredictor {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(
        &mut self,
        _context: &[Demonstration],
        _query: &NumericArray,
        task: &TaskSpec,
        _trial_index: usize,
    ) -> PredictionOutcome {
        let mut last_error = String::from("replay file exhausted");
        let mut attempts = 0;
        while attempts < self.max_retries {
            let Some(raw) = self.replies.get(self.cursor) else {
                break;
            };
            self.cursor += 1;
            attempts += 1;
            match parse_reply(raw, task.output_len()) {
                Ok(parsed) => {
                    return PredictionOutcome::success(parsed.values, attempts, vec![0; attempts])
                }
                Err(e) => {
                    log::debug!("replay {}: attempt {attempts} rejected: {e}", self.id);
                    last_error = e.to_string();
                }
            }
        }
        PredictionOutcome::failure(last_error, attempts.max(1), vec![0; attempts.max(1)])
    }
}

// ── Baseline bridge ─────────────────────────────────────────────────

/// Runs a trainable baseline under the predictor interface: per trial it
/// re-seeds from (run seed, trial index, model kind), grid-searches the
/// learning rate on the context, refits on the full context, and predicts.
pub struct BaselinePredictor {
    id: String,
    kind: ModelKind,
    base_hyper: Hyperparams,
    holdout_fraction: f64,
    run_seed: u64,
    /// When set, final weights and loss curves are dumped here per trial.
    pub dump_dir: Option<PathBuf>,
}

impl BaselinePredictor {
    pub fn new(
        id: &str,
        kind: ModelKind,
        base_hyper: Hyperparams,
        holdout_fraction: f64,
        run_seed: u64,
    ) -> Self {
        Self {
            id: id.to_string(),
            kind,
            base_hyper,
            holdout_fraction,
            run_seed,
            dump_dir: None,
        }
    }

    fn dump(&self, trial_index: usize, hyper: &Hyperparams, fit: &crate::baseline::FitResult) {
        let Some(dir) = &self.dump_dir else { return };
        let record = serde_json::json!({
            "predictor_id": self.id,
            "trial_index": trial_index,
            "kind": self.kind.label(),
            "learning_rate": hyper.learning_rate,
            "init_seed": hyper.init_seed,
            "final_weights": fit.model.weights,
            "loss_curve": fit.loss_curve,
        });
        let path = dir.join(format!("{}-trial{:03}.json", self.id, trial_index));
        if let Err(e) = std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(&path, serde_json::to_vec_pretty(&record).unwrap()))
        {
            log::warn!("baseline dump to {} failed: {e}", path.display());
        }
    }
}

impl Predictor for BaselinePredictor {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(
        &mut self,
        context: &[Demonstration],
        query: &NumericArray,
        task: &TaskSpec,
        trial_index: usize,
    ) -> PredictionOutcome {
        let shape = task.input_shape();
        let out_len = task.output_len();
        let init_seed = derive_seed(
            self.run_seed,
            STREAM_INIT.wrapping_add(self.kind.seed_code()),
            trial_index as u64,
        );
        let base = Hyperparams { init_seed, ..self.base_hyper.clone() };

        // A single prior example cannot be split for grid search; fall back
        // to the smallest grid rate, the one the tie-break already favors.
        let searched = if context.len() < 2 {
            Ok(Hyperparams { learning_rate: 1e-4, ..base.clone() })
        } else {
            grid_search(self.kind, context, shape, out_len, &base, self.holdout_fraction)
        };
        let hyper = match searched {
            Ok(h) => h,
            Err(e @ BaselineError::AllCandidatesDiverged) => {
                return PredictionOutcome::failure(e.to_string(), 1, vec![0]);
            }
            Err(e) => return PredictionOutcome::failure(e.to_string(), 1, vec![0]),
        };

        let fit = match fit_to_convergence(self.kind, context, shape, out_len, &hyper) {
            Ok(f) => f,
            Err(e) => return PredictionOutcome::failure(e.to_string(), 1, vec![0]),
        };
        self.dump(trial_index, &hyper, &fit);
        match forward(&fit.model, query) {
            Ok(values) => PredictionOutcome::success(values, 1, vec![0]),
            Err(e) => PredictionOutcome::failure(e.to_string(), 1, vec![0]),
        }
    }
}

/// Builds a boxed predictor from its config entry.
///
/// `run_seed` feeds the deterministic sub-streams; `prompt` configures
/// rendering for remote predictors; `base_dir` anchors relative replay paths.
pub fn build_predictor(
    cfg: &PredictorConfig,
    run_seed: u64,
    prompt: &PromptConfig,
    base_dir: &Path,
) -> Result<Box<dyn Predictor>, PredictorError> {
    if cfg.max_retries == 0 {
        return Err(PredictorError::InvalidConfig {
            id: cfg.id.clone(),
            reason: "max_retries must be at least 1".into(),
        });
    }
    match &cfg.kind {
        PredictorKind::Oracle => Ok(Box::new(OraclePredictor { id: cfg.id.clone() })),
        PredictorKind::NoisyOracle { sigma } => Ok(Box::new(NoisyOraclePredictor {
            id: cfg.id.clone(),
            sigma: *sigma,
            run_seed,
        })),
        PredictorKind::MeanOfContext => {
            Ok(Box::new(MeanOfContextPredictor { id: cfg.id.clone() }))
        }
        PredictorKind::Replay { path } => {
            let resolved =
                if path.is_absolute() { path.clone() } else { base_dir.join(path) };
            Ok(Box::new(ReplayPredictor::from_path(&cfg.id, &resolved, cfg.max_retries)?))
        }
        PredictorKind::RemoteChat {
            endpoint_url,
            model_name,
            api_key_env,
            temperature,
            rate_limit_per_minute,
            timeout_secs,
            backoff_base_ms,
        } => {
            if endpoint_url.is_empty() || model_name.is_empty() {
                return Err(PredictorError::InvalidConfig {
                    id: cfg.id.clone(),
                    reason: "remote_chat requires endpoint_url and model_name".into(),
                });
            }
            Ok(Box::new(RemoteChatPredictor::new(remote::RemoteChatSettings {
                id: cfg.id.clone(),
                endpoint_url: endpoint_url.clone(),
                model_name: model_name.clone(),
                api_key_env: api_key_env.clone(),
                temperature: *temperature,
                rate_limit_per_minute: *rate_limit_per_minute,
                timeout_secs: *timeout_secs,
                backoff_base_ms: *backoff_base_ms,
                max_retries: cfg.max_retries,
                prompt: prompt.clone(),
                run_seed,
            })))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_dataset, TaskSpec};

    fn diag_5x5(values: [f64; 5]) -> NumericArray {
        let mut data = vec![0.0; 25];
        for (i, v) in values.into_iter().enumerate() {
            data[i * 5 + i] = v;
        }
        NumericArray::matrix(5, 5, data).unwrap()
    }

    #[test]
    fn oracle_on_diagonal_topk() {
        let task = TaskSpec::top_k(3, 5, 5);
        let mut oracle = OraclePredictor { id: "oracle".into() };
        let query = diag_5x5([9.0, 4.0, 1.0, 0.0, 0.0]);
        let outcome = oracle.predict(&[], &query, &task, 1);
        let values = outcome.values.unwrap();
        assert!((values[0] - 9.0).abs() < 1e-12);
        assert!((values[1] - 4.0).abs() < 1e-12);
        assert!((values[2] - 1.0).abs() < 1e-12);
        assert_eq!(outcome.attempts, 1);
    }

    #[test]
    fn mean_of_context_averages_targets() {
        let task = TaskSpec::pnorm(2.0, 2);
        let mut p = MeanOfContextPredictor { id: "mean".into() };
        let context = vec![
            Demonstration {
                input: NumericArray::vector(vec![1.0, 0.0]).unwrap(),
                target: vec![2.0],
            },
            Demonstration {
                input: NumericArray::vector(vec![0.0, 1.0]).unwrap(),
                target: vec![4.0],
            },
        ];
        let query = NumericArray::vector(vec![1.0, 1.0]).unwrap();
        let outcome = p.predict(&context, &query, &task, 2);
        assert_eq!(outcome.values.unwrap(), vec![3.0]);
    }

    #[test]
    fn mean_of_context_empty_is_zero_vector() {
        let task = TaskSpec::top_k(3, 5, 5);
        let mut p = MeanOfContextPredictor { id: "mean".into() };
        let outcome = p.predict(&[], &diag_5x5([1.0; 5]), &task, 0);
        assert_eq!(outcome.values.unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn noisy_oracle_is_trial_deterministic() {
        let task = TaskSpec::nuclear_norm(5, 5);
        let query = diag_5x5([3.0, 1.0, 0.5, 0.2, 0.1]);
        let mut a = NoisyOraclePredictor { id: "noisy".into(), sigma: 2.0, run_seed: 9 };
        let mut b = NoisyOraclePredictor { id: "noisy".into(), sigma: 2.0, run_seed: 9 };
        let va = a.predict(&[], &query, &task, 3).values.unwrap();
        let vb = b.predict(&[], &query, &task, 3).values.unwrap();
        assert_eq!(va, vb);
        let vc = a.predict(&[], &query, &task, 4).values.unwrap();
        assert_ne!(va, vc);
    }

    #[test]
    fn replay_retries_until_parse_succeeds() {
        let task = TaskSpec::top_k(3, 5, 5);
        let text = "1.0; 2.0; banana;\n---\n1.0; 2.0; 3.0;\n---\n";
        let mut p = ReplayPredictor::from_text("replay", text, 5);
        let outcome = p.predict(&[], &diag_5x5([1.0; 5]), &task, 1);
        assert_eq!(outcome.values.unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(outcome.attempts, 2);
    }

    #[test]
    fn replay_exhaustion_fails_within_budget() {
        let task = TaskSpec::nuclear_norm(5, 5);
        let text = "pears\n---\n";
        let mut p = ReplayPredictor::from_text("replay", text, 5);
        let outcome = p.predict(&[], &diag_5x5([1.0; 5]), &task, 1);
        assert!(!outcome.is_success());
        assert!(outcome.attempts <= 5);
    }

    #[test]
    fn replay_respects_max_retries() {
        let task = TaskSpec::nuclear_norm(5, 5);
        let text = (0..8).map(|i| format!("bad{i}\n---\n")).collect::<String>();
        let mut p = ReplayPredictor::from_text("replay", &text, 5);
        let outcome = p.predict(&[], &diag_5x5([1.0; 5]), &task, 1);
        assert!(!outcome.is_success());
        assert_eq!(outcome.attempts, 5);
        assert_eq!(p.remaining(), 3);
    }

    #[test]
    fn multiline_replay_records() {
        let text = "1.0;\n2.0;\n---\n3.0;\n";
        let p = ReplayPredictor::from_text("replay", text, 5);
        assert_eq!(p.replies, vec!["1.0;\n2.0;".to_string(), "3.0;".to_string()]);
    }

    #[test]
    fn baseline_predictor_learns_linear_task() {
        // Synthetic linear target: mean-of-context should lose to the trained
        // linear model once enough context exists.
        let task = TaskSpec::pnorm(1.0, 3);
        let dataset = build_dataset(&task, 77, 12).unwrap();
        let mut p = BaselinePredictor::new(
            "sgd",
            ModelKind::LinearSgd,
            Hyperparams::default(),
            0.2,
            77,
        );
        let i = 10;
        let outcome = p.predict(
            &dataset.demonstrations[..i],
            &dataset.demonstrations[i].input,
            &task,
            i,
        );
        assert!(outcome.is_success(), "{:?}", outcome.failure_reason);
    }

    #[test]
    fn predictor_config_toml_round_trip() {
        let toml_text = r#"
id = "gemini"
kind = "remote_chat"
endpoint_url = "http://localhost:1/v1/chat/completions"
model_name = "gemini-1.5-flash"
api_key_env = "GEMINI_API_KEY"
"#;
        let cfg: PredictorConfig = toml::from_str(toml_text).unwrap();
        assert_eq!(cfg.max_retries, 5);
        match &cfg.kind {
            PredictorKind::RemoteChat { temperature, rate_limit_per_minute, .. } => {
                assert_eq!(*temperature, 0.0);
                assert_eq!(*rate_limit_per_minute, 60);
            }
            other => panic!("unexpected kind {other:?}"),
        }
        let back = toml::to_string(&cfg).unwrap();
        let again: PredictorConfig = toml::from_str(&back).unwrap();
        assert_eq!(cfg, again);
    }
}
