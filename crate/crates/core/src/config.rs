//! Run configuration: a versioned TOML document describing one experiment.
//!
//! The resolved form of the config (defaults filled in, output directory
//! stripped) is written next to the results and hashed; that digest stamps
//! every summary so results can be traced back to the exact experiment
//! definition.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baseline::{Hyperparams, ModelKind};
use crate::datagen::TaskSpec;
use crate::eval::TailWindow;
use crate::predictor::{PredictorConfig, PredictorKind};
use crate::prompt::PromptConfig;
use crate::rng;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("schema_version {got} is not supported (expected {SCHEMA_VERSION})")]
    SchemaVersion { got: u32 },
    #[error("invalid key {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("predictor {id}: api key environment variable {var} is not set")]
    MissingApiKey { id: String, var: String },
    #[error("predictor {id}: replay file {path} does not exist")]
    MissingReplayFile { id: String, path: PathBuf },
    #[error("duplicate predictor/baseline id {id}")]
    DuplicateId { id: String },
}

fn default_n_examples() -> usize {
    50
}

fn default_repeats() -> usize {
    1
}

fn default_holdout_fraction() -> f64 {
    0.2
}

/// One trainable baseline entry. The learning rate and init seed inside
/// `hyper` are ignored: the rate comes from grid search and the seed is
/// derived per trial from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub hyper: Hyperparams,
    #[serde(default = "default_holdout_fraction")]
    pub holdout_fraction: f64,
    /// Dump final weights and loss curves per trial into the results dir.
    #[serde(default)]
    pub dump: bool,
}

impl BaselineConfig {
    pub fn effective_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| self.kind.label().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub task: TaskSpec,
    pub seed: u64,
    #[serde(default = "default_n_examples")]
    pub n_examples: usize,
    #[serde(default)]
    pub predictors: Vec<PredictorConfig>,
    #[serde(default)]
    pub baselines: Vec<BaselineConfig>,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub tail_window: TailWindow,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Where results go; omitted from the resolved document so reruns into
    /// different directories stay byte-identical. A CLI flag overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parses a config file and anchors relative replay paths to its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for predictor in &mut cfg.predictors {
            if let PredictorKind::Replay { path: replay } = &mut predictor.kind {
                if replay.is_relative() {
                    *replay = base.join(&*replay);
                }
            }
        }
        Ok(cfg)
    }

    /// Structural and environmental validation: runs before any trial so a
    /// bad config fails fast with the offending key named.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion { got: self.schema_version });
        }
        self.task.validate().map_err(|e| ConfigError::Invalid {
            key: "task",
            reason: e.to_string(),
        })?;
        if self.n_examples < 2 {
            return Err(ConfigError::Invalid {
                key: "n_examples",
                reason: format!("need at least 2, got {}", self.n_examples),
            });
        }
        if self.repeats == 0 {
            return Err(ConfigError::Invalid {
                key: "repeats",
                reason: "must be at least 1".into(),
            });
        }
        if self.predictors.is_empty() && self.baselines.is_empty() {
            return Err(ConfigError::Invalid {
                key: "predictors",
                reason: "configure at least one predictor or baseline".into(),
            });
        }
        self.prompt.validate().map_err(|e| ConfigError::Invalid {
            key: "prompt",
            reason: e.to_string(),
        })?;

        let mut ids = std::collections::HashSet::new();
        for predictor in &self.predictors {
            if !ids.insert(predictor.id.clone()) {
                return Err(ConfigError::DuplicateId { id: predictor.id.clone() });
            }
            if predictor.max_retries == 0 {
                return Err(ConfigError::Invalid {
                    key: "predictors.max_retries",
                    reason: format!("{}: must be at least 1", predictor.id),
                });
            }
            match &predictor.kind {
                PredictorKind::RemoteChat { endpoint_url, model_name, api_key_env, .. } => {
                    if endpoint_url.is_empty() || model_name.is_empty() {
                        return Err(ConfigError::Invalid {
                            key: "predictors",
                            reason: format!(
                                "{}: remote_chat requires endpoint_url and model_name",
                                predictor.id
                            ),
                        });
                    }
                    if std::env::var(api_key_env).is_err() {
                        return Err(ConfigError::MissingApiKey {
                            id: predictor.id.clone(),
                            var: api_key_env.clone(),
                        });
                    }
                }
                PredictorKind::Replay { path } => {
                    if !path.exists() {
                        return Err(ConfigError::MissingReplayFile {
                            id: predictor.id.clone(),
                            path: path.clone(),
                        });
                    }
                }
                PredictorKind::NoisyOracle { sigma } => {
                    if !sigma.is_finite() || *sigma < 0.0 {
                        return Err(ConfigError::Invalid {
                            key: "predictors.sigma",
                            reason: format!("{}: sigma must be non-negative", predictor.id),
                        });
                    }
                }
                PredictorKind::Oracle | PredictorKind::MeanOfContext => {}
            }
        }
        for baseline in &self.baselines {
            let id = baseline.effective_id();
            if !ids.insert(id.clone()) {
                return Err(ConfigError::DuplicateId { id });
            }
            if !(baseline.holdout_fraction > 0.0 && baseline.holdout_fraction < 1.0) {
                return Err(ConfigError::Invalid {
                    key: "baselines.holdout_fraction",
                    reason: format!("{id}: must be in (0, 1)"),
                });
            }
            if baseline.kind == ModelKind::SmallCnn
                && (self.task.cols < baseline.hyper.kernel
                    || self.task.rows < baseline.hyper.kernel)
            {
                return Err(ConfigError::Invalid {
                    key: "baselines",
                    reason: format!(
                        "{id}: cnn kernel {} does not fit input {}x{}",
                        baseline.hyper.kernel, self.task.rows, self.task.cols
                    ),
                });
            }
        }
        Ok(())
    }

    /// Canonical resolved document: every default made explicit, output
    /// directory stripped, RNG constants recorded for cross-implementation
    /// reproduction. This exact text is what gets hashed.
    pub fn resolved_document(&self) -> Result<String, ConfigError> {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let body = toml::to_string_pretty(&canonical).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<resolved config>"),
            message: e.to_string(),
        })?;
        Ok(format!(
            "# Resolved experiment configuration.\n\
             # RNG: splitmix64 (state += {gamma:#018x};\n\
             #       z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9;\n\
             #       z = (z ^ (z >> 27)) * 0x94d049bb133111eb;\n\
             #       z ^ (z >> 31)); f64 = (u >> 11) * 2^-53.\n\
             # Derived seeds: mix64(mix64(root + mix64(stream)) + index), wrapping.\n\
             {body}",
            gamma = rng::GAMMA,
        ))
    }

    /// SHA-256 hex digest of the resolved document.
    pub fn digest(&self) -> Result<String, ConfigError> {
        Ok(sha256_hex(self.resolved_document()?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const MINIMAL: &str = r#"
schema_version = 1
seed = 42

[task]
kind = "nuclear_norm"
rows = 5
cols = 5

[[predictors]]
id = "oracle"
kind = "oracle"
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        assert_eq!(cfg.n_examples, 50);
        assert_eq!(cfg.repeats, 1);
        assert_eq!(cfg.tail_window, TailWindow::LastK(25));
        assert_eq!(cfg.prompt.target_decimals, 4);
        cfg.validate().unwrap();
    }

    #[test]
    fn resolved_document_round_trips_and_hashes_stably() {
        let cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        let doc = cfg.resolved_document().unwrap();
        let reparsed: RunConfig = toml::from_str(&doc).unwrap();
        assert_eq!(cfg, reparsed);
        assert_eq!(cfg.digest().unwrap(), cfg.digest().unwrap());
        assert_eq!(cfg.digest().unwrap().len(), 64);
    }

    #[test]
    fn output_dir_does_not_change_digest() {
        let mut a: RunConfig = toml::from_str(MINIMAL).unwrap();
        let mut b: RunConfig = toml::from_str(MINIMAL).unwrap();
        a.output_dir = Some(PathBuf::from("/tmp/run-a"));
        b.output_dir = Some(PathBuf::from("/tmp/run-b"));
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn seed_changes_digest() {
        let a: RunConfig = toml::from_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seed = 43;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn schema_version_is_checked() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::SchemaVersion { got: 2 })));
    }

    #[test]
    fn missing_api_key_is_caught_before_running() {
        let text = format!(
            "{MINIMAL}\n[[predictors]]\nid = \"remote\"\nkind = \"remote_chat\"\n\
             endpoint_url = \"http://localhost:9/v1/chat/completions\"\n\
             model_name = \"m\"\napi_key_env = \"MATFN_TEST_SURELY_UNSET_KEY\"\n"
        );
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::MissingApiKey { .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = format!("{MINIMAL}\n[[predictors]]\nid = \"oracle\"\nkind = \"oracle\"\n");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::DuplicateId { .. })));
    }

    #[test]
    fn empty_predictor_set_rejected() {
        let text = r#"
schema_version = 1
seed = 1

[task]
kind = "p_norm"
p = 2.0
rows = 5
cols = 1
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid { key: "predictors", .. })));
    }

    #[test]
    fn replay_paths_resolve_relative_to_config_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("replies.txt"), "1.0;\n---\n").unwrap();
        let config_path = dir.path().join("run.toml");
        let mut file = std::fs::File::create(&config_path).unwrap();
        write!(
            file,
            "{MINIMAL}\n[[predictors]]\nid = \"replay\"\nkind = \"replay\"\npath = \"replies.txt\"\n"
        )
        .unwrap();
        drop(file);
        let cfg = RunConfig::load(&config_path).unwrap();
        cfg.validate().unwrap();
        match &cfg.predictors[1].kind {
            PredictorKind::Replay { path } => assert!(path.is_absolute() || path.exists()),
            other => panic!("unexpected kind {other:?}"),
        }
    }

    #[test]
    fn baseline_entries_parse() {
        let text = format!(
            "{MINIMAL}\n[[baselines]]\nkind = \"linear_sgd\"\n\n\
             [[baselines]]\nkind = \"small_cnn\"\nid = \"cnn8\"\n"
        );
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.baselines[0].effective_id(), "linear_sgd");
        assert_eq!(cfg.baselines[1].effective_id(), "cnn8");
        assert_eq!(cfg.baselines[0].holdout_fraction, 0.2);
    }
}
