//! Run orchestration, result persistence, and report rendering.
//!
//! A results directory holds:
//!
//! * `resolved_config.toml` — the canonical config, hashed into the digest
//! * `trials.jsonl`         — one record per trial, appended as trials finish
//! * `summary.json` / `summary.txt`
//! * `rmse.svg`, `bars.svg` — when plots are requested
//! * `baseline_dumps/`      — optional per-trial weights and loss curves
//!
//! Every float is serialized with round-trip precision and nothing
//! wall-clock-dependent is written, so identical offline configs produce
//! byte-identical files.

pub mod svg;

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{sha256_hex, ConfigError, RunConfig};
use crate::datagen::{build_dataset, DatagenError, Dataset};
use crate::eval::{
    run_experiment_observed, tail_average, PredictorSeries, RunResult, TailWindow, TrialRecord,
};
use crate::predictor::{build_predictor, BaselinePredictor, Predictor, PredictorError};
use crate::rng::{derive_seed, STREAM_REPEAT};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
pub const TRIALS_FILE: &str = "trials.jsonl";
pub const SUMMARY_JSON_FILE: &str = "summary.json";
pub const SUMMARY_TEXT_FILE: &str = "summary.txt";
pub const RMSE_PLOT_FILE: &str = "rmse.svg";
pub const BARS_PLOT_FILE: &str = "bars.svg";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("results directory {0} is locked by another run (remove .lock if stale)")]
    Locked(PathBuf),
    #[error("malformed record in {path} line {line}: {message}")]
    MalformedRecord { path: PathBuf, line: usize, message: String },
    #[error("stored digest {stored} does not match re-hashed config {actual}")]
    DigestMismatch { stored: String, actual: String },
    #[error("no trial records found in {0}")]
    NoRecords(PathBuf),
    #[error("no valid rmse values to plot")]
    NothingToPlot,
    #[error("trial {index} is not valid for every predictor; valid choices: {alternatives:?}")]
    InvalidBarTrial { index: usize, alternatives: Vec<usize> },
}

/// Top-level failure of a run or report command.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

/// Advisory lock: a `.lock` file created exclusively, removed on drop.
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(dir: &Path) -> Result<Self, ReportError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(ReportError::Locked(dir.to_path_buf()))
            }
            Err(source) => Err(ReportError::Io { path, source }),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// One persisted line of `trials.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub repeat: usize,
    #[serde(flatten)]
    pub record: TrialRecord,
}

/// What a completed run hands back to the caller.
pub struct RunOutput {
    pub output_dir: PathBuf,
    pub config_digest: String,
    pub results: Vec<RunResult>,
}

/// Builds the dataset described by the config for repeat `repeat`.
///
/// Repeat 0 uses the config seed itself; later repeats derive their seed
/// from it so every repeat is reproducible in isolation.
pub fn dataset_for_repeat(cfg: &RunConfig, repeat: usize) -> Result<Dataset, DatagenError> {
    let seed = if repeat == 0 {
        cfg.seed
    } else {
        derive_seed(cfg.seed, STREAM_REPEAT, repeat as u64)
    };
    build_dataset(&cfg.task, seed, cfg.n_examples)
}

fn build_all_predictors(
    cfg: &RunConfig,
    run_seed: u64,
    output_dir: &Path,
) -> Result<Vec<Box<dyn Predictor>>, HarnessError> {
    let mut predictors: Vec<Box<dyn Predictor>> = Vec::new();
    for predictor_cfg in &cfg.predictors {
        // Replay paths were anchored at config load; base_dir is moot here.
        predictors.push(build_predictor(predictor_cfg, run_seed, &cfg.prompt, Path::new("."))?);
    }
    for baseline_cfg in &cfg.baselines {
        let mut baseline = BaselinePredictor::new(
            &baseline_cfg.effective_id(),
            baseline_cfg.kind,
            baseline_cfg.hyper.clone(),
            baseline_cfg.holdout_fraction,
            run_seed,
        );
        if baseline_cfg.dump {
            baseline.dump_dir = Some(output_dir.join("baseline_dumps"));
        }
        predictors.push(Box::new(baseline));
    }
    Ok(predictors)
}

/// Executes a validated config into `output_dir`: writes the resolved config,
/// streams trial records, and writes the summary. Completes even when
/// individual trials fail; only config and I/O problems abort.
pub fn execute_run(cfg: &RunConfig, output_dir: &Path) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    fs::create_dir_all(output_dir).map_err(io_err(output_dir))?;
    let _lock = LockGuard::acquire(output_dir)?;

    let resolved = cfg.resolved_document()?;
    let digest = sha256_hex(resolved.as_bytes());
    let resolved_path = output_dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&resolved_path, &resolved).map_err(io_err(&resolved_path))?;

    let trials_path = output_dir.join(TRIALS_FILE);
    let mut trials_file = File::create(&trials_path).map_err(io_err(&trials_path))?;

    let mut results = Vec::with_capacity(cfg.repeats);
    for repeat in 0..cfg.repeats {
        let dataset = dataset_for_repeat(cfg, repeat)?;
        let run_seed = dataset.seed;
        let mut predictors = build_all_predictors(cfg, run_seed, output_dir)?;
        let mut write_error: Option<std::io::Error> = None;
        let result = run_experiment_observed(
            &dataset,
            &mut predictors,
            cfg.tail_window,
            &digest,
            &mut |record| {
                let row = TrialRow { repeat, record: record.clone() };
                let line = serde_json::to_string(&row).expect("trial rows serialize");
                if let Err(e) =
                    trials_file.write_all(line.as_bytes()).and_then(|_| {
                        trials_file.write_all(b"\n").and_then(|_| trials_file.flush())
                    })
                {
                    write_error.get_or_insert(e);
                }
            },
        );
        if let Some(source) = write_error {
            return Err(ReportError::Io { path: trials_path.clone(), source }.into());
        }
        results.push(result);
    }

    write_summary(output_dir, &results, &digest)?;
    Ok(RunOutput { output_dir: output_dir.to_path_buf(), config_digest: digest, results })
}

// ── Summaries ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub predictor_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_mean_rmse: Option<f64>,
    pub invalid_count: usize,
    pub window_from: usize,
    pub window_to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub schema_version: u32,
    pub config_digest: String,
    pub task: String,
    pub n_examples: usize,
    pub window: TailWindow,
    pub repeats: usize,
    /// Sorted ascending by tail mean RMSE; rows without a mean sort last.
    pub rows: Vec<SummaryRow>,
}

/// Aggregates one or more repeats into the summary table: means are averaged
/// across repeats, invalid counts summed.
pub fn summary_table(results: &[RunResult]) -> SummaryTable {
    let first = &results[0];
    let mut rows = Vec::new();
    for (idx, series) in first.series.iter().enumerate() {
        let mut means = Vec::new();
        let mut invalid = 0usize;
        for result in results {
            let aggregate = &result.series[idx].aggregate;
            if let Some(m) = aggregate.tail_mean_rmse {
                means.push(m);
            }
            invalid += aggregate.invalid_count;
        }
        rows.push(SummaryRow {
            predictor_id: series.predictor_id.clone(),
            tail_mean_rmse: if means.is_empty() {
                None
            } else {
                Some(means.iter().sum::<f64>() / means.len() as f64)
            },
            invalid_count: invalid,
            window_from: series.aggregate.window_from,
            window_to: series.aggregate.window_to,
        });
    }
    rows.sort_by(|a, b| match (a.tail_mean_rmse, b.tail_mean_rmse) {
        (Some(x), Some(y)) => x.partial_cmp(&y).expect("means are finite"),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    SummaryTable {
        schema_version: 1,
        config_digest: first.config_digest.clone(),
        task: first.task_label.clone(),
        n_examples: first.n_examples,
        window: first.window,
        repeats: results.len(),
        rows,
    }
}

/// Human-readable rendering of the summary table.
pub fn render_summary_text(table: &SummaryTable) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "task: {}  n = {}  window = {} (trials {}..{})  repeats = {}\n",
        table.task,
        table.n_examples,
        table.window,
        table.rows.first().map_or(0, |r| r.window_from),
        table.rows.first().map_or(0, |r| r.window_to),
        table.repeats,
    ));
    out.push_str(&format!("config digest: {}\n\n", table.config_digest));
    let id_width =
        table.rows.iter().map(|r| r.predictor_id.len()).max().unwrap_or(9).max(9);
    out.push_str(&format!(
        "{:<id_width$}  {:>16}  {:>14}\n",
        "predictor", "tail mean rmse", "invalid trials"
    ));
    for row in &table.rows {
        let mean = match row.tail_mean_rmse {
            Some(m) if m >= 1e6 => format!("{m:.6e}"),
            Some(m) => format!("{m:.6}"),
            None => "n/a".to_string(),
        };
        out.push_str(&format!(
            "{:<id_width$}  {:>16}  {:>14}\n",
            row.predictor_id, mean, row.invalid_count
        ));
    }
    out
}

pub fn write_summary(
    dir: &Path,
    results: &[RunResult],
    digest: &str,
) -> Result<SummaryTable, ReportError> {
    let mut table = summary_table(results);
    table.config_digest = digest.to_string();
    let json_path = dir.join(SUMMARY_JSON_FILE);
    let mut json = serde_json::to_vec_pretty(&table).expect("summary serializes");
    json.push(b'\n');
    fs::write(&json_path, json).map_err(io_err(&json_path))?;
    let text_path = dir.join(SUMMARY_TEXT_FILE);
    fs::write(&text_path, render_summary_text(&table)).map_err(io_err(&text_path))?;
    Ok(table)
}

// ── Loading persisted results ───────────────────────────────────────

pub struct LoadedResults {
    pub config: RunConfig,
    pub config_digest: String,
    pub results: Vec<RunResult>,
}

/// Reads a results directory back into memory, re-hashing the stored config
/// and recomputing aggregates with `window` (or the config's window).
///
/// A crashed run leaves a valid prefix of `trials.jsonl`; loading tolerates
/// that and reports on whatever completed.
pub fn load_results(
    dir: &Path,
    window_override: Option<TailWindow>,
) -> Result<LoadedResults, HarnessError> {
    let resolved_path = dir.join(RESOLVED_CONFIG_FILE);
    let resolved_text =
        fs::read_to_string(&resolved_path).map_err(io_err(&resolved_path))?;
    let config: RunConfig = toml::from_str(&resolved_text).map_err(|e| ConfigError::Parse {
        path: resolved_path.clone(),
        message: e.to_string(),
    })?;
    let actual_digest = sha256_hex(resolved_text.as_bytes());

    // Cross-check against the summary's stored digest when present.
    let summary_path = dir.join(SUMMARY_JSON_FILE);
    if let Ok(text) = fs::read_to_string(&summary_path) {
        if let Ok(stored) = serde_json::from_str::<SummaryTable>(&text) {
            if stored.config_digest != actual_digest {
                return Err(ReportError::DigestMismatch {
                    stored: stored.config_digest,
                    actual: actual_digest,
                }
                .into());
            }
        }
    }

    let trials_path = dir.join(TRIALS_FILE);
    let file = File::open(&trials_path).map_err(io_err(&trials_path))?;
    let mut rows: Vec<TrialRow> = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&trials_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: TrialRow =
            serde_json::from_str(&line).map_err(|e| ReportError::MalformedRecord {
                path: trials_path.clone(),
                line: line_no + 1,
                message: e.to_string(),
            })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ReportError::NoRecords(trials_path).into());
    }

    let window = window_override.unwrap_or(config.tail_window);
    let results = results_from_rows(&config, &actual_digest, &rows, window);
    Ok(LoadedResults { config, config_digest: actual_digest, results })
}

/// Groups persisted rows back into per-repeat results, preserving predictor
/// order of first appearance.
pub fn results_from_rows(
    config: &RunConfig,
    digest: &str,
    rows: &[TrialRow],
    window: TailWindow,
) -> Vec<RunResult> {
    let max_repeat = rows.iter().map(|r| r.repeat).max().unwrap_or(0);
    let mut results = Vec::with_capacity(max_repeat + 1);
    for repeat in 0..=max_repeat {
        let mut order: Vec<String> = Vec::new();
        let mut per_predictor: std::collections::HashMap<String, Vec<TrialRecord>> =
            std::collections::HashMap::new();
        for row in rows.iter().filter(|r| r.repeat == repeat) {
            let id = row.record.predictor_id.clone();
            if !per_predictor.contains_key(&id) {
                order.push(id.clone());
            }
            per_predictor.entry(id).or_default().push(row.record.clone());
        }
        let series = order
            .into_iter()
            .map(|id| {
                let records = per_predictor.remove(&id).unwrap_or_default();
                let aggregate = tail_average(&records, &window);
                PredictorSeries { predictor_id: id, records, aggregate }
            })
            .collect();
        results.push(RunResult {
            config_digest: digest.to_string(),
            task_label: config.task.label(),
            n_examples: config.n_examples,
            window,
            series,
        });
    }
    results
}

/// Renders summary (and optionally plots) for a stored results directory.
/// Returns the paths written.
pub fn render_reports(
    dir: &Path,
    window_override: Option<TailWindow>,
    plots: bool,
    bar_trials: Option<&[usize]>,
) -> Result<Vec<PathBuf>, HarnessError> {
    let loaded = load_results(dir, window_override)?;
    let mut written = Vec::new();

    write_summary(dir, &loaded.results, &loaded.config_digest)?;
    written.push(dir.join(SUMMARY_JSON_FILE));
    written.push(dir.join(SUMMARY_TEXT_FILE));

    if plots {
        let first = &loaded.results[0];
        let rmse_path = dir.join(RMSE_PLOT_FILE);
        svg::emit_rmse_plot(first, &rmse_path)?;
        written.push(rmse_path);

        let chosen: Vec<usize> = match bar_trials {
            Some(list) => list.to_vec(),
            None => default_bar_trials(first),
        };
        if !chosen.is_empty() {
            let bars_path = dir.join(BARS_PLOT_FILE);
            svg::emit_prediction_bars(first, &chosen, &bars_path)?;
            written.push(bars_path);
        }
    }
    Ok(written)
}

/// Three deterministic panel choices: the first, middle, and last trial that
/// every predictor answered validly.
pub fn default_bar_trials(result: &RunResult) -> Vec<usize> {
    let candidates = valid_for_all(result);
    match candidates.len() {
        0 => Vec::new(),
        1 => vec![candidates[0]],
        2 => candidates.clone(),
        n => {
            let mut picks = vec![candidates[0], candidates[n / 2], candidates[n - 1]];
            picks.dedup();
            picks
        }
    }
}

pub(crate) fn valid_for_all(result: &RunResult) -> Vec<usize> {
    let n_trials = result.n_examples.saturating_sub(1);
    (1..=n_trials)
        .filter(|&i| {
            result.series.iter().all(|s| {
                s.records
                    .iter()
                    .any(|r| r.trial_index == i && r.valid)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Aggregate;

    fn record(id: &str, i: usize, rmse: f64) -> TrialRecord {
        TrialRecord {
            trial_index: i,
            predictor_id: id.into(),
            prediction: Some(vec![rmse]),
            truth: vec![0.0],
            rmse: Some(rmse),
            attempts: 1,
            valid: true,
            failure_reason: None,
        }
    }

    fn result_with(series: Vec<PredictorSeries>) -> RunResult {
        RunResult {
            config_digest: "d".into(),
            task_label: "t".into(),
            n_examples: 4,
            window: TailWindow::LastK(3),
            series,
        }
    }

    fn series(id: &str, rmses: &[f64]) -> PredictorSeries {
        let records: Vec<TrialRecord> = rmses
            .iter()
            .enumerate()
            .map(|(idx, &r)| record(id, idx + 1, r))
            .collect();
        let aggregate = tail_average(&records, &TailWindow::LastK(3));
        PredictorSeries { predictor_id: id.into(), records, aggregate }
    }

    #[test]
    fn summary_sorts_ascending_with_na_last() {
        let mut bad = series("bad", &[]);
        bad.aggregate = Aggregate {
            tail_mean_rmse: None,
            window_from: 1,
            window_to: 3,
            invalid_count: 3,
        };
        let results =
            vec![result_with(vec![series("slow", &[5.0, 5.0, 5.0]), bad, series("fast", &[1.0, 1.0, 1.0])])];
        let table = summary_table(&results);
        let ids: Vec<&str> = table.rows.iter().map(|r| r.predictor_id.as_str()).collect();
        assert_eq!(ids, vec!["fast", "slow", "bad"]);
        assert_eq!(table.rows[2].tail_mean_rmse, None);
    }

    #[test]
    fn summary_averages_across_repeats() {
        let results = vec![
            result_with(vec![series("p", &[1.0, 1.0, 1.0])]),
            result_with(vec![series("p", &[3.0, 3.0, 3.0])]),
        ];
        let table = summary_table(&results);
        assert_eq!(table.repeats, 2);
        assert_eq!(table.rows[0].tail_mean_rmse, Some(2.0));
    }

    #[test]
    fn lock_guard_is_exclusive_and_releases() {
        let dir = tempfile::tempdir().unwrap();
        let guard = LockGuard::acquire(dir.path()).unwrap();
        assert!(matches!(LockGuard::acquire(dir.path()), Err(ReportError::Locked(_))));
        drop(guard);
        LockGuard::acquire(dir.path()).unwrap();
    }

    #[test]
    fn trial_rows_round_trip_jsonl() {
        let row = TrialRow { repeat: 0, record: record("p", 3, 1.25) };
        let line = serde_json::to_string(&row).unwrap();
        let back: TrialRow = serde_json::from_str(&line).unwrap();
        assert_eq!(row, back);
    }

    #[test]
    fn default_bar_trials_are_first_middle_last() {
        let result = result_with(vec![series("p", &[1.0, 2.0, 3.0])]);
        assert_eq!(default_bar_trials(&result), vec![1, 2, 3]);
    }
}
