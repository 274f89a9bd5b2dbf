//! Seeded generation of demonstration sequences and their ground-truth
//! targets.
//!
//! Inputs are sampled uniformly on [-100, 100) and rounded to two decimal
//! places; the rounded value is canonical, so prompts, baselines, and stored
//! datasets all see exactly the same numbers. Regenerating a dataset from
//! the same (task, seed, n) reproduces it bit for bit.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, NumericArray};
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("dataset needs at least 2 demonstrations, got {0}")]
    TooFewDemonstrations(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("stored target for demonstration {index} does not match its input")]
    TargetMismatch { index: usize },
}

/// Which function is being learned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    PNorm { p: f64 },
    NuclearNorm,
    TopKSingularValues { k: usize },
}

/// Task plus the input shape it operates on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(flatten)]
    pub kind: TaskKind,
    pub rows: usize,
    pub cols: usize,
}

impl TaskSpec {
    pub fn pnorm(p: f64, dim: usize) -> Self {
        Self { kind: TaskKind::PNorm { p }, rows: dim, cols: 1 }
    }

    pub fn nuclear_norm(rows: usize, cols: usize) -> Self {
        Self { kind: TaskKind::NuclearNorm, rows, cols }
    }

    pub fn top_k(k: usize, rows: usize, cols: usize) -> Self {
        Self { kind: TaskKind::TopKSingularValues { k }, rows, cols }
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of values the target (and any prediction) must carry.
    pub fn output_len(&self) -> usize {
        match self.kind {
            TaskKind::PNorm { .. } | TaskKind::NuclearNorm => 1,
            TaskKind::TopKSingularValues { k } => k,
        }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(DatagenError::InvalidTask(format!(
                "input shape {}x{} has an empty dimension",
                self.rows, self.cols
            )));
        }
        match self.kind {
            TaskKind::PNorm { p } => {
                if !(p > 0.0) || !p.is_finite() {
                    return Err(DatagenError::InvalidTask(format!("p must be positive, got {p}")));
                }
                if self.cols != 1 {
                    return Err(DatagenError::InvalidTask(format!(
                        "p-norm task requires a vector input (cols = 1), got {}x{}",
                        self.rows, self.cols
                    )));
                }
            }
            TaskKind::NuclearNorm => {}
            TaskKind::TopKSingularValues { k } => {
                let max = self.rows.min(self.cols);
                if k == 0 || k > max {
                    return Err(DatagenError::InvalidTask(format!(
                        "k = {k} out of range 1..={max} for shape {}x{}",
                        self.rows, self.cols
                    )));
                }
            }
        }
        Ok(())
    }

    /// Exact target for one input, computed by the linalg kernels.
    pub fn ground_truth(&self, input: &NumericArray) -> Result<Vec<f64>, LinalgError> {
        match self.kind {
            TaskKind::PNorm { p } => Ok(vec![linalg::pnorm(input, p)?]),
            TaskKind::NuclearNorm => Ok(vec![linalg::nuclear_norm(input)?]),
            TaskKind::TopKSingularValues { k } => linalg::top_k_singular_values(input, k),
        }
    }

    /// Short handle used in logs and reports, e.g. `pnorm(p=2)@5x1`.
    pub fn label(&self) -> String {
        let head = match &self.kind {
            TaskKind::PNorm { p } => format!("pnorm(p={p})"),
            TaskKind::NuclearNorm => "nuclear_norm".to_string(),
            TaskKind::TopKSingularValues { k } => format!("top{k}_singular_values"),
        };
        format!("{head}@{}x{}", self.rows, self.cols)
    }
}

/// One (input, target) pair. The target is recomputable from the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: NumericArray,
    pub target: Vec<f64>,
}

/// Ordered demonstrations for one task, reproducible from (task, seed, n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: TaskSpec,
    pub seed: u64,
    pub demonstrations: Vec<Demonstration>,
}

/// Lower/upper bound of the sampled entry range.
pub const ENTRY_RANGE: (f64, f64) = (-100.0, 100.0);
const ROUND_SCALE: f64 = 100.0;

/// Samples one input of the given shape: entries uniform on [-100, 100),
/// rounded to 2 decimal places (ties away from zero). Row-major draw order.
pub fn generate_input(rng: &mut SplitMix64, shape: (usize, usize)) -> NumericArray {
    let (rows, cols) = shape;
    let data = (0..rows * cols)
        .map(|_| {
            let raw = rng.uniform_in(ENTRY_RANGE.0, ENTRY_RANGE.1);
            let rounded = (raw * ROUND_SCALE).round() / ROUND_SCALE;
            // Normalize -0.0 so rendering never prints a negative zero.
            if rounded == 0.0 {
                0.0
            } else {
                rounded
            }
        })
        .collect();
    NumericArray::matrix(rows, cols, data).expect("sampled entries are finite")
}

/// Builds `n` demonstrations for `task` from `seed`.
pub fn build_dataset(task: &TaskSpec, seed: u64, n: usize) -> Result<Dataset, DatagenError> {
    task.validate()?;
    if n < 2 {
        return Err(DatagenError::TooFewDemonstrations(n));
    }
    let mut rng = SplitMix64::new(seed);
    let mut demonstrations = Vec::with_capacity(n);
    for _ in 0..n {
        let input = generate_input(&mut rng, task.input_shape());
        let target = task.ground_truth(&input)?;
        demonstrations.push(Demonstration { input, target });
    }
    Ok(Dataset { task: task.clone(), seed, demonstrations })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.demonstrations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demonstrations.is_empty()
    }

    /// Recomputes every target from its stored input and checks for an exact
    /// match; guards imported files against tampering or drift.
    pub fn verify(&self) -> Result<(), DatagenError> {
        for (index, demo) in self.demonstrations.iter().enumerate() {
            let expect = self.task.ground_truth(&demo.input)?;
            if expect != demo.target {
                return Err(DatagenError::TargetMismatch { index });
            }
        }
        Ok(())
    }

    /// Writes the dataset as pretty JSON with full round-trip float precision.
    pub fn export<W: Write>(&self, writer: W) -> Result<(), DatagenError> {
        let mut w = BufWriter::new(writer);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn export_to_path(&self, path: &Path) -> Result<(), DatagenError> {
        self.export(std::fs::File::create(path)?)
    }

    /// Reads a dataset back and verifies target recomputability.
    pub fn import<R: Read>(reader: R) -> Result<Self, DatagenError> {
        let dataset: Dataset = serde_json::from_reader(BufReader::new(reader))?;
        dataset.task.validate()?;
        dataset.verify()?;
        Ok(dataset)
    }

    pub fn import_from_path(path: &Path) -> Result<Self, DatagenError> {
        Self::import(std::fs::File::open(path)?)
    }
}
