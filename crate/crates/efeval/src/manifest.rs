//! Run manifest: a line-delimited record log that makes runs auditable and
//! resumable.
//!
//! Each line is one JSON object tagged by `kind`. A `round_done` record marks
//! a consistent boundary: everything the next round needs (checkpoints,
//! gradient-sum caches, accuracy caches, backfilled regression samples) has
//! been persisted by then. Resume truncates the log to the last such boundary
//! and reloads state from the index; timing fields all end in `_nanos` so
//! determinism checks can strip them uniformly.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{AppError, Result};

/// Outcome of the per-class estimate attempt at one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateStatus {
    /// A calibrated prediction was produced.
    Ok,
    /// Fewer than two usable calibration samples.
    Insufficient,
    /// Calibration samples had no spread in ef.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    RunStart {
        config: RunConfig,
        config_hash: u64,
        dataset_id: String,
        class_count: usize,
        feature_dim: usize,
        layer_dims: Vec<usize>,
        split_path: String,
    },
    RoundTrained {
        round: usize,
        checkpoint: String,
        delta: Option<String>,
        train_nanos: u64,
    },
    /// Gradient-sum cache index entry: `file` holds the class-`class` sum
    /// over evaluation set `eval_round`, computed under the network of
    /// checkpoint `net_round`. Later entries for the same (net_round, class)
    /// supersede earlier ones as the evaluation set grows.
    GradsumCache {
        eval_round: usize,
        net_round: usize,
        class: usize,
        file: String,
        sample_count: usize,
        failed_count: usize,
        succeeded_count: usize,
    },
    /// Correct-count cache: class-`class` hits of checkpoint `net_round` on
    /// evaluation set `eval_round`.
    AccCache {
        eval_round: usize,
        net_round: usize,
        class: usize,
        correct: usize,
        total: usize,
    },
    /// One calibration sample: effect of update `update` on evaluation set
    /// `eval_round`, paired with the measured accuracy change.
    EfSample {
        eval_round: usize,
        update: usize,
        class: usize,
        ef: f64,
        acc_delta: f64,
    },
    Estimate {
        round: usize,
        class: usize,
        ef: f64,
        status: EstimateStatus,
        predicted: Option<f64>,
        slope: Option<f64>,
        intercept: Option<f64>,
        r2: Option<f64>,
        n_used: usize,
        n_removed: usize,
        estimate_nanos: u64,
    },
    Measured {
        round: usize,
        class: usize,
        acc_before: f64,
        acc_after: f64,
        acc_delta: f64,
        total: usize,
        full_test_nanos: u64,
    },
    RoundDone {
        round: usize,
    },
    RunDone {
        rounds: usize,
    },
}

/// Append-only view of a manifest file.
#[derive(Debug, Clone)]
pub struct Manifest {
    path: PathBuf,
}

impl Manifest {
    pub fn at(path: impl Into<PathBuf>) -> Self {
        Manifest { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn exists(&self) -> bool {
        self.path.exists()
    }

    pub fn append(&self, record: &Record) -> Result<()> {
        let mut line = serde_json::to_string(record)
            .map_err(|e| AppError::Manifest(format!("serializing record: {e}")))?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| AppError::io(&self.path, e))?;
        file.write_all(line.as_bytes())
            .and_then(|()| file.flush())
            .map_err(|e| AppError::io(&self.path, e))
    }

    /// Reads every record, rejecting any malformed line.
    pub fn read_all(&self) -> Result<Vec<Record>> {
        let text = fs::read_to_string(&self.path).map_err(|e| AppError::io(&self.path, e))?;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(line).map_err(|e| {
                AppError::Manifest(format!(
                    "{} line {}: {e}",
                    self.path.display(),
                    lineno + 1
                ))
            })?;
            records.push(rec);
        }
        Ok(records)
    }

    /// Drops any trailing records after the last `round_done` marker (for
    /// example after a mid-round interrupt), including unparsable trailing
    /// lines. Rewrites the file atomically and returns the surviving records
    /// together with the last completed round, or `None` if no round ever
    /// completed.
    pub fn truncate_to_last_round_done(&self) -> Result<(Vec<Record>, Option<usize>)> {
        let text = fs::read_to_string(&self.path).map_err(|e| AppError::io(&self.path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        let mut parsed: Vec<(usize, Record)> = Vec::new();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Record>(line) {
                Ok(rec) => parsed.push((i + 1, rec)),
                // A malformed line can only be a torn tail; everything after
                // the last completed round is dropped anyway.
                Err(_) => break,
            }
        }
        let mut cut = None;
        let mut last_round = None;
        for (idx, (_, rec)) in parsed.iter().enumerate() {
            match rec {
                Record::RoundDone { round } => {
                    last_round = Some(*round);
                    cut = Some(idx);
                }
                // The completion marker directly follows the final boundary.
                Record::RunDone { .. } if idx > 0 && cut == Some(idx - 1) => {
                    cut = Some(idx);
                }
                _ => {}
            }
        }
        let (kept_lines, kept_records) = match cut {
            Some(idx) => (
                parsed[idx].0,
                parsed[..=idx].iter().map(|(_, r)| r.clone()).collect(),
            ),
            None => (0, Vec::new()),
        };
        let truncated: String = lines[..kept_lines]
            .iter()
            .flat_map(|l| [*l, "\n"])
            .collect();
        if truncated != text {
            let tmp = self.path.with_extension("jsonl.tmp");
            fs::write(&tmp, truncated).map_err(|e| AppError::io(&tmp, e))?;
            fs::rename(&tmp, &self.path).map_err(|e| AppError::io(&self.path, e))?;
        }
        Ok((kept_records, last_round))
    }

    /// Record lines with every `*_nanos` field removed and keys sorted, for
    /// determinism comparisons.
    pub fn normalized_lines(&self) -> Result<Vec<String>> {
        let text = fs::read_to_string(&self.path).map_err(|e| AppError::io(&self.path, e))?;
        let mut out = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let mut value: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| AppError::Manifest(format!("{}: {e}", self.path.display())))?;
            if let Some(obj) = value.as_object_mut() {
                obj.retain(|k, _| !k.ends_with("_nanos"));
            }
            out.push(value.to_string());
        }
        Ok(out)
    }
}

/// Exclusive run lock, released on drop. Creation uses `create_new`, so two
/// processes cannot both hold the lock on one output directory.
#[derive(Debug)]
pub struct LockFile {
    path: PathBuf,
}

impl LockFile {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join("efeval.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(LockFile { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(AppError::Lock(format!(
                "{} exists; another command may be running (delete it if not)",
                path.display()
            ))),
            Err(e) => Err(AppError::io(&path, e)),
        }
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
