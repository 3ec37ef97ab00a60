//! Plain-text run configuration: `key = value` lines, `#` comments, flag
//! overrides applied on top. Validation aggregates every offending key into
//! one message instead of stopping at the first.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use efeval_core::TrainConfig;

use crate::error::{AppError, Result};

const KNOWN_KEYS: &[&str] = &[
    "dataset",
    "classes",
    "feature_dim",
    "per_class",
    "sigma",
    "spread",
    "images",
    "labels",
    "rounds",
    "ratio",
    "hidden",
    "learning_rate",
    "train_batch",
    "epochs",
    "estimator",
    "batch_size",
    "out",
    "seed",
];

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    Synthetic {
        classes: usize,
        feature_dim: usize,
        per_class: usize,
        sigma: f64,
        spread: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

impl DatasetSource {
    /// Short identifier recorded in the split plan and manifest.
    pub fn id(&self) -> String {
        match self {
            DatasetSource::Synthetic { .. } => "synthetic".to_string(),
            DatasetSource::Idx { images, .. } => images.display().to_string(),
        }
    }
}

/// Which gradient-sum path the run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorPath {
    PerSample,
    MiniBatch { batch_size: usize },
}

impl fmt::Display for EstimatorPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorPath::PerSample => write!(f, "per-sample"),
            EstimatorPath::MiniBatch { batch_size } => write!(f, "minibatch({batch_size})"),
        }
    }
}

/// Fully validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub rounds: usize,
    pub ratio: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub train_batch: usize,
    pub epochs: usize,
    pub estimator: EstimatorPath,
    /// Output directory. Excluded from serialized snapshots so a run
    /// directory can be relocated and still resume.
    #[serde(skip)]
    pub out: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.train_batch,
            epochs_per_round: self.epochs,
            seed: self.seed,
        }
    }
}

/// Flag-level overrides; set fields win over file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub rounds: Option<usize>,
    pub batch_size: Option<usize>,
    pub estimator: Option<String>,
}

/// Parses a config file into a raw key-value map. Comment-only and blank
/// lines are skipped; inline `#` comments are stripped.
fn parse_raw(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let mut issues = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(at) => &raw[..at],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            issues.push(format!("line {}: expected 'key = value'", lineno + 1));
            continue;
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            issues.push(format!("duplicate key '{key}'"));
        }
    }
    if issues.is_empty() {
        Ok(map)
    } else {
        Err(AppError::Config(format!(
            "{}: {}",
            path.display(),
            issues.join("; ")
        )))
    }
}

struct Checker<'a> {
    map: &'a BTreeMap<String, String>,
    issues: Vec<String>,
}

impl<'a> Checker<'a> {
    fn get<T: std::str::FromStr>(&mut self, key: &str) -> Option<T> {
        match self.map.get(key) {
            None => {
                self.issues.push(format!("missing key '{key}'"));
                None
            }
            Some(v) => match v.parse() {
                Ok(parsed) => Some(parsed),
                Err(_) => {
                    self.issues.push(format!("key '{key}': invalid value '{v}'"));
                    None
                }
            },
        }
    }

    fn forbid(&mut self, key: &str, reason: &str) {
        if self.map.contains_key(key) {
            self.issues.push(format!("key '{key}' {reason}"));
        }
    }
}

/// Loads, merges overrides, and validates a run configuration.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut map = parse_raw(path, &text)?;

    let unknown: Vec<&str> = map
        .keys()
        .map(String::as_str)
        .filter(|k| !KNOWN_KEYS.contains(k))
        .collect();
    if !unknown.is_empty() {
        return Err(AppError::Config(format!(
            "{}: unknown keys: {}",
            path.display(),
            unknown.join(", ")
        )));
    }

    if let Some(seed) = overrides.seed {
        map.insert("seed".into(), seed.to_string());
    }
    if let Some(out) = &overrides.out {
        map.insert("out".into(), out.display().to_string());
    }
    if let Some(rounds) = overrides.rounds {
        map.insert("rounds".into(), rounds.to_string());
    }
    if let Some(bs) = overrides.batch_size {
        map.insert("batch_size".into(), bs.to_string());
    }
    if let Some(est) = &overrides.estimator {
        map.insert("estimator".into(), est.clone());
    }

    let mut c = Checker {
        map: &map,
        issues: Vec::new(),
    };

    let dataset = match map.get("dataset").map(String::as_str) {
        Some("synthetic") => {
            c.forbid("images", "does not apply to a synthetic dataset");
            c.forbid("labels", "does not apply to a synthetic dataset");
            let classes = c.get::<usize>("classes");
            let feature_dim = c.get::<usize>("feature_dim");
            let per_class = c.get::<usize>("per_class");
            let sigma = c.get::<f64>("sigma");
            let spread = c.get::<f64>("spread");
            match (classes, feature_dim, per_class, sigma, spread) {
                (Some(classes), Some(feature_dim), Some(per_class), Some(sigma), Some(spread)) => {
                    Some(DatasetSource::Synthetic {
                        classes,
                        feature_dim,
                        per_class,
                        sigma,
                        spread,
                    })
                }
                _ => None,
            }
        }
        Some("idx") => {
            for key in ["classes", "feature_dim", "per_class", "sigma", "spread"] {
                c.forbid(key, "does not apply to an idx dataset");
            }
            let images = c.get::<PathBuf>("images");
            let labels = c.get::<PathBuf>("labels");
            match (images, labels) {
                (Some(images), Some(labels)) => Some(DatasetSource::Idx { images, labels }),
                _ => None,
            }
        }
        Some(other) => {
            c.issues
                .push(format!("key 'dataset': expected synthetic or idx, got '{other}'"));
            None
        }
        None => {
            c.issues.push("missing key 'dataset'".into());
            None
        }
    };

    let rounds = c.get::<usize>("rounds");
    let ratio = c.get::<usize>("ratio");
    let hidden = c.get::<usize>("hidden");
    let learning_rate = c.get::<f64>("learning_rate");
    let train_batch = c.get::<usize>("train_batch");
    let epochs = c.get::<usize>("epochs");
    let out = c.get::<PathBuf>("out");
    let seed = c.get::<u64>("seed");

    let estimator = match map.get("estimator").map(String::as_str) {
        Some("per-sample") => {
            c.forbid("batch_size", "does not apply to the per-sample estimator");
            Some(EstimatorPath::PerSample)
        }
        Some("minibatch") => c
            .get::<usize>("batch_size")
            .map(|batch_size| EstimatorPath::MiniBatch { batch_size }),
        Some(other) => {
            c.issues.push(format!(
                "key 'estimator': expected per-sample or minibatch, got '{other}'"
            ));
            None
        }
        None => {
            c.issues.push("missing key 'estimator'".into());
            None
        }
    };

    if let Some(EstimatorPath::MiniBatch { batch_size: 0 }) = estimator {
        c.issues.push("key 'batch_size': must be at least 1".into());
    }

    let mut issues = c.issues;
    let config = match (
        dataset, rounds, ratio, hidden, learning_rate, train_batch, epochs, estimator, out, seed,
    ) {
        (
            Some(dataset),
            Some(rounds),
            Some(ratio),
            Some(hidden),
            Some(learning_rate),
            Some(train_batch),
            Some(epochs),
            Some(estimator),
            Some(out),
            Some(seed),
        ) if issues.is_empty() => RunConfig {
            dataset,
            rounds,
            ratio,
            hidden,
            learning_rate,
            train_batch,
            epochs,
            estimator,
            out,
            seed,
        },
        _ => {
            return Err(AppError::Config(format!(
                "{}: {}",
                path.display(),
                issues.join("; ")
            )))
        }
    };

    if let Err(e) = config.train_config().validate() {
        issues.push(e.to_string());
    }
    if config.rounds < 1 {
        issues.push("key 'rounds': must be at least 1".into());
    }
    if config.ratio < 1 {
        issues.push("key 'ratio': must be at least 1".into());
    }
    if config.hidden < 1 {
        issues.push("key 'hidden': must be at least 1".into());
    }
    if !issues.is_empty() {
        return Err(AppError::Config(format!(
            "{}: {}",
            path.display(),
            issues.join("; ")
        )));
    }
    Ok(config)
}
