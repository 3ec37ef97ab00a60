//! Split planning for the incremental-learning protocol.
//!
//! A plan carves a dataset into round 0 (two thirds of the samples) plus S
//! near-equal increments, and divides every round into training and test
//! portions by the configured ratio. The evaluation set grows by the test
//! portion of each round from round 2 on; round 1's test portion is consumed
//! as the initial evaluation set itself.

use serde::{Deserialize, Serialize};

use efeval_core::rng::Stream;

use crate::error::{AppError, Result};

/// Training and test sample ids for one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSplit {
    pub train: Vec<u64>,
    pub test: Vec<u64>,
}

impl RoundSplit {
    pub fn size(&self) -> usize {
        self.train.len() + self.test.len()
    }
}

/// Full split plan over a dataset: rounds 0..=S.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub dataset_id: String,
    pub train_test_ratio: usize,
    pub seed: u64,
    pub rounds: Vec<RoundSplit>,
}

impl SplitPlan {
    /// Number of incremental rounds (excluding round 0).
    pub fn round_count(&self) -> usize {
        self.rounds.len() - 1
    }

    pub fn total_samples(&self) -> usize {
        self.rounds.iter().map(RoundSplit::size).sum()
    }
}

/// Plans the rounds: a seeded shuffle, round 0 takes the first 2n/3 ids, the
/// rest is dealt into S consecutive rounds differing in size by at most one.
/// Within a round the test portion is size/(ratio+1), remainder to training.
pub fn plan_splits(
    dataset_id: &str,
    n_samples: usize,
    s_rounds: usize,
    train_test_ratio: usize,
    seed: u64,
) -> Result<SplitPlan> {
    if s_rounds < 1 {
        return Err(AppError::Config("round count must be at least 1".into()));
    }
    if train_test_ratio < 1 {
        return Err(AppError::Config(
            "train:test ratio must be at least 1".into(),
        ));
    }
    let round0 = 2 * n_samples / 3;
    let remainder = n_samples - round0;
    if remainder < s_rounds {
        return Err(AppError::Config(format!(
            "{n_samples} samples leave only {remainder} for {s_rounds} incremental rounds"
        )));
    }
    if round0 / (train_test_ratio + 1) == 0 {
        return Err(AppError::Config(format!(
            "round 0 of {round0} samples has an empty test portion at ratio {train_test_ratio}:1"
        )));
    }

    let mut ids: Vec<u64> = (0..n_samples as u64).collect();
    let mut stream = Stream::derive(seed, 0, "split");
    stream.shuffle(&mut ids);

    let base = remainder / s_rounds;
    let extra = remainder % s_rounds;
    let mut sizes = Vec::with_capacity(s_rounds + 1);
    sizes.push(round0);
    for i in 0..s_rounds {
        sizes.push(base + usize::from(i < extra));
    }

    let mut rounds = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for size in sizes {
        let chunk = &ids[at..at + size];
        at += size;
        let test_count = size / (train_test_ratio + 1);
        let train_count = size - test_count;
        rounds.push(RoundSplit {
            train: chunk[..train_count].to_vec(),
            test: chunk[train_count..].to_vec(),
        });
    }

    Ok(SplitPlan {
        dataset_id: dataset_id.to_string(),
        train_test_ratio,
        seed,
        rounds,
    })
}

/// Extends an evaluation set by a round's test portion. Returns the union in
/// ascending id order; overlapping ids indicate a broken split plan.
pub fn update_eval_set(prev: Option<&[u64]>, td: &[u64]) -> Result<Vec<u64>> {
    let mut out = Vec::with_capacity(prev.map_or(0, <[u64]>::len) + td.len());
    if let Some(prev) = prev {
        out.extend_from_slice(prev);
    }
    out.extend_from_slice(td);
    out.sort_unstable();
    for w in out.windows(2) {
        if w[0] == w[1] {
            return Err(AppError::Manifest(format!(
                "sample id {} appears in two rounds of the split plan",
                w[0]
            )));
        }
    }
    Ok(out)
}
