//! Timing benchmark: constant-time estimate versus full re-test across
//! growing evaluation sets.
//!
//! The benchmark borrows the final update of a completed run (its last two
//! checkpoints, parameter delta, and fitted regressors) and applies it to
//! fresh synthetic evaluation sets of the requested sizes. For each size it
//! reports the median over [`REPS`] repetitions of (a) the post-update
//! estimate, which touches one cached vector per class plus the regressor,
//! and (b) a full sequential re-test of every sample. Only (b) should grow
//! with the evaluation set.

use std::collections::BTreeMap;
use std::fs;
use std::hint::black_box;
use std::time::Instant;

use rayon::prelude::*;

use efeval_core::dataset::gen_synthetic;
use efeval_core::estimator;
use efeval_core::regressor::{self, EfSample, RegressionModel};
use efeval_core::rng::{fnv1a, Stream};
use efeval_core::{Dataset, Error as CoreError, GradSumRecord, MlpNetwork, SyntheticSpec};

use serde::Serialize;

use crate::config::{DatasetSource, RunConfig};
use crate::error::{AppError, Result};
use crate::formats;
use crate::harness::{self, FitOutcome, RunPaths};
use crate::manifest::{Manifest, Record};

/// Repetitions per timing; the reported value is the median.
pub const REPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BenchRow {
    pub size: usize,
    pub estimate_nanos: u64,
    pub full_test_nanos: u64,
}

/// Renders rows as the comma-separated table written to `bench.csv`.
pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("size,estimate_nanos,full_test_nanos\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.size, row.estimate_nanos, row.full_test_nanos
        ));
    }
    out
}

fn median_nanos(mut samples: Vec<u64>) -> u64 {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

/// Runs the benchmark against the completed run in `config.out` and writes
/// `bench.csv` there.
pub fn benchmark(config: &RunConfig, sizes: &[usize]) -> Result<Vec<BenchRow>> {
    if sizes.is_empty() {
        return Err(AppError::Config("no benchmark sizes given".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(AppError::Config(format!(
            "benchmark sizes must be positive and strictly ascending, got {sizes:?}"
        )));
    }
    let DatasetSource::Synthetic {
        classes,
        feature_dim,
        sigma,
        spread,
        ..
    } = config.dataset
    else {
        return Err(AppError::Config(
            "the benchmark generates synthetic evaluation sets and needs a synthetic-dataset run"
                .into(),
        ));
    };

    let paths = RunPaths::new(&config.out);
    let manifest = Manifest::at(paths.manifest());
    let records = manifest.read_all()?;
    if !records.iter().any(|r| matches!(r, Record::RunDone { .. })) {
        return Err(AppError::Manifest(format!(
            "{} is not a completed run",
            manifest.path().display()
        )));
    }
    let s_final = config.rounds;
    let net_prev = formats::load_checkpoint(&paths.checkpoint(s_final - 1))?;
    let net_last = formats::load_checkpoint(&paths.checkpoint(s_final))?;
    let layer_dims = net_last.layer_dims().to_vec();
    let delta = formats::load_delta(&paths.delta(s_final), &layer_dims)?;

    // Refit the final-round regressors from the manifest's calibration
    // samples; classes the run never calibrated fall back to a zero model so
    // every class exercises the same timed path.
    let mut samples_by_class: BTreeMap<usize, Vec<EfSample>> = BTreeMap::new();
    for rec in &records {
        if let Record::EfSample {
            eval_round,
            update,
            class,
            ef,
            acc_delta,
        } = rec
        {
            if *eval_round == s_final {
                samples_by_class.entry(*class).or_default().push(EfSample {
                    round: *update,
                    class: *class,
                    ef: *ef,
                    acc_delta: *acc_delta,
                });
            }
        }
    }
    let mut models: Vec<RegressionModel> = Vec::with_capacity(classes);
    for k in 0..classes {
        let samples = samples_by_class.remove(&k).unwrap_or_default();
        let model = match harness::fit_outcome(k, s_final, &samples)? {
            FitOutcome::Model(m) => m,
            _ => RegressionModel {
                class: k,
                round: s_final,
                slope: 0.0,
                intercept: 0.0,
                r2: 0.0,
                n_used: 0,
                n_removed: 0,
            },
        };
        models.push(model);
    }

    // A dedicated pool keeps benchmark sizes independent of the run's own
    // dataset; the shuffled order makes every size prefix class-mixed.
    let max_size = *sizes.last().expect("sizes checked non-empty");
    let per_class = max_size.div_ceil(classes);
    let bench_seed = config.seed ^ fnv1a(b"bench");
    let spec = SyntheticSpec::with_derived_means(
        classes,
        feature_dim,
        spread,
        sigma,
        per_class,
        bench_seed,
    )
    .map_err(AppError::Core)?;
    let pool = gen_synthetic(&spec).map_err(AppError::Core)?;
    let mut order: Vec<u64> = (0..pool.len() as u64).collect();
    Stream::derive(bench_seed, 0, "bench-order").shuffle(&mut order);

    let mut gradsums: BTreeMap<usize, GradSumRecord> = BTreeMap::new();
    let mut covered = 0usize;
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size > pool.len() {
            return Err(AppError::Config(format!(
                "benchmark size {size} exceeds the generated pool of {}",
                pool.len()
            )));
        }
        extend_gradsums(
            config,
            &net_prev,
            &pool,
            &order[covered..size],
            classes,
            s_final - 1,
            &mut gradsums,
        )?;
        covered = size;

        let mut estimate_times = Vec::with_capacity(REPS);
        for _ in 0..REPS {
            let started = Instant::now();
            let mut sink = 0.0;
            for (k, model) in models.iter().enumerate() {
                if let Some(gs) = gradsums.get(&k) {
                    let ef = estimator::effect(gs, &delta).map_err(AppError::Core)?;
                    sink += regressor::predict(model, ef);
                }
            }
            black_box(sink);
            estimate_times.push(started.elapsed().as_nanos() as u64);
        }

        let prefix = &order[..size];
        let mut full_times = Vec::with_capacity(REPS);
        for _ in 0..REPS {
            let started = Instant::now();
            let hits = harness::per_class_hits(&net_last, &pool, prefix)?;
            black_box(&hits);
            full_times.push(started.elapsed().as_nanos() as u64);
        }

        rows.push(BenchRow {
            size,
            estimate_nanos: median_nanos(estimate_times),
            full_test_nanos: median_nanos(full_times),
        });
    }

    let csv = to_csv(&rows);
    let path = paths.bench();
    fs::write(&path, csv).map_err(|e| AppError::io(&path, e))?;
    Ok(rows)
}

/// Extends the per-class gradient sums with a new slice of the pool,
/// computed under the pre-update network. Classes fan out to workers; the
/// join happens in class order.
fn extend_gradsums(
    config: &RunConfig,
    net: &MlpNetwork,
    pool: &Dataset,
    new_ids: &[u64],
    classes: usize,
    net_round: usize,
    gradsums: &mut BTreeMap<usize, GradSumRecord>,
) -> Result<()> {
    let estimator_path = config.estimator;
    let parts: Vec<Option<GradSumRecord>> = (0..classes)
        .into_par_iter()
        .map(|k| {
            match estimator::partition(net, pool, new_ids, k, net_round) {
                Ok(part) => match estimator_path {
                    crate::config::EstimatorPath::PerSample => {
                        estimator::grad_sum(net, pool, &part).map(Some)
                    }
                    crate::config::EstimatorPath::MiniBatch { batch_size } => {
                        estimator::grad_sum_minibatch(net, pool, &part, batch_size).map(Some)
                    }
                },
                Err(CoreError::EmptyClass { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<efeval_core::Result<Vec<_>>>()
        .map_err(AppError::Core)?;
    for (k, part) in parts.into_iter().enumerate() {
        if let Some(gs) = part {
            match gradsums.get_mut(&k) {
                Some(existing) => existing.merge(&gs).map_err(AppError::Core)?,
                None => {
                    gradsums.insert(k, gs);
                }
            }
        }
    }
    Ok(())
}
