//! End-to-end incremental-learning harness.
//!
//! Each round trains on the round's training portion, then exercises the two
//! evaluation paths against the growing evaluation set: the constant-time
//! estimate (cached gradient sums dotted with the parameter delta, fed
//! through the per-class regression) and the ground-truth full re-test. In
//! between rounds the harness extends every per-checkpoint cache with the
//! newly arrived test portion and backfills calibration samples, so the
//! expensive work happens in the idle window before an update, never after.
//!
//! All progress is appended to the manifest; a `round_done` record marks a
//! resumable boundary and resumption rebuilds state purely from the manifest
//! index and the files it references.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use efeval_core::dataset::gen_synthetic;
use efeval_core::estimator;
use efeval_core::regressor::{self, EfSample, RegressionModel};
use efeval_core::rng::Stream;
use efeval_core::{
    ClassPartition, Dataset, Error as CoreError, GradSumRecord, MlpNetwork, ParamVector,
    SyntheticSpec,
};

use crate::config::{DatasetSource, EstimatorPath, RunConfig};
use crate::error::{AppError, Result};
use crate::formats;
use crate::idx;
use crate::manifest::{EstimateStatus, LockFile, Manifest, Record};
use crate::split::{self, SplitPlan};

/// Relative tolerance for the per-round cache coherence spot check.
const SPOT_CHECK_REL_TOL: f64 = 1e-9;

/// File locations inside a run's output directory. Manifest records store
/// bare file names, so a directory can be relocated wholesale.
#[derive(Debug, Clone)]
pub struct RunPaths {
    out: PathBuf,
}

impl RunPaths {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunPaths { out: out.into() }
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn manifest(&self) -> PathBuf {
        self.out.join("manifest.jsonl")
    }

    pub fn split(&self) -> PathBuf {
        self.out.join("split.json")
    }

    pub fn dataset_cache(&self) -> PathBuf {
        self.out.join("dataset.bin")
    }

    pub fn checkpoint(&self, round: usize) -> PathBuf {
        self.out.join(checkpoint_name(round))
    }

    pub fn delta(&self, round: usize) -> PathBuf {
        self.out.join(delta_name(round))
    }

    pub fn gradsum(&self, net_round: usize, class: usize) -> PathBuf {
        self.out.join(gradsum_name(net_round, class))
    }

    pub fn report(&self) -> PathBuf {
        self.out.join("report.jsonl")
    }

    pub fn summary(&self) -> PathBuf {
        self.out.join("summary.json")
    }

    pub fn bench(&self) -> PathBuf {
        self.out.join("bench.csv")
    }
}

pub fn checkpoint_name(round: usize) -> String {
    format!("ck-{round}.bin")
}

pub fn delta_name(round: usize) -> String {
    format!("delta-{round}.bin")
}

pub fn gradsum_name(net_round: usize, class: usize) -> String {
    format!("gradsum-ck{net_round}-c{class}.bin")
}

/// Builds the configured dataset. Synthetic data is regenerated from the
/// seed every time and checked against the on-disk cache when one exists, so
/// a stale cache cannot silently change a run.
pub fn load_or_build_dataset(config: &RunConfig, paths: &RunPaths) -> Result<Dataset> {
    match &config.dataset {
        DatasetSource::Synthetic {
            classes,
            feature_dim,
            per_class,
            sigma,
            spread,
        } => {
            let spec = SyntheticSpec::with_derived_means(
                *classes,
                *feature_dim,
                *spread,
                *sigma,
                *per_class,
                config.seed,
            )
            .map_err(AppError::Core)?;
            let data = gen_synthetic(&spec).map_err(AppError::Core)?;
            let cache = paths.dataset_cache();
            if cache.exists() {
                let cached = formats::load_dataset(&cache)?;
                if cached != data {
                    return Err(AppError::Manifest(format!(
                        "{} does not match the configured synthetic dataset; \
                         clear the output directory or fix the config",
                        cache.display()
                    )));
                }
            } else if paths.out().exists() {
                formats::save_dataset(&cache, &data)?;
            }
            Ok(data)
        }
        DatasetSource::Idx { images, labels } => idx::read_idx(images, labels),
    }
}

/// Loads the split plan from the output directory, or plans and saves one.
pub fn load_or_plan_split(
    config: &RunConfig,
    paths: &RunPaths,
    n_samples: usize,
) -> Result<SplitPlan> {
    let path = paths.split();
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))?;
        let plan: SplitPlan = serde_json::from_str(&text)
            .map_err(|e| AppError::format(&path, format!("invalid split plan: {e}")))?;
        if plan.total_samples() != n_samples
            || plan.round_count() != config.rounds
            || plan.train_test_ratio != config.ratio
            || plan.seed != config.seed
            || plan.dataset_id != config.dataset.id()
        {
            return Err(AppError::Manifest(format!(
                "{} does not match the current configuration",
                path.display()
            )));
        }
        Ok(plan)
    } else {
        let plan = split::plan_splits(
            &config.dataset.id(),
            n_samples,
            config.rounds,
            config.ratio,
            config.seed,
        )?;
        let text = serde_json::to_string_pretty(&plan)
            .map_err(|e| AppError::Manifest(format!("serializing split plan: {e}")))?;
        fs::write(&path, text).map_err(|e| AppError::io(&path, e))?;
        Ok(plan)
    }
}

/// Evaluation set in force at round `s`: the test portion of round 0 plus
/// the test portions of rounds 2 through `s`. Round 1's test portion never
/// joins (the initial set is evaluated against the first update instead).
pub fn eval_set_for_round(plan: &SplitPlan, s: usize) -> Result<Vec<u64>> {
    let mut ids = split::update_eval_set(None, &plan.rounds[0].test)?;
    for t in 2..=s {
        ids = split::update_eval_set(Some(&ids), &plan.rounds[t].test)?;
    }
    Ok(ids)
}

/// Per-class fit result carried from one round's backfill to the next
/// round's estimate.
#[derive(Debug, Clone)]
pub enum FitOutcome {
    Model(RegressionModel),
    Insufficient { got: usize },
    Degenerate,
}

pub fn fit_outcome(class: usize, round: usize, samples: &[EfSample]) -> Result<FitOutcome> {
    match regressor::fit(class, round, samples) {
        Ok(m) => Ok(FitOutcome::Model(m)),
        Err(CoreError::InsufficientData { got }) => Ok(FitOutcome::Insufficient { got }),
        Err(CoreError::DegenerateRegressor) => Ok(FitOutcome::Degenerate),
        Err(e) => Err(AppError::Core(e)),
    }
}

/// Per-class (correct, total) counts of a network over the given ids.
pub fn per_class_hits(
    net: &MlpNetwork,
    data: &Dataset,
    ids: &[u64],
) -> Result<Vec<(usize, usize)>> {
    let mut hits = vec![(0usize, 0usize); data.class_count()];
    for &id in ids {
        let ex = data.get(id).map_err(AppError::Core)?;
        let pred = net.forward(&ex.features).map_err(AppError::Core)?;
        hits[ex.label].1 += 1;
        if pred.fst() == ex.label {
            hits[ex.label].0 += 1;
        }
    }
    Ok(hits)
}

fn gradsum_by_path(
    estimator_path: EstimatorPath,
    net: &MlpNetwork,
    data: &Dataset,
    part: &ClassPartition,
) -> efeval_core::Result<GradSumRecord> {
    match estimator_path {
        EstimatorPath::PerSample => estimator::grad_sum(net, data, part),
        EstimatorPath::MiniBatch { batch_size } => {
            estimator::grad_sum_minibatch(net, data, part, batch_size)
        }
    }
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let scale = x.abs().max(y.abs()).max(1e-12);
            (x - y).abs() / scale
        })
        .fold(0.0, f64::max)
}

/// In-memory state of a run between rounds.
struct RunState<'a> {
    config: &'a RunConfig,
    paths: RunPaths,
    manifest: Manifest,
    data: Dataset,
    plan: SplitPlan,
    layer_dims: Vec<usize>,
    nets: Vec<MlpNetwork>,
    /// `deltas[i - 1]` is the parameter delta of update `i`.
    deltas: Vec<ParamVector>,
    /// Gradient sums over the current evaluation set, keyed by
    /// (checkpoint round, class).
    gradsums: BTreeMap<(usize, usize), GradSumRecord>,
    /// Correct counts over the current evaluation set, same key.
    correct: BTreeMap<(usize, usize), usize>,
    /// Per-class sample totals in the current evaluation set.
    totals: Vec<usize>,
    /// Fit outcomes prepared for the upcoming round's estimate.
    models: BTreeMap<usize, FitOutcome>,
    eval_ids: Vec<u64>,
    eval_round: usize,
}

impl<'a> RunState<'a> {
    fn class_count(&self) -> usize {
        self.data.class_count()
    }

    fn count_totals(&self, ids: &[u64]) -> Result<Vec<usize>> {
        let mut totals = vec![0usize; self.class_count()];
        for &id in ids {
            totals[self.data.get(id).map_err(AppError::Core)?.label] += 1;
        }
        Ok(totals)
    }

    fn train_one(&mut self, r: usize) -> Result<()> {
        let tc = self.config.train_config();
        let train_ids = &self.plan.rounds[r].train;
        let started = Instant::now();
        let (net, delta) = if r == 0 {
            let init =
                efeval_core::train::init_network(&self.layer_dims, tc.seed).map_err(AppError::Core)?;
            efeval_core::train::train_round(&init, &self.data, train_ids, 0, &tc)
                .map_err(AppError::Core)?
        } else {
            efeval_core::train::train_round(&self.nets[r - 1], &self.data, train_ids, r, &tc)
                .map_err(AppError::Core)?
        };
        let train_nanos = started.elapsed().as_nanos() as u64;

        formats::save_checkpoint(&self.paths.checkpoint(r), &net)?;
        let delta_name = if r >= 1 {
            formats::save_delta(&self.paths.delta(r), &self.layer_dims, &delta)?;
            Some(delta_name(r))
        } else {
            None
        };
        self.manifest.append(&Record::RoundTrained {
            round: r,
            checkpoint: checkpoint_name(r),
            delta: delta_name,
            train_nanos,
        })?;
        self.nets.push(net);
        if r >= 1 {
            self.deltas.push(delta);
        }
        Ok(())
    }

    /// Constant-time path: dot each cached gradient sum with the new delta
    /// and run it through the class's calibrated regressor. Only those two
    /// steps are inside the timed window.
    fn estimate_round(&mut self, r: usize) -> Result<()> {
        let delta = &self.deltas[r - 1];
        for k in 0..self.class_count() {
            let Some(gs) = self.gradsums.get(&(r - 1, k)) else {
                eprintln!("notice: class {k} absent from the evaluation set at round {r}; skipped");
                continue;
            };
            let outcome = self.models.get(&k).cloned().unwrap_or(FitOutcome::Insufficient { got: 0 });

            let started = Instant::now();
            let ef = estimator::effect(gs, delta).map_err(AppError::Core)?;
            let predicted = match &outcome {
                FitOutcome::Model(m) => Some(regressor::predict(m, ef)),
                _ => None,
            };
            let estimate_nanos = started.elapsed().as_nanos() as u64;

            let (status, slope, intercept, r2, n_used, n_removed) = match &outcome {
                FitOutcome::Model(m) => (
                    EstimateStatus::Ok,
                    Some(m.slope),
                    Some(m.intercept),
                    Some(m.r2),
                    m.n_used,
                    m.n_removed,
                ),
                FitOutcome::Insufficient { .. } => {
                    (EstimateStatus::Insufficient, None, None, None, 0, 0)
                }
                FitOutcome::Degenerate => (EstimateStatus::Degenerate, None, None, None, 0, 0),
            };
            self.manifest.append(&Record::Estimate {
                round: r,
                class: k,
                ef,
                status,
                predicted,
                slope,
                intercept,
                r2,
                n_used,
                n_removed,
                estimate_nanos,
            })?;
        }
        Ok(())
    }

    /// Ground truth: full re-test of the new network over the evaluation
    /// set, which also seeds the accuracy cache for the new checkpoint.
    fn measure_round(&mut self, r: usize) -> Result<()> {
        let started = Instant::now();
        let hits = per_class_hits(&self.nets[r], &self.data, &self.eval_ids)?;
        let full_test_nanos = started.elapsed().as_nanos() as u64;

        for (k, &(correct_after, total)) in hits.iter().enumerate() {
            if self.totals[k] != total {
                return Err(AppError::Core(CoreError::CacheConsistency(format!(
                    "class {k} totals disagree: cached {}, counted {total}",
                    self.totals[k]
                ))));
            }
            if total == 0 {
                continue;
            }
            let correct_before = *self.correct.get(&(r - 1, k)).ok_or_else(|| {
                AppError::Manifest(format!("missing accuracy cache for checkpoint {}", r - 1))
            })?;
            let acc_before = correct_before as f64 / total as f64;
            let acc_after = correct_after as f64 / total as f64;
            self.manifest.append(&Record::Measured {
                round: r,
                class: k,
                acc_before,
                acc_after,
                acc_delta: acc_after - acc_before,
                total,
                full_test_nanos,
            })?;
            self.manifest.append(&Record::AccCache {
                eval_round: r,
                net_round: r,
                class: k,
                correct: correct_after,
                total,
            })?;
            self.correct.insert((r, k), correct_after);
        }
        Ok(())
    }

    /// Idle-window phase after round `r`: grow the evaluation set, extend
    /// every checkpoint's gradient-sum and accuracy caches, backfill
    /// calibration samples against the grown set, and fit the per-class
    /// regressors for round `r + 1`.
    fn pre_update(&mut self, r: usize) -> Result<()> {
        let next = r + 1;
        let new_ids: Vec<u64> = if r == 0 {
            self.plan.rounds[0].test.clone()
        } else {
            self.plan.rounds[next].test.clone()
        };
        let prev: Option<&[u64]> = if r == 0 { None } else { Some(&self.eval_ids) };
        let merged = split::update_eval_set(prev, &new_ids)?;
        let totals = self.count_totals(&merged)?;

        // Fan out one task per (checkpoint, class); results join in key
        // order, so worker count cannot influence any output.
        let mut tasks: Vec<(usize, usize, bool)> = Vec::with_capacity((r + 1) * self.class_count());
        for i in 0..=r {
            for k in 0..self.class_count() {
                tasks.push((i, k, self.gradsums.contains_key(&(i, k))));
            }
        }
        let estimator_path = self.config.estimator;
        let nets = &self.nets;
        let data = &self.data;
        let results: Vec<Option<(GradSumRecord, usize)>> = tasks
            .par_iter()
            .map(|&(i, k, have)| {
                let target: &[u64] = if have { &new_ids } else { &merged };
                match estimator::partition(&nets[i], data, target, k, i) {
                    Ok(part) => {
                        let gs = gradsum_by_path(estimator_path, &nets[i], data, &part)?;
                        Ok(Some((gs, part.succeeded.len())))
                    }
                    Err(CoreError::EmptyClass { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<efeval_core::Result<Vec<_>>>()
            .map_err(AppError::Core)?;

        for (&(i, k, have), result) in tasks.iter().zip(results) {
            // A task yields None when the processed portion holds no samples
            // of class k; existing caches cover the grown set unchanged.
            if let Some((gs_part, succeeded)) = result {
                if have {
                    self.gradsums
                        .get_mut(&(i, k))
                        .expect("cache keyed by task flag")
                        .merge(&gs_part)
                        .map_err(AppError::Core)?;
                    let correct = self.correct.get_mut(&(i, k)).ok_or_else(|| {
                        AppError::Core(CoreError::CacheConsistency(format!(
                            "gradient-sum cache ck{i}-c{k} has no accuracy counterpart"
                        )))
                    })?;
                    *correct += succeeded;
                } else {
                    self.gradsums.insert((i, k), gs_part);
                    self.correct.insert((i, k), succeeded);
                }
                formats::save_gradsum(&self.paths.gradsum(i, k), &self.gradsums[&(i, k)])?;
            }
            if let Some(gs) = self.gradsums.get(&(i, k)) {
                self.manifest.append(&Record::GradsumCache {
                    eval_round: next,
                    net_round: i,
                    class: k,
                    file: gradsum_name(i, k),
                    sample_count: gs.sample_count,
                    failed_count: gs.failed_count,
                    succeeded_count: gs.succeeded_count,
                })?;
                self.manifest.append(&Record::AccCache {
                    eval_round: next,
                    net_round: i,
                    class: k,
                    correct: self.correct[&(i, k)],
                    total: totals[k],
                })?;
            }
        }

        self.eval_ids = merged;
        self.eval_round = next;
        self.totals = totals;

        self.spot_check(next)?;
        self.backfill_and_fit(r, next)
    }

    /// Backfills one calibration sample per past update over the grown
    /// evaluation set, then fits each class's regressor for round `next`.
    fn backfill_and_fit(&mut self, r: usize, next: usize) -> Result<()> {
        self.models.clear();
        for k in 0..self.class_count() {
            if self.totals[k] == 0 {
                continue;
            }
            let total = self.totals[k] as f64;
            let mut samples = Vec::with_capacity(r);
            for i in 1..=r {
                let gs = self.gradsums.get(&(i - 1, k)).ok_or_else(|| {
                    AppError::Manifest(format!("missing gradient-sum cache ck{}-c{k}", i - 1))
                })?;
                let ef = estimator::effect(gs, &self.deltas[i - 1]).map_err(AppError::Core)?;
                let acc_delta = self.correct[&(i, k)] as f64 / total
                    - self.correct[&(i - 1, k)] as f64 / total;
                self.manifest.append(&Record::EfSample {
                    eval_round: next,
                    update: i,
                    class: k,
                    ef,
                    acc_delta,
                })?;
                samples.push(EfSample {
                    round: i,
                    class: k,
                    ef,
                    acc_delta,
                });
            }
            let outcome = fit_outcome(k, next, &samples)?;
            self.models.insert(k, outcome);
        }
        Ok(())
    }

    /// Recomputes one deterministically sampled cache entry from scratch and
    /// compares it with the incrementally maintained one.
    fn spot_check(&self, next: usize) -> Result<()> {
        let live: Vec<(usize, usize)> = self.gradsums.keys().copied().collect();
        if live.is_empty() {
            return Ok(());
        }
        let mut stream = Stream::derive(self.config.seed, next as u64, "spotcheck");
        let (i, k) = live[stream.below(live.len() as u64) as usize];
        let part = estimator::partition(&self.nets[i], &self.data, &self.eval_ids, k, i)
            .map_err(AppError::Core)?;
        let fresh =
            gradsum_by_path(self.config.estimator, &self.nets[i], &self.data, &part)
                .map_err(AppError::Core)?;
        let cached = &self.gradsums[&(i, k)];
        let diff = max_rel_diff(fresh.vector.as_slice(), cached.vector.as_slice());
        if fresh.sample_count != cached.sample_count
            || fresh.failed_count != cached.failed_count
            || fresh.succeeded_count != cached.succeeded_count
            || diff > SPOT_CHECK_REL_TOL
        {
            return Err(AppError::Core(CoreError::CacheConsistency(format!(
                "gradient-sum cache ck{i}-c{k} drifted from recomputation (rel diff {diff:.3e})"
            ))));
        }
        if part.succeeded.len() != self.correct[&(i, k)] {
            return Err(AppError::Core(CoreError::CacheConsistency(format!(
                "accuracy cache ck{i}-c{k} drifted: cached {}, recomputed {}",
                self.correct[&(i, k)],
                part.succeeded.len()
            ))));
        }
        Ok(())
    }
}

/// Compares configs ignoring the output directory, so a relocated run
/// directory still resumes.
fn same_config(a: &RunConfig, b: &RunConfig) -> bool {
    // The serialized form already omits the out dir, so runs compare equal
    // across relocations.
    serde_json::to_value(a).ok() == serde_json::to_value(b).ok()
}

/// Executes (or resumes) a full run. With `stop_after`, the run pauses
/// cleanly after that round's boundary record; re-running the same command
/// continues it.
pub fn run_incremental(config: &RunConfig, stop_after: Option<usize>) -> Result<Manifest> {
    let paths = RunPaths::new(&config.out);
    fs::create_dir_all(paths.out()).map_err(|e| AppError::io(paths.out(), e))?;
    let _lock = LockFile::acquire(paths.out())?;

    let data = load_or_build_dataset(config, &paths)?;
    let plan = load_or_plan_split(config, &paths, data.len())?;
    let layer_dims = vec![data.feature_dim(), config.hidden, data.class_count()];
    let config_hash = config.train_config().fingerprint(&layer_dims);
    let manifest = Manifest::at(paths.manifest());

    let mut state = RunState {
        config,
        paths,
        manifest: manifest.clone(),
        data,
        plan,
        layer_dims,
        nets: Vec::new(),
        deltas: Vec::new(),
        gradsums: BTreeMap::new(),
        correct: BTreeMap::new(),
        totals: Vec::new(),
        models: BTreeMap::new(),
        eval_ids: Vec::new(),
        eval_round: 0,
    };

    let mut next_round = 0;
    let mut resumed = false;
    if manifest.exists() {
        let (records, last) = manifest.truncate_to_last_round_done()?;
        if let Some(last) = last {
            let Some(Record::RunStart {
                config: old_config,
                config_hash: old_hash,
                layer_dims: old_dims,
                ..
            }) = records.first()
            else {
                return Err(AppError::Manifest(format!(
                    "{} does not start with a run_start record",
                    manifest.path().display()
                )));
            };
            if !same_config(old_config, config)
                || *old_hash != config_hash
                || *old_dims != state.layer_dims
            {
                return Err(AppError::Manifest(format!(
                    "{} belongs to a different configuration; use a fresh output directory",
                    manifest.path().display()
                )));
            }
            if records.iter().any(|r| matches!(r, Record::RunDone { .. })) {
                eprintln!("notice: run already complete; nothing to do");
                return Ok(manifest);
            }
            resume_state(&mut state, &records, last)?;
            next_round = last + 1;
            resumed = true;
            eprintln!("notice: resuming after round {last}");
        }
    }
    if !resumed {
        state.manifest.append(&Record::RunStart {
            config: config.clone(),
            config_hash,
            dataset_id: config.dataset.id(),
            class_count: state.data.class_count(),
            feature_dim: state.data.feature_dim(),
            layer_dims: state.layer_dims.clone(),
            split_path: "split.json".to_string(),
        })?;
    }

    let total_rounds = config.rounds;
    for r in next_round..=total_rounds {
        state.train_one(r).map_err(|e| e.at(r, None))?;
        if r >= 1 {
            state.estimate_round(r).map_err(|e| e.at(r, None))?;
            state.measure_round(r).map_err(|e| e.at(r, None))?;
        }
        if r < total_rounds {
            state.pre_update(r).map_err(|e| e.at(r, None))?;
        }
        state.manifest.append(&Record::RoundDone { round: r })?;
        if stop_after == Some(r) && r < total_rounds {
            eprintln!("notice: stopped after round {r} as requested; re-run to resume");
            return Ok(manifest);
        }
    }
    state.manifest.append(&Record::RunDone {
        rounds: total_rounds,
    })?;
    Ok(manifest)
}

/// Rebuilds in-memory state from a truncated manifest whose last completed
/// round is `last`. Only index records and referenced files are consulted;
/// nothing is recomputed beyond the regression fits.
fn resume_state(state: &mut RunState<'_>, records: &[Record], last: usize) -> Result<()> {
    for i in 0..=last {
        state
            .nets
            .push(formats::load_checkpoint(&state.paths.checkpoint(i))?);
        if i >= 1 {
            state
                .deltas
                .push(formats::load_delta(&state.paths.delta(i), &state.layer_dims)?);
        }
    }
    if last >= state.config.rounds {
        return Ok(());
    }
    let pending = last + 1;
    state.eval_ids = eval_set_for_round(&state.plan, pending)?;
    state.eval_round = pending;
    state.totals = state.count_totals(&state.eval_ids.clone())?;

    let mut latest_gs: BTreeMap<(usize, usize), (usize, usize, usize, usize)> = BTreeMap::new();
    let mut latest_acc: BTreeMap<(usize, usize), (usize, usize, usize)> = BTreeMap::new();
    let mut samples_by_class: BTreeMap<usize, Vec<EfSample>> = BTreeMap::new();
    for rec in records {
        match rec {
            Record::GradsumCache {
                eval_round,
                net_round,
                class,
                sample_count,
                failed_count,
                succeeded_count,
                ..
            } => {
                latest_gs.insert(
                    (*net_round, *class),
                    (*eval_round, *sample_count, *failed_count, *succeeded_count),
                );
            }
            Record::AccCache {
                eval_round,
                net_round,
                class,
                correct,
                total,
            } => {
                latest_acc.insert((*net_round, *class), (*eval_round, *correct, *total));
            }
            Record::EfSample {
                eval_round,
                update,
                class,
                ef,
                acc_delta,
            } if *eval_round == pending => {
                samples_by_class.entry(*class).or_default().push(EfSample {
                    round: *update,
                    class: *class,
                    ef: *ef,
                    acc_delta: *acc_delta,
                });
            }
            _ => {}
        }
    }

    for (&(i, k), &(eval_round, sample_count, failed_count, succeeded_count)) in &latest_gs {
        if eval_round != pending {
            return Err(AppError::Manifest(format!(
                "gradient-sum cache ck{i}-c{k} covers round {eval_round}, expected {pending}"
            )));
        }
        let gs = formats::load_gradsum(&state.paths.gradsum(i, k))?;
        if gs.round != i
            || gs.class != k
            || gs.sample_count != sample_count
            || gs.failed_count != failed_count
            || gs.succeeded_count != succeeded_count
        {
            return Err(AppError::Manifest(format!(
                "gradient-sum file {} disagrees with its manifest record",
                gradsum_name(i, k)
            )));
        }
        state.gradsums.insert((i, k), gs);
    }
    for (&(i, k), &(eval_round, correct, total)) in &latest_acc {
        if eval_round != pending {
            return Err(AppError::Manifest(format!(
                "accuracy cache ck{i}-c{k} covers round {eval_round}, expected {pending}"
            )));
        }
        if total != state.totals[k] {
            return Err(AppError::Manifest(format!(
                "accuracy cache ck{i}-c{k} total {total} disagrees with the split plan"
            )));
        }
        state.correct.insert((i, k), correct);
    }
    for k in 0..state.class_count() {
        if state.totals[k] == 0 {
            continue;
        }
        let samples = samples_by_class.remove(&k).unwrap_or_default();
        let outcome = fit_outcome(k, pending, &samples)?;
        state.models.insert(k, outcome);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DatasetSource, EstimatorPath};

    fn tmp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "efeval-harness-{}-{name}",
            std::process::id()
        ));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn tiny_config(out: PathBuf, rounds: usize) -> RunConfig {
        RunConfig {
            dataset: DatasetSource::Synthetic {
                classes: 3,
                feature_dim: 4,
                per_class: 30,
                sigma: 0.6,
                spread: 1.5,
            },
            rounds,
            ratio: 2,
            hidden: 6,
            learning_rate: 0.2,
            train_batch: 8,
            epochs: 2,
            estimator: EstimatorPath::PerSample,
            out,
            seed: 11,
        }
    }

    #[test]
    fn eval_set_skips_round_one_test_portion() {
        let plan = split::plan_splits("t", 60, 3, 2, 5).unwrap();
        let x1 = eval_set_for_round(&plan, 1).unwrap();
        let mut td0 = plan.rounds[0].test.clone();
        td0.sort_unstable();
        assert_eq!(x1, td0);

        let x3 = eval_set_for_round(&plan, 3).unwrap();
        let expected = plan.rounds[0].test.len()
            + plan.rounds[2].test.len()
            + plan.rounds[3].test.len();
        assert_eq!(x3.len(), expected);
        for id in &plan.rounds[1].test {
            assert!(!x3.contains(id), "round 1 test id {id} leaked into the eval set");
        }
        for id in &x1 {
            assert!(x3.contains(id));
        }
    }

    #[test]
    fn tiny_run_completes_with_expected_record_shape() {
        let out = tmp_dir("shape");
        let config = tiny_config(out, 3);
        let manifest = run_incremental(&config, None).unwrap();
        let records = manifest.read_all().unwrap();

        assert!(matches!(records.first(), Some(Record::RunStart { .. })));
        assert!(matches!(records.last(), Some(Record::RunDone { rounds: 3 })));
        let done: Vec<usize> = records
            .iter()
            .filter_map(|r| match r {
                Record::RoundDone { round } => Some(*round),
                _ => None,
            })
            .collect();
        assert_eq!(done, vec![0, 1, 2, 3]);

        // Estimates exist for every round from 1 on, and by round 3 the
        // regressor has two calibration samples per class.
        let ok_estimates: Vec<(usize, usize)> = records
            .iter()
            .filter_map(|r| match r {
                Record::Estimate {
                    round,
                    class,
                    status: EstimateStatus::Ok,
                    predicted: Some(_),
                    ..
                } => Some((*round, *class)),
                _ => None,
            })
            .collect();
        assert!(
            ok_estimates.iter().any(|&(round, _)| round == 3),
            "no calibrated estimate at round 3: {ok_estimates:?}"
        );
        assert!(
            ok_estimates.iter().all(|&(round, _)| round >= 3),
            "estimate before round 3: {ok_estimates:?}"
        );

        for r in 1..=3usize {
            let measured = records
                .iter()
                .filter(|rec| matches!(rec, Record::Measured { round, .. } if *round == r))
                .count();
            assert!(measured >= 1, "no measured records at round {r}");
        }
        // Checkpoint and cache files exist on disk.
        let paths = RunPaths::new(&config.out);
        for i in 0..=3 {
            assert!(paths.checkpoint(i).exists());
        }
        assert!(paths.gradsum(0, 0).exists());
        assert!(paths.split().exists());
        assert!(paths.dataset_cache().exists());
    }

    #[test]
    fn reruns_are_bit_identical_modulo_timing() {
        let out_a = tmp_dir("det-a");
        let out_b = tmp_dir("det-b");
        let a = run_incremental(&tiny_config(out_a, 3), None).unwrap();
        let b = run_incremental(&tiny_config(out_b, 3), None).unwrap();
        assert_eq!(
            a.normalized_lines().unwrap(),
            b.normalized_lines().unwrap()
        );
    }

    #[test]
    fn stop_and_resume_matches_uninterrupted() {
        let out_full = tmp_dir("resume-full");
        let out_split = tmp_dir("resume-split");
        let full = run_incremental(&tiny_config(out_full, 3), None).unwrap();

        let config = tiny_config(out_split, 3);
        run_incremental(&config, Some(1)).unwrap();
        let resumed = run_incremental(&config, None).unwrap();
        assert_eq!(
            full.normalized_lines().unwrap(),
            resumed.normalized_lines().unwrap()
        );
    }

    #[test]
    fn resume_rejects_changed_config() {
        let out = tmp_dir("cfg-drift");
        let config = tiny_config(out.clone(), 3);
        run_incremental(&config, Some(1)).unwrap();
        let mut changed = config;
        changed.learning_rate = 0.05;
        let err = run_incremental(&changed, None).unwrap_err();
        assert!(matches!(err, AppError::Manifest(_)), "{err}");
    }

    #[test]
    fn completed_run_is_a_noop_on_rerun() {
        let out = tmp_dir("noop");
        let config = tiny_config(out, 2);
        run_incremental(&config, None).unwrap();
        let before = Manifest::at(RunPaths::new(&config.out).manifest())
            .read_all()
            .unwrap();
        run_incremental(&config, None).unwrap();
        let after = Manifest::at(RunPaths::new(&config.out).manifest())
            .read_all()
            .unwrap();
        assert_eq!(before, after);
    }
}
