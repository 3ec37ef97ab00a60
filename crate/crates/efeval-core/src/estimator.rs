//! Constant-time estimation of per-class accuracy change.
//!
//! Evaluating a model on an ever-growing past dataset gets slower every
//! round. This module avoids that by caching, per class, one gradient
//! aggregate over the evaluation set before an update; after the update the
//! cached vector and the parameter delta give an effect score in a single dot
//! product, with cost independent of the evaluation-set size.
//!
//! For a sample with label `t` and prediction `y` the two relative losses
//! are, with `fst`/`snd` frozen at their pre-update values:
//!
//! * positive loss `L(y, t) - L(y, fst)`: distance from flipping a wrong
//!   prediction to a right one,
//! * negative loss `L(y, snd) - L(y, t)`: distance from losing a right
//!   prediction to the runner-up.
//!
//! The gradient sum adds `-grad PL` over currently misclassified samples and
//! subtracts `-grad NL` over currently correct ones, so a positive effect
//! score predicts an accuracy gain and a negative one a loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, MlpNetwork, ParamVector, Prediction};

/// How a gradient sum was accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathTag {
    /// One gradient per sample, summed in ascending id order.
    PerSample,
    /// Mean gradient per mini-batch, scaled back by the batch size.
    MiniBatch,
}

impl PathTag {
    pub fn as_u8(self) -> u8 {
        match self {
            PathTag::PerSample => 0,
            PathTag::MiniBatch => 1,
        }
    }

    pub fn from_u8(tag: u8) -> Result<PathTag> {
        match tag {
            0 => Ok(PathTag::PerSample),
            1 => Ok(PathTag::MiniBatch),
            other => Err(Error::Config(format!("unknown path tag {other}"))),
        }
    }
}

/// Evaluation samples of one class, split by one checkpoint's verdict.
///
/// Both id lists are strictly ascending and disjoint. `failed` holds
/// misclassified samples, `succeeded` correctly classified ones; `round` is
/// the checkpoint the partition was computed under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPartition {
    pub class: usize,
    pub round: usize,
    pub failed: Vec<u64>,
    pub succeeded: Vec<u64>,
}

impl ClassPartition {
    /// Wraps pre-sorted id lists, validating ascending order and
    /// disjointness.
    pub fn from_sorted(
        class: usize,
        round: usize,
        failed: Vec<u64>,
        succeeded: Vec<u64>,
    ) -> Result<Self> {
        for (name, ids) in [("failed", &failed), ("succeeded", &succeeded)] {
            if ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::CacheConsistency(format!(
                    "{name} ids for class {class} are not strictly ascending"
                )));
            }
        }
        let mut i = 0;
        let mut j = 0;
        while i < failed.len() && j < succeeded.len() {
            match failed[i].cmp(&succeeded[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => {
                    return Err(Error::CacheConsistency(format!(
                        "sample {} is both failed and succeeded",
                        failed[i]
                    )))
                }
            }
        }
        Ok(ClassPartition {
            class,
            round,
            failed,
            succeeded,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.failed.len() + self.succeeded.len()
    }

    /// Visits all member ids in ascending order, flagging failed ones.
    fn ascending(&self) -> AscendingIds<'_> {
        AscendingIds {
            failed: &self.failed,
            succeeded: &self.succeeded,
            i: 0,
            j: 0,
        }
    }
}

/// Merge walk over the two sorted id lists of a partition.
struct AscendingIds<'a> {
    failed: &'a [u64],
    succeeded: &'a [u64],
    i: usize,
    j: usize,
}

impl Iterator for AscendingIds<'_> {
    /// `(sample id, belongs to the failed set)`
    type Item = (u64, bool);

    fn next(&mut self) -> Option<(u64, bool)> {
        let f = self.failed.get(self.i);
        let s = self.succeeded.get(self.j);
        match (f, s) {
            (Some(&a), Some(&b)) if a < b => {
                self.i += 1;
                Some((a, true))
            }
            (Some(_), Some(&b)) => {
                self.j += 1;
                Some((b, false))
            }
            (Some(&a), None) => {
                self.i += 1;
                Some((a, true))
            }
            (None, Some(&b)) => {
                self.j += 1;
                Some((b, false))
            }
            (None, None) => None,
        }
    }
}

/// Splits the class-`k` members of `ids` by whether `net` classifies them
/// correctly. `round` records which checkpoint `net` is.
///
/// Ids are visited and returned in ascending order.
pub fn partition(
    net: &MlpNetwork,
    data: &Dataset,
    ids: &[u64],
    class: usize,
    round: usize,
) -> Result<ClassPartition> {
    if class >= net.class_count() {
        return Err(Error::ClassOutOfRange {
            class,
            class_count: net.class_count(),
        });
    }
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    let mut failed = Vec::new();
    let mut succeeded = Vec::new();
    for id in sorted {
        let ex = data.get(id)?;
        if ex.label != class {
            continue;
        }
        let pred = net.forward(&ex.features)?;
        if pred.fst() == class {
            succeeded.push(id);
        } else {
            failed.push(id);
        }
    }
    if failed.is_empty() && succeeded.is_empty() {
        return Err(Error::EmptyClass { class });
    }
    ClassPartition::from_sorted(class, round, failed, succeeded)
}

/// Positive loss `L(y, t) - L(y, fst)`: how far the target class is from
/// overtaking the currently predicted class. Non-negative by construction.
pub fn positive_loss(pred: &Prediction, t: usize) -> Result<f64> {
    Ok(nn::cross_entropy(pred, t)? - nn::cross_entropy(pred, pred.fst())?)
}

/// Negative loss `L(y, snd) - L(y, t)`: how far the runner-up class is from
/// overtaking the target. Non-negative whenever the prediction is correct.
pub fn negative_loss(pred: &Prediction, t: usize) -> Result<f64> {
    Ok(nn::cross_entropy(pred, pred.snd())? - nn::cross_entropy(pred, t)?)
}

/// Gradient of the positive loss with respect to all parameters, with the
/// predicted class frozen at its current value.
pub fn grad_positive_loss(net: &MlpNetwork, x: &[f64], t: usize) -> Result<ParamVector> {
    let mut acc = ParamVector::zeros(net.param_count());
    accumulate_positive(net, x, t, 1.0, acc.as_mut_slice())?;
    Ok(acc)
}

/// Gradient of the negative loss with respect to all parameters, with the
/// runner-up class frozen at its current value.
pub fn grad_negative_loss(net: &MlpNetwork, x: &[f64], t: usize) -> Result<ParamVector> {
    let mut acc = ParamVector::zeros(net.param_count());
    accumulate_negative(net, x, t, 1.0, acc.as_mut_slice())?;
    Ok(acc)
}

/// Adds `scale * grad PL(x, t)` into `acc`.
///
/// Both relative losses are differences of cross-entropies, so their
/// output-layer sensitivities reduce to differences of one-hot vectors and a
/// single backward pass per sample suffices.
fn accumulate_positive(
    net: &MlpNetwork,
    x: &[f64],
    t: usize,
    scale: f64,
    acc: &mut [f64],
) -> Result<()> {
    check_class(net, t)?;
    let trace = net.forward_trace(x)?;
    let (fst, _) = top_two_of(trace.probs());
    let mut delta = vec![0.0; net.class_count()];
    delta[fst] += 1.0;
    delta[t] -= 1.0;
    net.backprop_accumulate(&trace, &delta, scale, acc);
    Ok(())
}

/// Adds `scale * grad NL(x, t)` into `acc`.
fn accumulate_negative(
    net: &MlpNetwork,
    x: &[f64],
    t: usize,
    scale: f64,
    acc: &mut [f64],
) -> Result<()> {
    check_class(net, t)?;
    let trace = net.forward_trace(x)?;
    let (_, snd) = top_two_of(trace.probs());
    let mut delta = vec![0.0; net.class_count()];
    delta[t] += 1.0;
    delta[snd] -= 1.0;
    net.backprop_accumulate(&trace, &delta, scale, acc);
    Ok(())
}

fn check_class(net: &MlpNetwork, t: usize) -> Result<()> {
    if t >= net.class_count() {
        return Err(Error::ClassOutOfRange {
            class: t,
            class_count: net.class_count(),
        });
    }
    Ok(())
}

/// Largest and second-largest indices of a probability vector, lower index
/// winning ties; mirrors the prediction ordering.
fn top_two_of(probs: &[f64]) -> (usize, usize) {
    let mut fst = 0;
    for (k, &v) in probs.iter().enumerate().skip(1) {
        if v > probs[fst] {
            fst = k;
        }
    }
    let mut snd = usize::MAX;
    for (k, &v) in probs.iter().enumerate() {
        if k == fst {
            continue;
        }
        if snd == usize::MAX || v > probs[snd] {
            snd = k;
        }
    }
    (fst, snd)
}

/// Cached gradient aggregate for one class under one checkpoint.
///
/// The vector is `sum over failed of -grad PL` minus
/// `sum over succeeded of -grad NL`, in canonical parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSumRecord {
    /// Checkpoint the gradients were taken at.
    pub round: usize,
    pub class: usize,
    pub path: PathTag,
    /// Mini-batch size; zero on the per-sample path.
    pub batch_size: usize,
    pub sample_count: usize,
    pub failed_count: usize,
    pub succeeded_count: usize,
    pub vector: ParamVector,
}

impl GradSumRecord {
    /// Zero aggregate over no samples.
    pub fn empty(
        round: usize,
        class: usize,
        param_len: usize,
        path: PathTag,
        batch_size: usize,
    ) -> Self {
        GradSumRecord {
            round,
            class,
            path,
            batch_size,
            sample_count: 0,
            failed_count: 0,
            succeeded_count: 0,
            vector: ParamVector::zeros(param_len),
        }
    }

    /// Checks internal count and path consistency.
    pub fn validate(&self) -> Result<()> {
        if self.sample_count != self.failed_count + self.succeeded_count {
            return Err(Error::CacheConsistency(format!(
                "sample count {} != failed {} + succeeded {}",
                self.sample_count, self.failed_count, self.succeeded_count
            )));
        }
        match self.path {
            PathTag::PerSample if self.batch_size != 0 => Err(Error::CacheConsistency(
                format!("per-sample record with batch size {}", self.batch_size),
            )),
            PathTag::MiniBatch if self.batch_size == 0 => Err(Error::CacheConsistency(
                "mini-batch record with zero batch size".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Extends this aggregate with another over disjoint samples of the same
    /// class, taken at the same checkpoint along the same path.
    ///
    /// Cached aggregates are defined by this merge applied in round order, so
    /// replaying the same extensions always reproduces bit-identical vectors.
    pub fn merge(&mut self, other: &GradSumRecord) -> Result<()> {
        if self.class != other.class {
            return Err(Error::CacheConsistency(format!(
                "merging class {} into class {}",
                other.class, self.class
            )));
        }
        if self.round != other.round {
            return Err(Error::CacheConsistency(format!(
                "merging checkpoint {} aggregate into checkpoint {}",
                other.round, self.round
            )));
        }
        if self.path != other.path || self.batch_size != other.batch_size {
            return Err(Error::CacheConsistency(
                "merging aggregates from different accumulation paths".into(),
            ));
        }
        if self.vector.len() != other.vector.len() {
            return Err(Error::LayoutMismatch {
                a: self.vector.len(),
                b: other.vector.len(),
            });
        }
        for (a, b) in self
            .vector
            .as_mut_slice()
            .iter_mut()
            .zip(other.vector.as_slice())
        {
            *a += b;
        }
        self.sample_count += other.sample_count;
        self.failed_count += other.failed_count;
        self.succeeded_count += other.succeeded_count;
        Ok(())
    }
}

/// Per-sample gradient aggregate for one class partition.
///
/// Samples are visited in globally ascending id order across both sets, each
/// adding into a single accumulator: `-grad PL` for failed samples,
/// `+grad NL` for succeeded ones.
pub fn grad_sum(net: &MlpNetwork, data: &Dataset, part: &ClassPartition) -> Result<GradSumRecord> {
    if part.sample_count() == 0 {
        return Err(Error::EmptyClass { class: part.class });
    }
    let mut rec = GradSumRecord::empty(
        part.round,
        part.class,
        net.param_count(),
        PathTag::PerSample,
        0,
    );
    let acc = rec.vector.as_mut_slice();
    for (id, is_failed) in part.ascending() {
        let ex = data.get(id)?;
        if is_failed {
            accumulate_positive(net, &ex.features, part.class, -1.0, acc)?;
        } else {
            accumulate_negative(net, &ex.features, part.class, 1.0, acc)?;
        }
    }
    rec.failed_count = part.failed.len();
    rec.succeeded_count = part.succeeded.len();
    rec.sample_count = part.sample_count();
    Ok(rec)
}

/// Mini-batch gradient aggregate for one class partition.
///
/// Batches are consecutive runs of at most `batch_size` ids from the
/// ascending failed list, then the ascending succeeded list. Each batch
/// contributes the gradient of its mean loss scaled back by its size,
/// evaluated as sum, then divide, then multiply, in that order.
pub fn grad_sum_minibatch(
    net: &MlpNetwork,
    data: &Dataset,
    part: &ClassPartition,
    batch_size: usize,
) -> Result<GradSumRecord> {
    if batch_size == 0 {
        return Err(Error::Config("mini-batch size must be positive".into()));
    }
    if part.sample_count() == 0 {
        return Err(Error::EmptyClass { class: part.class });
    }
    let mut rec = GradSumRecord::empty(
        part.round,
        part.class,
        net.param_count(),
        PathTag::MiniBatch,
        batch_size,
    );
    let mut batch_acc = vec![0.0; net.param_count()];

    for (ids, positive) in [(&part.failed, true), (&part.succeeded, false)] {
        for batch in ids.chunks(batch_size) {
            batch_acc.fill(0.0);
            for &id in batch {
                let ex = data.get(id)?;
                if positive {
                    accumulate_positive(net, &ex.features, part.class, 1.0, &mut batch_acc)?;
                } else {
                    accumulate_negative(net, &ex.features, part.class, 1.0, &mut batch_acc)?;
                }
            }
            let n = batch.len() as f64;
            let sign = if positive { -1.0 } else { 1.0 };
            for (total, &sum) in rec.vector.as_mut_slice().iter_mut().zip(&batch_acc) {
                let mean = sum / n;
                *total += sign * (mean * n);
            }
        }
    }
    rec.failed_count = part.failed.len();
    rec.succeeded_count = part.succeeded.len();
    rec.sample_count = part.sample_count();
    Ok(rec)
}

/// Effect score of a parameter update on one class: the dot product of the
/// cached aggregate with the update delta. Cost depends only on the
/// parameter count, never on the evaluation-set size.
pub fn effect(gradsum: &GradSumRecord, delta: &ParamVector) -> Result<f64> {
    gradsum.vector.dot(delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabeledExample;
    use crate::nn::{cross_entropy, grad_class_loss, param_delta};
    use crate::rng::Stream;
    use crate::train;

    fn small_dataset(n: usize, dim: usize, classes: usize, seed: u64) -> Dataset {
        let mut s = Stream::new(seed);
        let examples = (0..n)
            .map(|id| LabeledExample {
                id: id as u64,
                features: (0..dim).map(|_| s.normal()).collect(),
                label: s.below(classes as u64) as usize,
            })
            .collect();
        Dataset::new(examples, classes).unwrap()
    }

    fn rel_close(a: f64, b: f64, rel: f64) -> bool {
        let scale = a.abs().max(b.abs()).max(1e-30);
        (a - b).abs() / scale <= rel
    }

    #[test]
    fn relative_loss_examples() {
        let pred = Prediction::from_probs(vec![0.2, 0.5, 0.3]).unwrap();
        // fst = 1, snd = 2.
        let pl = positive_loss(&pred, 0).unwrap();
        assert!((pl - (0.5f64 / 0.2).ln()).abs() < 1e-12);
        let nl = negative_loss(&pred, 1).unwrap();
        assert!((nl - (0.5f64 / 0.3).ln()).abs() < 1e-12);
        // A correct prediction has zero positive loss.
        assert_eq!(positive_loss(&pred, 1).unwrap(), 0.0);
    }

    #[test]
    fn tied_probabilities_give_zero_relative_loss() {
        let tied = Prediction::from_probs(vec![0.5, 0.5, 0.0]).unwrap();
        assert_eq!(tied.fst(), 0);
        assert_eq!(positive_loss(&tied, 1).unwrap(), 0.0);

        let pred = Prediction::from_probs(vec![0.4, 0.3, 0.3]).unwrap();
        // snd = 1 by tie-break; t = 2 has the same probability.
        assert_eq!(negative_loss(&pred, 2).unwrap(), 0.0);
    }

    #[test]
    fn two_class_negative_loss() {
        let pred = Prediction::from_probs(vec![0.7, 0.3]).unwrap();
        let nl = negative_loss(&pred, 0).unwrap();
        assert!((nl - (0.7f64 / 0.3).ln()).abs() < 1e-12);
    }

    #[test]
    fn positive_loss_is_non_negative() {
        let mut s = Stream::new(404);
        for _ in 0..200 {
            let raw: Vec<f64> = (0..4).map(|_| s.uniform(0.01, 1.0)).collect();
            let total: f64 = raw.iter().sum();
            let pred = Prediction::from_probs(raw.iter().map(|v| v / total).collect()).unwrap();
            for t in 0..4 {
                assert!(positive_loss(&pred, t).unwrap() >= 0.0);
            }
            assert!(negative_loss(&pred, pred.fst()).unwrap() >= 0.0);
        }
    }

    #[test]
    fn grad_positive_loss_matches_loss_difference_gradient() {
        // PL and NL gradients must equal the difference of plain
        // cross-entropy gradients taken at the frozen fst and snd.
        let net = train::init_network(&[5, 9, 3], 61).unwrap();
        let mut s = Stream::new(62);
        let x: Vec<f64> = (0..5).map(|_| s.normal()).collect();
        let pred = net.forward(&x).unwrap();
        let t = (pred.fst() + 1) % 3;

        let gp = grad_positive_loss(&net, &x, t).unwrap();
        let direct = grad_class_loss(&net, &x, t)
            .unwrap()
            .sub(&grad_class_loss(&net, &x, pred.fst()).unwrap())
            .unwrap();
        for (a, b) in gp.as_slice().iter().zip(direct.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }

        let gn = grad_negative_loss(&net, &x, pred.fst()).unwrap();
        let direct = grad_class_loss(&net, &x, pred.snd())
            .unwrap()
            .sub(&grad_class_loss(&net, &x, pred.fst()).unwrap())
            .unwrap();
        for (a, b) in gn.as_slice().iter().zip(direct.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_positive_loss_is_zero_when_correct() {
        let net = train::init_network(&[4, 6, 3], 65).unwrap();
        let mut s = Stream::new(66);
        let x: Vec<f64> = (0..4).map(|_| s.normal()).collect();
        let fst = net.forward(&x).unwrap().fst();
        let g = grad_positive_loss(&net, &x, fst).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_positive_loss_matches_finite_differences() {
        let dims = [4usize, 7, 3];
        let net = train::init_network(&dims, 71).unwrap();
        let mut s = Stream::new(72);
        let x: Vec<f64> = (0..4).map(|_| s.normal()).collect();
        let pred = net.forward(&x).unwrap();
        let t = (pred.fst() + 1) % 3;
        let fst = pred.fst();
        let grad = grad_positive_loss(&net, &x, t).unwrap();
        let base = net.flatten_params();

        let h = 1e-5;
        let mut coords = Stream::new(73);
        for _ in 0..15 {
            let i = coords.below(base.len() as u64) as usize;
            let eval = |shift: f64| {
                let mut p = base.clone();
                p.as_mut_slice()[i] += shift;
                let pert = MlpNetwork::from_params(&dims, &p).unwrap();
                let pd = pert.forward(&x).unwrap();
                // Keep fst frozen at the unperturbed prediction.
                cross_entropy(&pd, t).unwrap() - cross_entropy(&pd, fst).unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = grad.as_slice()[i];
            let err = (numeric - analytic).abs();
            assert!(
                err <= 1e-6 || err / analytic.abs().max(numeric.abs()) <= 1e-4,
                "coord {i}: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn partition_splits_by_verdict_in_ascending_order() {
        let data = small_dataset(60, 4, 3, 81);
        let net = train::init_network(&[4, 8, 3], 82).unwrap();
        let ids: Vec<u64> = (0..60).rev().collect();
        for class in 0..3 {
            let part = partition(&net, &data, &ids, class, 7).unwrap();
            assert_eq!(part.round, 7);
            assert!(part.failed.windows(2).all(|w| w[0] < w[1]));
            assert!(part.succeeded.windows(2).all(|w| w[0] < w[1]));
            for &id in &part.failed {
                let ex = data.get(id).unwrap();
                assert_eq!(ex.label, class);
                assert_ne!(net.forward(&ex.features).unwrap().fst(), class);
            }
            for &id in &part.succeeded {
                let ex = data.get(id).unwrap();
                assert_eq!(ex.label, class);
                assert_eq!(net.forward(&ex.features).unwrap().fst(), class);
            }
        }
        let counts: usize = (0..3)
            .map(|c| partition(&net, &data, &ids, c, 7).unwrap().sample_count())
            .sum();
        assert_eq!(counts, 60);
    }

    #[test]
    fn zero_net_puts_class_zero_in_succeeded() {
        // All outputs tie, fst = 0 everywhere: class 0 fully succeeds and
        // every other class fully fails.
        let net = MlpNetwork::zeros(&[4, 3]).unwrap();
        let data = small_dataset(30, 4, 3, 83);
        let ids: Vec<u64> = (0..30).collect();
        let part0 = partition(&net, &data, &ids, 0, 0).unwrap();
        assert!(part0.failed.is_empty());
        assert_eq!(part0.succeeded.len(), part0.sample_count());
        let part1 = partition(&net, &data, &ids, 1, 0).unwrap();
        assert!(part1.succeeded.is_empty());
    }

    #[test]
    fn partition_of_absent_class_is_an_error() {
        let mut s = Stream::new(84);
        let examples = (0..20)
            .map(|id| LabeledExample {
                id,
                features: (0..4).map(|_| s.normal()).collect(),
                label: 0,
            })
            .collect();
        let data = Dataset::new(examples, 3).unwrap();
        let net = train::init_network(&[4, 6, 3], 85).unwrap();
        let ids: Vec<u64> = (0..20).collect();
        assert!(matches!(
            partition(&net, &data, &ids, 2, 0),
            Err(Error::EmptyClass { class: 2 })
        ));
    }

    #[test]
    fn effect_hand_example() {
        let mut rec = GradSumRecord::empty(1, 0, 3, PathTag::PerSample, 0);
        rec.vector = ParamVector::from_vec(vec![1.0, -2.0, 3.0]);
        let delta = ParamVector::from_vec(vec![0.1, 0.1, 0.1]);
        assert!((effect(&rec, &delta).unwrap() - 0.2).abs() < 1e-15);

        let zero = ParamVector::zeros(3);
        assert_eq!(effect(&rec, &zero).unwrap(), 0.0);

        // Scaling by a power of two is exact.
        let doubled = delta.scale(2.0);
        assert_eq!(
            effect(&rec, &doubled).unwrap(),
            2.0 * effect(&rec, &delta).unwrap()
        );
    }

    #[test]
    fn effect_equals_per_sample_influence_sum() {
        // Aggregate-then-dot must agree with summing per-sample influences.
        let dims = [4usize, 8, 3];
        let before = train::init_network(&dims, 91).unwrap();
        let data = small_dataset(40, 4, 3, 92);
        let mut shift = Stream::new(93);
        let mut after_params = before.flatten_params();
        for v in after_params.as_mut_slice() {
            *v += 0.01 * shift.normal();
        }
        let delta = param_delta(&before.flatten_params(), &after_params).unwrap();

        let ids: Vec<u64> = (0..40).collect();
        for class in 0..3 {
            let part = partition(&before, &data, &ids, class, 0).unwrap();
            let rec = grad_sum(&before, &data, &part).unwrap();
            let fast = effect(&rec, &delta).unwrap();

            let mut slow = 0.0;
            for &id in &part.failed {
                let ex = data.get(id).unwrap();
                let g = grad_positive_loss(&before, &ex.features, class).unwrap();
                slow += -g.dot(&delta).unwrap();
            }
            for &id in &part.succeeded {
                let ex = data.get(id).unwrap();
                let g = grad_negative_loss(&before, &ex.features, class).unwrap();
                slow -= -g.dot(&delta).unwrap();
            }
            assert!(rel_close(fast, slow, 1e-9), "class {class}: {fast} vs {slow}");
        }
    }

    #[test]
    fn minibatch_size_one_matches_per_sample() {
        let net = train::init_network(&[4, 8, 3], 101).unwrap();
        let data = small_dataset(50, 4, 3, 102);
        let ids: Vec<u64> = (0..50).collect();
        for class in 0..3 {
            let part = partition(&net, &data, &ids, class, 0).unwrap();
            let per_sample = grad_sum(&net, &data, &part).unwrap();
            let mb = grad_sum_minibatch(&net, &data, &part, 1).unwrap();
            // Only the summation order differs between the two paths.
            for (a, b) in per_sample.vector.as_slice().iter().zip(mb.vector.as_slice()) {
                assert!(rel_close(*a, *b, 1e-12), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn minibatch_agrees_with_per_sample_within_tolerance() {
        let net = train::init_network(&[4, 8, 3], 111).unwrap();
        let data = small_dataset(64, 4, 3, 112);
        let ids: Vec<u64> = (0..64).collect();
        let part = partition(&net, &data, &ids, 1, 0).unwrap();
        let per_sample = grad_sum(&net, &data, &part).unwrap();
        for bs in [3usize, 7, 64] {
            let mb = grad_sum_minibatch(&net, &data, &part, bs).unwrap();
            for (a, b) in per_sample.vector.as_slice().iter().zip(mb.vector.as_slice()) {
                assert!(rel_close(*a, *b, 1e-9), "bs {bs}: {a} vs {b}");
            }
            assert_eq!(mb.batch_size, bs);
        }
    }

    #[test]
    fn merge_accumulates_counts_and_vectors() {
        let net = train::init_network(&[4, 8, 3], 121).unwrap();
        let data = small_dataset(60, 4, 3, 122);
        let first: Vec<u64> = (0..30).collect();
        let second: Vec<u64> = (30..60).collect();
        let all: Vec<u64> = (0..60).collect();

        let class = 2;
        let part_a = partition(&net, &data, &first, class, 0).unwrap();
        let part_b = partition(&net, &data, &second, class, 0).unwrap();
        let part_all = partition(&net, &data, &all, class, 0).unwrap();

        let mut merged = grad_sum(&net, &data, &part_a).unwrap();
        merged.merge(&grad_sum(&net, &data, &part_b).unwrap()).unwrap();
        let single = grad_sum(&net, &data, &part_all).unwrap();

        assert_eq!(merged.sample_count, single.sample_count);
        assert_eq!(merged.failed_count, single.failed_count);
        assert_eq!(merged.succeeded_count, single.succeeded_count);
        for (a, b) in merged.vector.as_slice().iter().zip(single.vector.as_slice()) {
            assert!(rel_close(*a, *b, 1e-9), "{a} vs {b}");
        }
    }

    #[test]
    fn merge_with_empty_record_is_identity() {
        let net = train::init_network(&[4, 8, 3], 123).unwrap();
        let data = small_dataset(30, 4, 3, 124);
        let ids: Vec<u64> = (0..30).collect();
        let part = partition(&net, &data, &ids, 0, 5).unwrap();
        let rec = grad_sum(&net, &data, &part).unwrap();
        let mut merged = GradSumRecord::empty(5, 0, net.param_count(), PathTag::PerSample, 0);
        merged.merge(&rec).unwrap();
        assert_eq!(merged, rec);
    }

    #[test]
    fn merge_is_commutative_within_rounding() {
        let net = train::init_network(&[4, 8, 3], 125).unwrap();
        let data = small_dataset(40, 4, 3, 126);
        let left: Vec<u64> = (0..20).collect();
        let right: Vec<u64> = (20..40).collect();
        let pa = partition(&net, &data, &left, 1, 0).unwrap();
        let pb = partition(&net, &data, &right, 1, 0).unwrap();
        let ra = grad_sum(&net, &data, &pa).unwrap();
        let rb = grad_sum(&net, &data, &pb).unwrap();

        let mut ab = ra.clone();
        ab.merge(&rb).unwrap();
        let mut ba = rb.clone();
        ba.merge(&ra).unwrap();
        for (x, y) in ab.vector.as_slice().iter().zip(ba.vector.as_slice()) {
            assert!(rel_close(*x, *y, 1e-12), "{x} vs {y}");
        }
        assert_eq!(ab.sample_count, ba.sample_count);
    }

    #[test]
    fn merge_rejects_mismatched_records() {
        let a = GradSumRecord::empty(1, 0, 10, PathTag::PerSample, 0);
        let mut b = GradSumRecord::empty(1, 1, 10, PathTag::PerSample, 0);
        assert!(matches!(b.merge(&a), Err(Error::CacheConsistency(_))));

        let mut c = GradSumRecord::empty(2, 0, 10, PathTag::PerSample, 0);
        assert!(matches!(c.merge(&a), Err(Error::CacheConsistency(_))));

        let mut d = GradSumRecord::empty(1, 0, 10, PathTag::MiniBatch, 8);
        assert!(matches!(d.merge(&a), Err(Error::CacheConsistency(_))));

        let mut e = GradSumRecord::empty(1, 0, 12, PathTag::PerSample, 0);
        assert!(matches!(e.merge(&a), Err(Error::LayoutMismatch { .. })));
    }

    #[test]
    fn grad_sum_is_bit_deterministic() {
        let net = train::init_network(&[4, 8, 3], 131).unwrap();
        let data = small_dataset(40, 4, 3, 132);
        let ids: Vec<u64> = (0..40).collect();
        let part = partition(&net, &data, &ids, 0, 0).unwrap();
        let a = grad_sum(&net, &data, &part).unwrap();
        let b = grad_sum(&net, &data, &part).unwrap();
        assert_eq!(a.vector.as_slice(), b.vector.as_slice());
    }

    #[test]
    fn empty_partition_is_rejected() {
        let net = train::init_network(&[4, 8, 3], 141).unwrap();
        let data = small_dataset(10, 4, 3, 142);
        let part = ClassPartition::from_sorted(1, 0, Vec::new(), Vec::new()).unwrap();
        assert!(matches!(
            grad_sum(&net, &data, &part),
            Err(Error::EmptyClass { class: 1 })
        ));
        assert!(matches!(
            grad_sum_minibatch(&net, &data, &part, 4),
            Err(Error::EmptyClass { class: 1 })
        ));
    }

    #[test]
    fn overlapping_partition_is_rejected() {
        assert!(matches!(
            ClassPartition::from_sorted(0, 0, vec![1, 5, 9], vec![3, 5]),
            Err(Error::CacheConsistency(_))
        ));
        assert!(matches!(
            ClassPartition::from_sorted(0, 0, vec![5, 1], vec![]),
            Err(Error::CacheConsistency(_))
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn effect_is_additive_over_merge(seed in 0u64..500) {
                let net = train::init_network(&[3, 6, 3], seed).unwrap();
                let data = small_dataset(24, 3, 3, seed ^ 0x55);
                let left: Vec<u64> = (0..12).collect();
                let right: Vec<u64> = (12..24).collect();
                let mut dir = Stream::new(seed ^ 0x99);
                let delta = ParamVector::from_vec(
                    (0..net.param_count()).map(|_| 0.01 * dir.normal()).collect(),
                );

                let pa = partition(&net, &data, &left, 0, 0);
                let pb = partition(&net, &data, &right, 0, 0);
                let (pa, pb) = match (pa, pb) {
                    (Ok(a), Ok(b)) => (a, b),
                    // A half without class-0 samples aborts the case.
                    _ => return Ok(()),
                };
                let ra = grad_sum(&net, &data, &pa).unwrap();
                let rb = grad_sum(&net, &data, &pb).unwrap();
                let mut merged = ra.clone();
                merged.merge(&rb).unwrap();

                let lhs = effect(&merged, &delta).unwrap();
                let rhs = effect(&ra, &delta).unwrap() + effect(&rb, &delta).unwrap();
                let scale = lhs.abs().max(rhs.abs()).max(1e-12);
                prop_assert!((lhs - rhs).abs() / scale <= 1e-9);
            }

            #[test]
            fn positive_loss_zero_iff_correct(seed in 0u64..2_000) {
                let net = train::init_network(&[3, 5, 3], seed).unwrap();
                let mut s = Stream::new(seed ^ 0x1234);
                let x: Vec<f64> = (0..3).map(|_| s.normal()).collect();
                let pred = net.forward(&x).unwrap();
                for t in 0..3 {
                    let pl = positive_loss(&pred, t).unwrap();
                    if t == pred.fst() {
                        prop_assert_eq!(pl, 0.0);
                    } else {
                        prop_assert!(pl >= 0.0);
                    }
                }
            }
        }
    }
}
