//! Deterministic mini-batch SGD producing the checkpoint sequence.
//!
//! Training is plain stochastic gradient descent on mean cross-entropy, with
//! one shuffled permutation per epoch. Every stochastic choice derives from
//! the config seed and the round index, so a run can be replayed bit for bit
//! on any platform and thread count.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{param_delta, MlpNetwork, ParamVector, PROB_FLOOR};
use crate::rng::{fnv1a, Stream};

/// Hyperparameters for one training round.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_round: usize,
    /// Drives initialization and every epoch shuffle.
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.epochs_per_round == 0 {
            return Err(Error::Config("epochs per round must be positive".into()));
        }
        Ok(())
    }

    /// Stable hash of the hyperparameters and network geometry, recorded in
    /// checkpoints so resumed runs can detect configuration drift.
    pub fn fingerprint(&self, layer_dims: &[usize]) -> u64 {
        let mut bytes = Vec::with_capacity(8 * (layer_dims.len() + 4));
        for &d in layer_dims {
            bytes.extend_from_slice(&(d as u64).to_le_bytes());
        }
        bytes.extend_from_slice(&self.learning_rate.to_bits().to_le_bytes());
        bytes.extend_from_slice(&(self.batch_size as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.epochs_per_round as u64).to_le_bytes());
        bytes.extend_from_slice(&self.seed.to_le_bytes());
        fnv1a(&bytes)
    }
}

/// A trained network together with its position in the round sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub round: usize,
    pub net: MlpNetwork,
    /// Fingerprint of the config and geometry that produced this snapshot.
    pub config_hash: u64,
    /// Previous round, if any; the initial checkpoint has none.
    pub parent_round: Option<usize>,
}

/// Initializes a network with uniform weights in
/// `[-sqrt(6 / (fan_in + fan_out)), sqrt(6 / (fan_in + fan_out))]` and zero
/// biases.
///
/// Weights are drawn from the stream derived from `seed` with purpose
/// `"init"`, in canonical layout order, so the same seed always yields a
/// bit-identical network.
pub fn init_network(layer_dims: &[usize], seed: u64) -> Result<MlpNetwork> {
    let zero = MlpNetwork::zeros(layer_dims)?;
    let mut stream = Stream::derive(seed, 0, "init");
    let mut params = vec![0.0; zero.param_count()];
    let mut at = 0;
    for w in layer_dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        for _ in 0..fan_out {
            for _ in 0..fan_in {
                params[at] = stream.uniform(-limit, limit);
                at += 1;
            }
            // Bias coordinate stays zero.
            at += 1;
        }
    }
    MlpNetwork::from_params(layer_dims, &ParamVector::from_vec(params))
}

/// Mean cross-entropy of `net` over the given sample ids.
pub fn mean_loss(net: &MlpNetwork, data: &Dataset, ids: &[u64]) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::EmptyInput {
            context: "mean loss over no samples",
        });
    }
    let mut total = 0.0;
    for &id in ids {
        let ex = data.get(id)?;
        let pred = net.forward(&ex.features)?;
        total += -libm::log(pred.probs()[ex.label].clamp(PROB_FLOOR, 1.0));
    }
    Ok(total / ids.len() as f64)
}

/// Runs one round of mini-batch SGD and returns the updated network together
/// with the parameter delta `after - before`.
///
/// Each epoch shuffles the training ids with the stream derived from
/// `(cfg.seed, round, "train")` and walks them in consecutive batches; every
/// batch applies one step of `learning_rate` times the mean gradient.
pub fn train_round(
    net: &MlpNetwork,
    data: &Dataset,
    train_ids: &[u64],
    round: usize,
    cfg: &TrainConfig,
) -> Result<(MlpNetwork, ParamVector)> {
    cfg.validate()?;
    if train_ids.is_empty() {
        return Err(Error::EmptyInput {
            context: "training round with no samples",
        });
    }
    if data.feature_dim() != net.input_dim() {
        return Err(Error::InputShape {
            expected: net.input_dim(),
            got: data.feature_dim(),
        });
    }
    if data.class_count() > net.class_count() {
        return Err(Error::ClassOutOfRange {
            class: data.class_count() - 1,
            class_count: net.class_count(),
        });
    }

    let mut current = net.clone();
    let mut stream = Stream::derive(cfg.seed, round as u64, "train");
    let mut order = train_ids.to_vec();
    let mut grad = vec![0.0; net.param_count()];
    let mut last = (0, 0);

    for epoch in 0..cfg.epochs_per_round {
        stream.shuffle(&mut order);
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            last = (epoch, batch_idx);
            grad.fill(0.0);
            let mut batch_loss = 0.0;
            for &id in batch {
                let ex = data.get(id)?;
                let trace = current.forward_trace(&ex.features).map_err(|e| match e {
                    Error::NumericOverflow { .. } => Error::Divergence {
                        epoch,
                        batch: batch_idx,
                    },
                    other => other,
                })?;
                batch_loss += -libm::log(trace.probs()[ex.label].clamp(PROB_FLOOR, 1.0));
                let mut delta = trace.probs().to_vec();
                delta[ex.label] -= 1.0;
                current.backprop_accumulate(&trace, &delta, 1.0, &mut grad);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                });
            }
            current.apply_step(&grad, cfg.learning_rate / batch.len() as f64);
        }
    }

    let after = current.flatten_params();
    if after.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            epoch: last.0,
            batch: last.1,
        });
    }
    let delta = param_delta(&net.flatten_params(), &after)?;
    Ok((current, delta))
}
