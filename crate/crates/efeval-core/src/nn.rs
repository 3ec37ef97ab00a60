//! Minimal deterministic feedforward classifier.
//!
//! A network is a stack of dense layers: rectifier activations on every hidden
//! layer and a softmax on the output layer. All arithmetic is `f64`, all
//! transcendentals go through `libm`, and every loop has a fixed iteration
//! order, so identical inputs give bit-identical outputs on every platform.
//!
//! Parameters live in one canonical flat layout shared by every consumer of
//! [`ParamVector`]: neurons are enumerated layer by layer, and each neuron
//! contributes the block `[incoming weights in input-index order, bias]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::LabeledExample;
use crate::error::{Error, Result};

/// Canonical flat view of network parameters.
///
/// Also used for parameter deltas, gradients, and gradient sums; two vectors
/// may be combined only when they come from the same layer geometry, which is
/// checked through their lengths.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::LayoutMismatch {
                a: self.0.len(),
                b: other.0.len(),
            });
        }
        Ok(())
    }

    /// Elementwise sum.
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_layout(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_layout(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// Scales every entry by `factor`.
    pub fn scale(&self, factor: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * factor).collect())
    }

    /// Dot product, accumulated in index order.
    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other)?;
        let mut acc = 0.0;
        for (a, b) in self.0.iter().zip(&other.0) {
            acc += a * b;
        }
        Ok(acc)
    }
}

/// Update difference `b - a` in the canonical layout.
pub fn param_delta(a: &ParamVector, b: &ParamVector) -> Result<ParamVector> {
    b.sub(a)
}

/// Output of a forward pass: the class-probability vector together with the
/// top and second classes.
///
/// Ties are broken toward the lower class index, so `fst` is the smallest
/// index attaining the maximum and `snd` the smallest index attaining the
/// maximum over the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    probs: Vec<f64>,
    fst: usize,
    snd: usize,
}

impl Prediction {
    /// Builds a prediction from an explicit probability vector.
    ///
    /// Entries must be finite, lie in `[0, 1]`, and sum to 1 within 1e-9.
    pub fn from_probs(probs: Vec<f64>) -> Result<Prediction> {
        if probs.len() < 2 {
            return Err(Error::Config(format!(
                "prediction needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        let mut sum = 0.0;
        for &p in &probs {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("invalid probability {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("probabilities sum to {sum}, not 1")));
        }
        let (fst, snd) = top_two(&probs);
        Ok(Prediction { probs, fst, snd })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn class_count(&self) -> usize {
        self.probs.len()
    }

    /// Class with the largest probability (lowest index on ties).
    pub fn fst(&self) -> usize {
        self.fst
    }

    /// Class with the second-largest probability (lowest index on ties).
    pub fn snd(&self) -> usize {
        self.snd
    }
}

/// Indices of the largest and second-largest entries, lower index winning ties.
fn top_two(values: &[f64]) -> (usize, usize) {
    debug_assert!(values.len() >= 2);
    let mut fst = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[fst] {
            fst = k;
        }
    }
    let mut snd = usize::MAX;
    for (k, &v) in values.iter().enumerate() {
        if k == fst {
            continue;
        }
        if snd == usize::MAX || v > values[snd] {
            snd = k;
        }
    }
    (fst, snd)
}

/// One dense layer; weights are row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
struct Layer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

/// Layered feedforward classifier: rectifier hidden layers, softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
}

impl MlpNetwork {
    /// Creates a network with all weights and biases zero.
    pub fn zeros(layer_dims: &[usize]) -> Result<MlpNetwork> {
        validate_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer {
                in_dim: w[0],
                out_dim: w[1],
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Ok(MlpNetwork {
            layer_dims: layer_dims.to_vec(),
            layers,
        })
    }

    /// Rebuilds a network from a flat parameter vector in canonical layout.
    pub fn from_params(layer_dims: &[usize], params: &ParamVector) -> Result<MlpNetwork> {
        let mut net = MlpNetwork::zeros(layer_dims)?;
        let expected = net.param_count();
        if params.len() != expected {
            return Err(Error::LayoutMismatch {
                a: expected,
                b: params.len(),
            });
        }
        let values = params.as_slice();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite parameter value".into()));
        }
        let mut idx = 0;
        for layer in &mut net.layers {
            for o in 0..layer.out_dim {
                let row = o * layer.in_dim;
                layer.weights[row..row + layer.in_dim]
                    .copy_from_slice(&values[idx..idx + layer.in_dim]);
                idx += layer.in_dim;
                layer.biases[o] = values[idx];
                idx += 1;
            }
        }
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// Input dimension.
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Number of output classes.
    pub fn class_count(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Total parameter count: per layer `(fan_in + 1) * fan_out`.
    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// Flattens all parameters into the canonical layout.
    pub fn flatten_params(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for o in 0..layer.out_dim {
                let row = o * layer.in_dim;
                out.extend_from_slice(&layer.weights[row..row + layer.in_dim]);
                out.push(layer.biases[o]);
            }
        }
        ParamVector(out)
    }

    /// Forward pass returning probabilities and the top-two classes.
    pub fn forward(&self, x: &[f64]) -> Result<Prediction> {
        let trace = self.forward_trace(x)?;
        Ok(trace.into_prediction())
    }

    /// Forward pass keeping every post-activation for a later backward pass.
    pub(crate) fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow { context: "input" });
        }
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &acts[l];
            let mut z = vec![0.0; layer.out_dim];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                *zo = dot(row, input) + layer.biases[o];
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow {
                    context: "pre-activation",
                });
            }
            if l < last {
                for v in &mut z {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            } else {
                softmax_in_place(&mut z);
            }
            acts.push(z);
        }
        Ok(Trace { acts })
    }

    /// Backpropagates from a sensitivity vector at the output pre-activation,
    /// adding `scale * gradient` into `acc` (canonical layout).
    ///
    /// With a softmax output and cross-entropy losses every loss used here has
    /// a closed-form output sensitivity, so one backward pass per sensitivity
    /// vector suffices.
    pub(crate) fn backprop_accumulate(
        &self,
        trace: &Trace,
        output_delta: &[f64],
        scale: f64,
        acc: &mut [f64],
    ) {
        debug_assert_eq!(output_delta.len(), self.class_count());
        debug_assert_eq!(acc.len(), self.param_count());
        let offsets = self.layer_offsets();
        let mut delta = output_delta.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.acts[l];
            let base = offsets[l];
            let block = layer.in_dim + 1;
            for (o, &d) in delta.iter().enumerate() {
                let sd = scale * d;
                let at = base + o * block;
                let grads = &mut acc[at..at + layer.in_dim];
                for (g, &inp) in grads.iter_mut().zip(input) {
                    *g += sd * inp;
                }
                acc[at + layer.in_dim] += sd;
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // Rectifier subgradient: zero wherever the unit was inactive.
                for (p, &a) in prev.iter_mut().zip(&trace.acts[l]) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Flat offset of each layer's first parameter in the canonical layout.
    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for layer in &self.layers {
            offsets.push(at);
            at += (layer.in_dim + 1) * layer.out_dim;
        }
        offsets
    }

    /// In-place SGD step `params -= step * gradient` in canonical layout.
    pub(crate) fn apply_step(&mut self, gradient: &[f64], step: f64) {
        debug_assert_eq!(gradient.len(), self.param_count());
        let mut idx = 0;
        for layer in &mut self.layers {
            for o in 0..layer.out_dim {
                let row = o * layer.in_dim;
                for w in &mut layer.weights[row..row + layer.in_dim] {
                    *w -= step * gradient[idx];
                    idx += 1;
                }
                layer.biases[o] -= step * gradient[idx];
                idx += 1;
            }
        }
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::Config(format!(
            "need at least input and output dims, got {:?}",
            layer_dims
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::Config(format!("zero layer dimension in {layer_dims:?}")));
    }
    if *layer_dims.last().unwrap() < 2 {
        return Err(Error::Config(format!(
            "output layer needs at least 2 classes, got {}",
            layer_dims.last().unwrap()
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four lanes keep the reduction fast while staying bit-reproducible:
    // the pairing of indices to lanes never depends on anything but len.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    for i in chunks * 4..a.len() {
        acc[0] += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Stable softmax, replacing logits with probabilities.
fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Post-activation values of one forward pass; `acts[0]` is the input and the
/// final entry holds the softmax probabilities.
pub(crate) struct Trace {
    pub(crate) acts: Vec<Vec<f64>>,
}

impl Trace {
    pub(crate) fn probs(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    fn into_prediction(mut self) -> Prediction {
        let probs = self.acts.pop().unwrap();
        let (fst, snd) = top_two(&probs);
        Prediction { probs, fst, snd }
    }
}

/// Smallest probability fed to the logarithm; keeps losses finite on
/// saturated outputs without touching the raw probabilities.
pub(crate) const PROB_FLOOR: f64 = 1e-12;

/// Cross-entropy `-ln(probs[k])` against the one-hot target `k`.
pub fn cross_entropy(pred: &Prediction, k: usize) -> Result<f64> {
    if k >= pred.class_count() {
        return Err(Error::ClassOutOfRange {
            class: k,
            class_count: pred.class_count(),
        });
    }
    Ok(-libm::log(pred.probs[k].clamp(PROB_FLOOR, 1.0)))
}

/// Exact gradient of `cross_entropy(forward(net, x), k)` with respect to all
/// parameters, in canonical layout.
///
/// Uses the softmax shortcut: the output pre-activation sensitivity of
/// `-ln p_k` is `probs - onehot(k)`.
pub fn grad_class_loss(net: &MlpNetwork, x: &[f64], k: usize) -> Result<ParamVector> {
    if k >= net.class_count() {
        return Err(Error::ClassOutOfRange {
            class: k,
            class_count: net.class_count(),
        });
    }
    let trace = net.forward_trace(x)?;
    let mut delta = trace.probs().to_vec();
    delta[k] -= 1.0;
    let mut acc = vec![0.0; net.param_count()];
    net.backprop_accumulate(&trace, &delta, 1.0, &mut acc);
    Ok(ParamVector(acc))
}

/// Fraction of examples whose top predicted class equals the label.
pub fn accuracy<'a, I>(net: &MlpNetwork, examples: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a LabeledExample>,
{
    let mut total = 0usize;
    let mut correct = 0usize;
    for ex in examples {
        let pred = net.forward(&ex.features)?;
        if pred.fst() == ex.label {
            correct += 1;
        }
        total += 1;
    }
    if total == 0 {
        return Err(Error::EmptyInput {
            context: "accuracy over empty dataset",
        });
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::train;

    const LN_3: f64 = 1.0986122886681098;

    fn seeded_net(dims: &[usize], seed: u64) -> MlpNetwork {
        train::init_network(dims, seed).unwrap()
    }

    fn seeded_input(dim: usize, seed: u64) -> Vec<f64> {
        let mut s = Stream::new(seed);
        (0..dim).map(|_| s.normal()).collect()
    }

    #[test]
    fn zero_net_is_uniform_with_index_tie_break() {
        let net = MlpNetwork::zeros(&[4, 3]).unwrap();
        let pred = net.forward(&[0.3, -1.0, 2.0, 0.0]).unwrap();
        for &p in pred.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(pred.fst(), 0);
        assert_eq!(pred.snd(), 1);
    }

    #[test]
    fn fst_snd_ordering() {
        let pred = Prediction::from_probs(vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(pred.fst(), 1);
        assert_eq!(pred.snd(), 2);
    }

    #[test]
    fn forward_matches_hand_rolled_oracle() {
        // Independent path: std exp, naive loops over the flat layout.
        let dims = [4usize, 8, 3];
        let net = seeded_net(&dims, 2024);
        let x = seeded_input(4, 77);
        let flat = net.flatten_params().into_vec();

        let mut offset = 0;
        let mut act: Vec<f64> = x.clone();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let mut z = vec![0.0; fan_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let mut s = flat[offset + o * (fan_in + 1) + fan_in];
                for (i, &a) in act.iter().enumerate() {
                    s += flat[offset + o * (fan_in + 1) + i] * a;
                }
                *zo = s;
            }
            offset += (fan_in + 1) * fan_out;
            if l + 2 < dims.len() {
                act = z.into_iter().map(|v| v.max(0.0)).collect();
            } else {
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                act = exps.into_iter().map(|e| e / sum).collect();
            }
        }

        let pred = net.forward(&x).unwrap();
        for (ours, oracle) in pred.probs().iter().zip(&act) {
            assert!((ours - oracle).abs() < 1e-12, "{ours} vs {oracle}");
        }
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let net = MlpNetwork::zeros(&[4, 3]).unwrap();
        let err = net.forward(&[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::InputShape { expected: 4, got: 2 }));
    }

    #[test]
    fn forward_rejects_non_finite_input() {
        let net = MlpNetwork::zeros(&[2, 3]).unwrap();
        let err = net.forward(&[f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NumericOverflow { .. }));
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = Prediction::from_probs(vec![1.0 / 3.0; 3]).unwrap();
        assert!((cross_entropy(&uniform, 0).unwrap() - LN_3).abs() < 1e-12);

        let pred = Prediction::from_probs(vec![0.2, 0.5, 0.3]).unwrap();
        assert!((cross_entropy(&pred, 1).unwrap() - 0.5f64.ln().abs()).abs() < 1e-12);

        let saturated = Prediction::from_probs(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&saturated, 0).unwrap(), 0.0);
        // The floor keeps the loss finite on the zero side.
        assert!(cross_entropy(&saturated, 1).unwrap().is_finite());
    }

    #[test]
    fn cross_entropy_rejects_bad_class() {
        let pred = Prediction::from_probs(vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            cross_entropy(&pred, 2),
            Err(Error::ClassOutOfRange { class: 2, .. })
        ));
    }

    #[test]
    fn gradient_has_canonical_length() {
        let net = seeded_net(&[4, 8, 3], 5);
        let g = grad_class_loss(&net, &seeded_input(4, 6), 1).unwrap();
        assert_eq!(g.len(), net.param_count());
        assert_eq!(net.param_count(), (4 + 1) * 8 + (8 + 1) * 3);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let dims = [4usize, 8, 3];
        let net = seeded_net(&dims, 31);
        let x = seeded_input(4, 32);
        let k = 2usize;
        let grad = grad_class_loss(&net, &x, k).unwrap();
        let base = net.flatten_params();

        let mut coords = Stream::new(33);
        let h = 1e-5;
        for _ in 0..20 {
            let i = coords.below(base.len() as u64) as usize;
            let mut plus = base.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = base.clone();
            minus.as_mut_slice()[i] -= h;
            let lp = cross_entropy(
                &MlpNetwork::from_params(&dims, &plus).unwrap().forward(&x).unwrap(),
                k,
            )
            .unwrap();
            let lm = cross_entropy(
                &MlpNetwork::from_params(&dims, &minus).unwrap().forward(&x).unwrap(),
                k,
            )
            .unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grad.as_slice()[i];
            let err = (numeric - analytic).abs();
            let scale = analytic.abs().max(numeric.abs());
            assert!(
                err <= 1e-6 || err / scale <= 1e-4,
                "coord {i}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn output_bias_gradient_is_probs_minus_onehot() {
        // The output-layer bias coordinates expose the pre-activation
        // sensitivity directly.
        let dims = [4usize, 8, 3];
        let net = seeded_net(&dims, 8);
        let x = seeded_input(4, 9);
        let k = 0usize;
        let pred = net.forward(&x).unwrap();
        let grad = grad_class_loss(&net, &x, k).unwrap();

        let hidden_params = (4 + 1) * 8;
        for j in 0..3 {
            let bias_coord = hidden_params + j * (8 + 1) + 8;
            let expected = pred.probs()[j] - if j == k { 1.0 } else { 0.0 };
            assert!(
                (grad.as_slice()[bias_coord] - expected).abs() < 1e-10,
                "class {j}"
            );
        }
    }

    #[test]
    fn flatten_round_trips_bit_exactly() {
        let dims = [5usize, 7, 4];
        let net = seeded_net(&dims, 12);
        let flat = net.flatten_params();
        let rebuilt = MlpNetwork::from_params(&dims, &flat).unwrap();
        assert_eq!(net, rebuilt);
        assert_eq!(flat, rebuilt.flatten_params());
    }

    #[test]
    fn param_delta_examples() {
        let a = ParamVector::from_vec(vec![1.0, 2.0]);
        let b = ParamVector::from_vec(vec![1.5, 1.0]);
        assert_eq!(param_delta(&a, &b).unwrap().as_slice(), &[0.5, -1.0]);
        assert_eq!(
            param_delta(&a, &a).unwrap().as_slice(),
            &[0.0, 0.0]
        );
        let short = ParamVector::from_vec(vec![1.0]);
        assert!(matches!(
            param_delta(&a, &short),
            Err(Error::LayoutMismatch { .. })
        ));
    }

    #[test]
    fn accuracy_counts_matches() {
        let net = seeded_net(&[3, 6, 2], 21);
        let mut s = Stream::new(22);
        let examples: Vec<LabeledExample> = (0..200)
            .map(|id| LabeledExample {
                id,
                features: (0..3).map(|_| s.normal()).collect(),
                label: (s.below(2)) as usize,
            })
            .collect();
        let acc = accuracy(&net, &examples).unwrap();
        let brute = examples
            .iter()
            .filter(|ex| net.forward(&ex.features).unwrap().fst() == ex.label)
            .count() as f64
            / examples.len() as f64;
        assert_eq!(acc, brute);

        assert!(matches!(
            accuracy(&net, &[]),
            Err(Error::EmptyInput { .. })
        ));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let net = seeded_net(&[6, 10, 4], 44);
        let x = seeded_input(6, 45);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a.probs(), b.probs());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_sums_to_one(seed in 0u64..5_000, dim in 2usize..6) {
                let net = seeded_net(&[3, dim], seed);
                let x = seeded_input(3, seed ^ 0xABCD);
                let pred = net.forward(&x).unwrap();
                let sum: f64 = pred.probs().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }

            #[test]
            fn fst_snd_contract(raw in proptest::collection::vec(0.01f64..10.0, 2..8)) {
                let total: f64 = raw.iter().sum();
                let probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
                let pred = Prediction::from_probs(probs.clone()).unwrap();
                let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(probs[pred.fst()], max);
                prop_assert_ne!(pred.fst(), pred.snd());
                for (k, &p) in probs.iter().enumerate() {
                    if k != pred.fst() {
                        prop_assert!(p <= probs[pred.snd()]);
                    }
                }
            }
        }
    }
}
