//! Feed-forward neural-network detector over covariance eigenvalues.
//!
//! The network maps the normalized eigenvalue spectrum of a sample covariance
//! to a score in `[0, 1]`: hidden layers with a chosen activation, then one
//! sigmoid output unit. Training is plain mini-batch SGD written out by hand;
//! no ML framework is involved.

mod data;
mod io;
mod select;

pub use data::{eig_features, features_from_eigenvalues, DatasetSpec, EigFeatures, TrainingSet};
pub use io::{FORMAT_TAG, FORMAT_VERSION};
pub use select::{select_architecture, CandidateScore, SelectionReport, SelectionStage};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{min_trials, quantile_threshold};
use crate::error::{contract, domain, Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Sigmoid, Activation::Tanh, Activation::Relu];

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Affine layer, `out x in` weights stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + self.biases[o]);
        }
    }
}

/// Provenance stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub dataset: Option<DatasetSpec>,
    pub dataset_size: usize,
    pub loss_history: Vec<f64>,
    /// Score threshold and its target false-alarm probability, when
    /// calibrated.
    pub threshold: Option<f64>,
    pub target_fap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlnnModel {
    /// Input, hidden sizes, then `1`.
    pub layer_sizes: Vec<usize>,
    /// One tag per hidden layer; the output unit is always sigmoid.
    pub activations: Vec<Activation>,
    pub layers: Vec<Layer>,
    /// Inputs are mapped to `(x - shift) * scale` before the first layer.
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub metadata: TrainingMetadata,
}

impl MlnnModel {
    /// All-zero network with identity input scaling.
    pub fn zeros(inputs: usize, hidden: &[usize], activation: Activation) -> Result<Self> {
        if inputs == 0 || hidden.contains(&0) {
            return contract("layer sizes must be positive");
        }
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self {
            layer_sizes: sizes,
            activations: vec![activation; hidden.len()],
            layers,
            input_shift: vec![0.0; inputs],
            input_scale: vec![1.0; inputs],
            metadata: TrainingMetadata::default(),
        })
    }

    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(inputs: usize, hidden: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(inputs, hidden, activation)?;
        let mut rng = rng::stream(seed, 0);
        for layer in &mut model.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    pub fn inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn hidden(&self) -> &[usize] {
        &self.layer_sizes[1..self.layer_sizes.len() - 1]
    }

    /// Total number of trainable weights and biases.
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Set the input scaling to zero mean and unit variance per feature over
    /// `data`. Constant features keep unit scale.
    pub fn fit_input_scaling(&mut self, data: &TrainingSet) {
        let p = self.inputs();
        let n = data.len() as f64;
        let mut mean = vec![0.0; p];
        for x in &data.features {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; p];
        for x in &data.features {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        self.input_shift = mean;
        self.input_scale =
            var.iter().map(|&v| if v > 1e-300 { 1.0 / v.sqrt() } else { 1.0 }).collect();
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.inputs() {
            return contract(format!("feature vector has {} entries, network expects {}", x.len(), self.inputs()));
        }
        Ok(())
    }

    fn scaled_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_shift)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    fn activation_of(&self, layer: usize) -> Option<Activation> {
        self.activations.get(layer).copied()
    }

    /// Score in `[0, 1]`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut a = self.scaled_input(x);
        let mut z = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine(&a, &mut z);
            a = match self.activation_of(i) {
                Some(act) => z.iter().map(|&v| act.apply(v)).collect(),
                None => z.iter().map(|&v| sigmoid(v)).collect(),
            };
        }
        Ok(a[0])
    }

    /// Mean loss over `(xs, ys)` and its gradient, laid out like
    /// [`MlnnModel::params`].
    pub fn loss_and_gradient(&self, xs: &[&[f64]], ys: &[f64], loss: Loss) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.weight_count()];
        let mut total = 0.0;
        let n = xs.len() as f64;
        for (x, &y) in xs.iter().zip(ys) {
            self.check_input(x)?;
            total += self.backprop_one(x, y, loss, 1.0 / n, &mut grad);
        }
        Ok((total / n, grad))
    }

    /// Adds `weight * d loss / d params` for one example into `grad`; returns
    /// the example's loss.
    fn backprop_one(&self, x: &[f64], y: f64, loss: Loss, weight: f64, grad: &mut [f64]) -> f64 {
        let mut acts = vec![self.scaled_input(x)];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.affine(acts.last().unwrap(), &mut z);
            let a = match self.activation_of(i) {
                Some(act) => z.iter().map(|&v| act.apply(v)).collect(),
                None => z.iter().map(|&v| sigmoid(v)).collect(),
            };
            pre.push(z);
            acts.push(a);
        }
        let out = acts.last().unwrap()[0];
        let z_out = pre.last().unwrap()[0];
        let (value, mut delta) = match loss {
            Loss::Mse => ((out - y).powi(2), vec![2.0 * (out - y) * out * (1.0 - out)]),
            Loss::CrossEntropy => {
                // log-sigmoid written in terms of z for stability
                let l = softplus(z_out) - y * z_out;
                (l, vec![out - y])
            }
        };

        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.weights.len() + l.biases.len();
        }
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &acts[i];
            let base = offsets[i];
            for o in 0..layer.outputs {
                let d = delta[o] * weight;
                let row = &mut grad[base + o * layer.inputs..base + (o + 1) * layer.inputs];
                for (g, v) in row.iter_mut().zip(input) {
                    *g += d * v;
                }
                grad[base + layer.weights.len() + o] += d;
            }
            if i > 0 {
                let act = self.activations[i - 1];
                let mut next = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += w * delta[o];
                    }
                }
                for (j, n) in next.iter_mut().enumerate() {
                    *n *= act.derivative(pre[i - 1][j], acts[i][j]);
                }
                delta = next;
            }
        }
        value
    }

    /// Weights and biases flattened layer by layer (weights row-major, then
    /// biases).
    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases).copied()).collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.weight_count() {
            return contract(format!("{} parameters for a network with {}", params.len(), self.weight_count()));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn mean_loss(&self, data: &TrainingSet, loss: Loss) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in data.features.iter().zip(&data.labels) {
            let s = self.forward(x)?;
            total += match loss {
                Loss::Mse => (s - y).powi(2),
                Loss::CrossEntropy => {
                    let s = s.clamp(1e-15, 1.0 - 1e-15);
                    -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
                }
            };
        }
        Ok(total / data.len() as f64)
    }

    pub fn scores(&self, data: &TrainingSet) -> Result<Vec<f64>> {
        data.features.iter().map(|x| self.forward(x)).collect()
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// Mean squared error between score and label.
    #[default]
    Mse,
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub momentum: f64,
    /// L2 penalty on weights (not biases), added as `weight_decay * w` to the
    /// gradient.
    pub weight_decay: f64,
    pub loss: Loss,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { learning_rate: 0.01, batch_size: 32, epochs: 30, seed: 0, momentum: 0.9, weight_decay: 1e-3, loss: Loss::Mse }
    }
}

/// Mini-batch SGD (with optional heavy-ball momentum).
///
/// The returned history has `epochs + 1` entries: the full-set loss before
/// training, then after each epoch. Examples are reshuffled every epoch from
/// a stream keyed by `hyper.seed`.
pub fn train(model: &MlnnModel, data: &TrainingSet, hyper: &TrainHyper) -> Result<(MlnnModel, Vec<f64>)> {
    if !(hyper.learning_rate >= 0.0 && hyper.learning_rate.is_finite()) {
        return domain(format!("learning rate {} must be finite and non-negative", hyper.learning_rate));
    }
    if hyper.batch_size == 0 {
        return contract("batch size must be at least 1");
    }
    if !(0.0..1.0).contains(&hyper.momentum) {
        return domain(format!("momentum {} outside [0, 1)", hyper.momentum));
    }
    if !(hyper.weight_decay >= 0.0 && hyper.weight_decay.is_finite()) {
        return domain(format!("weight decay {} must be finite and non-negative", hyper.weight_decay));
    }
    data.validate()?;
    if data.inputs() != model.inputs() {
        return contract(format!("data has {} features, network expects {}", data.inputs(), model.inputs()));
    }

    let mut model = model.clone();
    let mut params = model.params();
    let mut velocity = vec![0.0; params.len()];
    let mut history = vec![model.mean_loss(data, hyper.loss)?];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; params.len()];
    let decay_mask: Vec<f64> = model
        .layers
        .iter()
        .flat_map(|l| std::iter::repeat_n(1.0, l.weights.len()).chain(std::iter::repeat_n(0.0, l.biases.len())))
        .collect();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng::stream(hyper.seed, epoch as u64));
        for batch in order.chunks(hyper.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                model.backprop_one(&data.features[i], data.labels[i], hyper.loss, w, &mut grad);
            }
            for (((p, v), g), m) in params.iter_mut().zip(&mut velocity).zip(&grad).zip(&decay_mask) {
                *v = hyper.momentum * *v - hyper.learning_rate * (g + hyper.weight_decay * m * *p);
                *p += *v;
            }
            model.set_params(&params)?;
        }
        let loss = model.mean_loss(data, hyper.loss)?;
        history.push(loss);
        if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training { epoch: epoch + 1, history });
        }
    }
    model.metadata.seed = hyper.seed;
    model.metadata.dataset = Some(data.spec.clone());
    model.metadata.dataset_size = data.len();
    model.metadata.loss_history = history.clone();
    Ok((model, history))
}

/// `(1 - fap)` quantile of the H0 validation scores.
pub fn decision_threshold(h0_scores: &[f64], target_fap: f64) -> Result<f64> {
    if !(target_fap > 0.0 && target_fap < 1.0) {
        return contract(format!("target false-alarm probability {target_fap} outside (0, 1)"));
    }
    if h0_scores.len() < min_trials(target_fap) {
        return contract(format!(
            "{} H0 scores cannot resolve a false-alarm probability of {target_fap}; need {}",
            h0_scores.len(),
            min_trials(target_fap)
        ));
    }
    quantile_threshold(h0_scores, target_fap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set(n: usize, seed: u64) -> TrainingSet {
        let mut rng = rng::stream(seed, 0);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = (i % 2) as f64;
            let sign = if label > 0.5 { 1.0 } else { -1.0 };
            let x = vec![sign * rng.random_range(0.2..1.0), rng.random_range(-1.0..1.0)];
            features.push(x);
            labels.push(label);
        }
        TrainingSet::new(features, labels, DatasetSpec::toy(seed)).unwrap()
    }

    fn random_model(act: Activation, seed: u64) -> MlnnModel {
        let mut m = MlnnModel::new(5, &[4, 3], act, seed).unwrap();
        let mut r = rng::stream(seed, 1);
        for l in &mut m.layers {
            for b in &mut l.biases {
                *b = r.random_range(-0.5..0.5);
            }
        }
        m.input_shift = (0..5).map(|_| r.random_range(-0.1..0.1)).collect();
        m.input_scale = (0..5).map(|_| r.random_range(0.5..2.0)).collect();
        m
    }

    #[test]
    fn zero_network_scores_half() {
        let m = MlnnModel::zeros(3, &[4], Activation::Tanh).unwrap();
        assert_eq!(m.forward(&[1.0, -5.0, 2.0]).unwrap(), 0.5);
        assert_eq!(m.forward(&[0.0, 0.0, 0.0]).unwrap(), 0.5);
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn saturated_output_bias() {
        let mut m = MlnnModel::zeros(2, &[2], Activation::Relu).unwrap();
        m.layers[1].biases[0] = 800.0;
        assert_eq!(m.forward(&[0.3, 0.1]).unwrap(), 1.0);
        m.layers[1].biases[0] = -800.0;
        assert_eq!(m.forward(&[0.3, 0.1]).unwrap(), 0.0);
    }

    #[test]
    fn weight_count_and_shapes() {
        let m = MlnnModel::new(64, &[16], Activation::Sigmoid, 1).unwrap();
        assert_eq!(m.weight_count(), 64 * 16 + 16 + 16 + 1);
        assert_eq!(m.layer_sizes, vec![64, 16, 1]);
        assert_eq!(m.hidden(), &[16]);
        let limit = (6.0f64 / 80.0).sqrt();
        assert!(m.layers[0].weights.iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng::stream(99, 0);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let ys = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        for act in Activation::ALL {
            for loss in [Loss::Mse, Loss::CrossEntropy] {
                let m = random_model(act, 5);
                let (_, grad) = m.loss_and_gradient(&refs, &ys, loss).unwrap();
                let p0 = m.params();
                let h = 1e-6;
                for i in 0..p0.len() {
                    let mut mp = m.clone();
                    let mut p = p0.clone();
                    p[i] += h;
                    mp.set_params(&p).unwrap();
                    let lp = mp.loss_and_gradient(&refs, &ys, loss).unwrap().0;
                    p[i] -= 2.0 * h;
                    mp.set_params(&p).unwrap();
                    let lm = mp.loss_and_gradient(&refs, &ys, loss).unwrap().0;
                    let fd = (lp - lm) / (2.0 * h);
                    let tol = 1e-5 * fd.abs().max(grad[i].abs()).max(1e-4);
                    assert!((fd - grad[i]).abs() <= tol, "{act:?} {loss:?} param {i}: {fd} vs {}", grad[i]);
                }
            }
        }
    }

    #[test]
    fn learns_separable_toy() {
        let data = toy_set(100, 3);
        let model = MlnnModel::new(2, &[4], Activation::Tanh, 7).unwrap();
        let hyper = TrainHyper { epochs: 200, batch_size: 10, learning_rate: 0.5, ..Default::default() };
        let (trained, history) = train(&model, &data, &hyper).unwrap();
        assert!(history.last().unwrap() <= &history[0]);
        let correct = data
            .features
            .iter()
            .zip(&data.labels)
            .filter(|(x, &y)| (trained.forward(x).unwrap() > 0.5) == (y > 0.5))
            .count();
        assert!(correct >= 99, "accuracy {correct}/100");
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let data = toy_set(40, 4);
        let model = MlnnModel::new(2, &[3], Activation::Sigmoid, 2).unwrap();
        let hyper = TrainHyper { learning_rate: 0.0, epochs: 3, ..Default::default() };
        let (trained, _) = train(&model, &data, &hyper).unwrap();
        assert_eq!(trained.layers, model.layers);
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_set(60, 5);
        let model = MlnnModel::new(2, &[5, 3], Activation::Relu, 8).unwrap();
        let hyper = TrainHyper { epochs: 10, seed: 77, ..Default::default() };
        let a = train(&model, &data, &hyper).unwrap().0;
        let b = train(&model, &data, &hyper).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported_with_history() {
        let data = toy_set(20, 6);
        let model = MlnnModel::new(2, &[3], Activation::Relu, 1).unwrap();
        let hyper = TrainHyper { learning_rate: 1e300, momentum: 0.0, epochs: 5, ..Default::default() };
        match train(&model, &data, &hyper) {
            Err(Error::Training { epoch, history }) => {
                assert!(epoch >= 1);
                assert_eq!(history.len(), epoch + 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn threshold_rules() {
        let s: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        assert_eq!(decision_threshold(&s, 0.5).unwrap(), 0.499);
        let mut last = f64::INFINITY;
        for fap in [0.1, 0.2, 0.3, 0.5, 0.9] {
            let t = decision_threshold(&s, fap).unwrap();
            assert!(t <= last);
            last = t;
        }
        assert!(decision_threshold(&s[..50], 0.1).is_err());
    }
}
