//! A small dense softmax classifier trained with arbitrary losses.

mod io;
mod optim;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{LossError, LossFn};
use crate::rng::stream;

pub use io::{read_weights, write_weights, WEIGHTS_MAGIC};
pub use optim::{Adam, AdamConfig, PlateauConfig, ReduceOnPlateau};
pub use train::{evaluate_error, train, train_with, TrainConfig, TrainReport};

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 32];

#[derive(Debug, Error)]
pub enum NnError {
    #[error("model outputs {model} classes but dataset has {data}")]
    ShapeMismatch { model: usize, data: usize },
    #[error("model expects {model} input features but dataset has {data}")]
    InputMismatch { model: usize, data: usize },
    #[error("cannot evaluate on an empty partition")]
    EmptyPartition,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("weights file: {0}")]
    Weights(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fully connected layer, `weights` row-major `outputs × inputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs).zip(&self.bias)) {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Rectifier hidden layers and a softmax head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub layers: Vec<Dense>,
    pub seed: u64,
}

/// Parameter gradients laid out like [`ClassifierModel::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &ClassifierModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|v| v.fill(0.0));
    }

    fn scale(&mut self, k: f64) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|g| *g *= k);
        }
    }

    /// Flattened in the order of [`ClassifierModel::params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

/// Per-sample activations reused across the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct Workspace {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`
    /// (post-rectifier for hidden layers, probabilities for the last).
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    dloss: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(model: &ClassifierModel) -> Self {
        let mut acts = vec![vec![0.0; model.input_dims()]];
        acts.extend(model.layers.iter().map(|l| vec![0.0; l.outputs]));
        let deltas = model.layers.iter().map(|l| vec![0.0; l.outputs]).collect();
        Self { acts, deltas, dloss: vec![0.0; model.classes()] }
    }

    pub(crate) fn probabilities(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }
}

impl ClassifierModel {
    /// Uniform initialization in `±√(6 / fan_in)`, biases zero.
    pub fn new(input_dims: usize, hidden: &[usize], classes: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[0x1417]);
        let mut widths = vec![input_dims];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let limit = (6.0 / inputs as f64).sqrt();
                let weights =
                    (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect();
                Dense { inputs, outputs, weights, bias: vec![0.0; outputs] }
            })
            .collect();
        Self { layers, seed }
    }

    pub fn input_dims(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn classes(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter count");
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
    }

    fn forward_into(&self, x: &[f64], ws: &mut Workspace) {
        ws.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(i + 1);
            let out = &mut after[0];
            layer.forward(&before[i], out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            } else {
                softmax_in_place(out);
            }
        }
        let total: f64 = ws.probabilities().iter().sum();
        // non-finite logits surface as a non-finite loss instead
        debug_assert!(total.is_nan() || (total - 1.0).abs() <= 1e-6, "softmax sum {total}");
    }

    /// Class probabilities for one sample.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = Workspace::new(self);
        self.forward_into(x, &mut ws);
        ws.probabilities().to_vec()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.forward(x))
    }

    /// Forward and backward for one sample; gradients are added to `grads`.
    pub(crate) fn accumulate(
        &self,
        x: &[f64],
        y_real: &[f64],
        loss: &LossFn,
        ws: &mut Workspace,
        grads: &mut Gradients,
    ) -> Result<f64, LossError> {
        self.forward_into(x, ws);
        let value = loss.value_slices(ws.probabilities(), y_real)?;
        let last = self.layers.len() - 1;
        {
            let Workspace { acts, deltas, dloss } = ws;
            loss.grad_into(&acts[last + 1], y_real, dloss)?;
            softmax_backward_into(dloss, &acts[last + 1], &mut deltas[last]);
        }
        for i in (0..=last).rev() {
            let layer = &self.layers[i];
            let input = &ws.acts[i];
            let delta = &ws.deltas[i];
            for (o, &d) in delta.iter().enumerate() {
                grads.bias[i][o] += d;
                let row = &mut grads.weights[i][o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(g, &v)| *g += d * v);
            }
            if i > 0 {
                let (lower, upper) = ws.deltas.split_at_mut(i);
                let prev = &mut lower[i - 1];
                let delta = &upper[0];
                prev.fill(0.0);
                for (o, &d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    prev.iter_mut().zip(row).for_each(|(p, &w)| *p += w * d);
                }
                // rectifier derivative
                prev.iter_mut().zip(&ws.acts[i]).for_each(|(p, &a)| {
                    if a <= 0.0 {
                        *p = 0.0
                    }
                });
            }
        }
        Ok(value)
    }

    /// Loss and parameter gradient for a single sample.
    pub fn loss_and_gradient(
        &self,
        x: &[f64],
        y_real: &[f64],
        loss: &LossFn,
    ) -> Result<(f64, Gradients), LossError> {
        let mut ws = Workspace::new(self);
        let mut grads = Gradients::zeros_like(self);
        let value = self.accumulate(x, y_real, loss, &mut ws, &mut grads)?;
        Ok((value, grads))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `Jᵀ g` with the softmax Jacobian `J_ij = y_i (δ_ij − y_j)`.
pub fn softmax_backward(dloss_dypred: &[f64], y_pred: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y_pred.len()];
    softmax_backward_into(dloss_dypred, y_pred, &mut out);
    out
}

fn softmax_backward_into(g: &[f64], y: &[f64], out: &mut [f64]) {
    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
    for ((o, &gi), &yi) in out.iter_mut().zip(g).zip(y) {
        *o = yi * (gi - dot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::builtin;

    #[test]
    fn softmax_normalizes_extremes() {
        let y = softmax(&[1000.0, -1000.0, 0.0]);
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_upstream_gives_zero() {
        assert_eq!(softmax_backward(&[0.0; 3], &[0.2, 0.3, 0.5]), vec![0.0; 3]);
    }

    #[test]
    fn softmax_backward_matches_explicit_jacobian() {
        let y = [0.1, 0.6, 0.3];
        let g = [0.5, -1.0, 2.0];
        let got = softmax_backward(&g, &y);
        for i in 0..3 {
            let want: f64 = (0..3)
                .map(|j| g[j] * y[j] * (if i == j { 1.0 } else { 0.0 } - y[i]))
                .sum();
            assert!((got[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn ce_through_softmax_is_pred_minus_real() {
        let ce = builtin("ce").unwrap();
        let y = softmax(&[0.3, -1.2, 2.0]);
        let r = [0.0, 1.0, 0.0];
        let mut g = vec![0.0; 3];
        ce.grad_into(&y, &r, &mut g).unwrap();
        let dz = softmax_backward(&g, &y);
        for k in 0..3 {
            let want = (y[k] - r[k]) / 3.0;
            assert!((dz[k] - want).abs() < 1e-7, "{k}: {} vs {want}", dz[k]);
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ClassifierModel::new(4, &DEFAULT_HIDDEN, 3, 5);
        let b = ClassifierModel::new(4, &DEFAULT_HIDDEN, 3, 5);
        assert_eq!(a, b);
        assert_eq!(a.param_count(), 4 * 64 + 64 + 64 * 32 + 32 + 32 * 3 + 3);
        let limit = (6.0f64 / 4.0).sqrt();
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= limit));
        assert_ne!(a, ClassifierModel::new(4, &DEFAULT_HIDDEN, 3, 6));
    }

    #[test]
    fn params_round_trip() {
        let mut m = ClassifierModel::new(3, &[], 2, 1);
        assert_eq!(m.param_count(), 8);
        let p: Vec<f64> = (0..8).map(f64::from).collect();
        m.set_params(&p);
        assert_eq!(m.params(), p);
        assert_eq!(m.layers[0].bias, vec![6.0, 7.0]);
    }

    #[test]
    fn argmax_prefers_first_of_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }
}
