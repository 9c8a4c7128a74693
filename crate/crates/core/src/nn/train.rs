//! Mini-batch training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig, PlateauConfig, ReduceOnPlateau};
use super::{argmax, ClassifierModel, Gradients, NnError, Workspace, DEFAULT_HIDDEN};
use crate::data::{Dataset, DatasetSplit};
use crate::losses::LossFn;
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            hidden: DEFAULT_HIDDEN.to_vec(),
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), NnError> {
        let fail = |m: String| Err(NnError::InvalidConfig(m));
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.adam.learning_rate > 0.0 && self.adam.learning_rate.is_finite()) {
            return fail(format!("adam.learning_rate {} must be > 0", self.adam.learning_rate));
        }
        for (name, b) in [("adam.beta1", self.adam.beta1), ("adam.beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} {b} outside [0, 1)"));
            }
        }
        if self.adam.epsilon.is_nan() || self.adam.epsilon <= 0.0 {
            return fail(format!("adam.epsilon {} must be > 0", self.adam.epsilon));
        }
        if !(self.plateau.factor > 0.0 && self.plateau.factor < 1.0) {
            return fail(format!("plateau.factor {} outside (0, 1)", self.plateau.factor));
        }
        if self.plateau.patience == 0 {
            return fail("plateau.patience must be >= 1".into());
        }
        if self.plateau.min_lr.is_nan() || self.plateau.min_lr < 0.0 {
            return fail(format!("plateau.min_lr {} must be >= 0", self.plateau.min_lr));
        }
        if self.hidden.contains(&0) {
            return fail("hidden layer widths must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_error: Vec<f64>,
    pub learning_rate: Vec<f64>,
    /// Validation error after the last epoch, 1.0 on divergence.
    pub final_val_error: f64,
    /// 1.0 on divergence.
    pub test_error: f64,
    pub diverged: bool,
    pub wall_clock_secs: f64,
}

/// Misclassification rate under argmax over the given rows.
pub fn evaluate_error(
    model: &ClassifierModel,
    data: &Dataset,
    indices: &[usize],
) -> Result<f64, NnError> {
    if indices.is_empty() {
        return Err(NnError::EmptyPartition);
    }
    check_shapes(model, data)?;
    let mut ws = Workspace::new(model);
    let wrong = indices
        .iter()
        .filter(|&&i| {
            model.forward_into(data.row(i), &mut ws);
            argmax(ws.probabilities()) != data.labels()[i]
        })
        .count();
    Ok(wrong as f64 / indices.len() as f64)
}

fn check_shapes(model: &ClassifierModel, data: &Dataset) -> Result<(), NnError> {
    if model.classes() != data.class_count() {
        return Err(NnError::ShapeMismatch { model: model.classes(), data: data.class_count() });
    }
    if model.input_dims() != data.dims() {
        return Err(NnError::InputMismatch { model: model.input_dims(), data: data.dims() });
    }
    Ok(())
}

pub fn train(
    model: &mut ClassifierModel,
    data: &Dataset,
    split: &DatasetSplit,
    loss: &LossFn,
    config: &TrainConfig,
) -> Result<TrainReport, NnError> {
    train_with(model, data, split, loss, config, |_, _| {})
}

/// [`train`] calling `on_epoch(epoch, model)` after every completed epoch.
pub fn train_with(
    model: &mut ClassifierModel,
    data: &Dataset,
    split: &DatasetSplit,
    loss: &LossFn,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ClassifierModel),
) -> Result<TrainReport, NnError> {
    config.check()?;
    check_shapes(model, data)?;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(NnError::EmptyPartition);
    }
    let start = Instant::now();
    let mut adam = Adam::new(config.adam, model.param_count());
    let mut schedule = ReduceOnPlateau::new(config.plateau, config.adam.learning_rate);
    let mut ws = Workspace::new(model);
    let mut grads = Gradients::zeros_like(model);
    let mut order = split.train.clone();
    let mut y_real = vec![0.0; data.class_count()];
    let mut report = TrainReport {
        train_loss: vec![],
        val_error: vec![],
        learning_rate: vec![],
        final_val_error: 1.0,
        test_error: 1.0,
        diverged: false,
        wall_clock_secs: 0.0,
    };

    'epochs: for epoch in 0..config.epochs {
        let mut rng = stream(config.seed, &[0x7EA1, epoch as u64]);
        order.shuffle(&mut rng);
        let lr = schedule.lr();
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            for &i in batch {
                let label = data.labels()[i];
                y_real[label] = 1.0;
                let value = model.accumulate(data.row(i), &y_real, loss, &mut ws, &mut grads);
                y_real[label] = 0.0;
                match value {
                    Ok(v) => total += v,
                    Err(_) => {
                        report.diverged = true;
                        break 'epochs;
                    }
                }
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.step_model(model, &grads, lr);
            if !model.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|w| w.is_finite())) {
                report.diverged = true;
                break 'epochs;
            }
        }
        let val = evaluate_error(model, data, &split.val)?;
        report.train_loss.push(total / order.len() as f64);
        report.val_error.push(val);
        report.learning_rate.push(lr);
        schedule.observe(val);
        on_epoch(epoch, model);
    }

    if !report.diverged {
        report.final_val_error = match report.val_error.last() {
            Some(&v) => v,
            None => evaluate_error(model, data, &split.val)?,
        };
        report.test_error = evaluate_error(model, data, &split.test)?;
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}
