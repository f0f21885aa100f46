use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    adam_step, backward, forward, forward_cached, init_params, AdamConfig, AdamState, LossSpec, NetParams, NetSpec,
    NeuralError,
};
use crate::series::WindowedDataset;

/// Mini-batch training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Stop after this many epochs without improvement of the validation loss.
    pub early_stop: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 150,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.max_epochs == 0 {
            return Err(NeuralError::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NeuralError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.adam.lr.is_nan() || self.adam.lr <= 0.0 {
            return Err(NeuralError::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    /// Mean training loss of each completed epoch.
    pub history: Vec<f64>,
    /// Validation loss after each epoch, when a validation set was given.
    pub val_history: Vec<f64>,
    /// Epoch (zero based) whose parameters were returned.
    pub best_epoch: usize,
}

fn check_dataset(spec: &NetSpec, d: &WindowedDataset) -> Result<(), NeuralError> {
    if d.n_features != spec.input_features || d.window != spec.window || d.horizon != spec.horizon {
        return Err(NeuralError::InvalidSpec(format!(
            "dataset shape {}×{}→{} does not match network {}×{}→{}",
            d.window, d.n_features, d.horizon, spec.window, spec.input_features, spec.horizon
        )));
    }
    Ok(())
}

/// Predictions `M × horizon` for every sample of `dataset`.
pub fn predict_dataset(spec: &NetSpec, params: &NetParams, dataset: &WindowedDataset) -> Result<Vec<f64>, NeuralError> {
    check_dataset(spec, dataset)?;
    let w = spec.input_width();
    let mut out = Vec::with_capacity(dataset.len() * spec.horizon);
    for chunk in dataset.inputs.chunks(256 * w) {
        out.extend(forward(spec, params, chunk)?);
    }
    Ok(out)
}

fn dataset_loss(spec: &NetSpec, params: &NetParams, d: &WindowedDataset, loss: &LossSpec) -> Result<f64, NeuralError> {
    let pred = predict_dataset(spec, params, d)?;
    Ok(loss.evaluate(&pred, &d.targets)?.0)
}

/// Trains a freshly initialised network with Adam over seeded, shuffled
/// mini-batches. With `early_stop` set, `validation` is required and the
/// parameters of the best validation epoch are returned.
pub fn train(
    spec: &NetSpec,
    dataset: &WindowedDataset,
    loss: &LossSpec,
    config: &TrainConfig,
    validation: Option<&WindowedDataset>,
) -> Result<TrainOutcome, NeuralError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    check_dataset(spec, dataset)?;
    if let Some(v) = validation {
        check_dataset(spec, v)?;
    }
    if config.early_stop.is_some() && validation.is_none() {
        return Err(NeuralError::InvalidConfig(
            "early stopping needs a validation set".into(),
        ));
    }
    let mut params = init_params(spec, config.seed)?;
    let mut state = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let (w, h) = (spec.input_width(), spec.horizon);

    let mut history = Vec::with_capacity(config.max_epochs);
    let mut val_history = Vec::new();
    let mut best: Option<(f64, usize, NetParams)> = None;
    let mut batch_x = Vec::with_capacity(config.batch_size * w);
    let mut batch_y = Vec::with_capacity(config.batch_size * h);

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            batch_x.clear();
            batch_y.clear();
            for &m in idx {
                batch_x.extend_from_slice(dataset.input(m));
                batch_y.extend_from_slice(dataset.target(m));
            }
            let (pred, cache) = forward_cached(spec, &params, &batch_x)?;
            let (l, dl) = loss.evaluate(&pred, &batch_y)?;
            if !l.is_finite() {
                return Err(NeuralError::NonFiniteLoss { epoch, batch: bi });
            }
            let grad = backward(spec, &params, &cache, &dl)?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(NeuralError::NonFiniteLoss { epoch, batch: bi });
            }
            adam_step(&mut params.values, &grad, &mut state, &config.adam);
            total += l * idx.len() as f64;
        }
        history.push(total / dataset.len() as f64);
        log::debug!("{} epoch {epoch}: loss {:.6}", spec.kind, history[epoch]);

        if let Some(v) = validation {
            let vl = dataset_loss(spec, &params, v, loss)?;
            if !vl.is_finite() {
                return Err(NeuralError::NonFiniteLoss {
                    epoch,
                    batch: usize::MAX,
                });
            }
            val_history.push(vl);
            if best.as_ref().is_none_or(|(b, _, _)| vl < *b) {
                best = Some((vl, epoch, params.clone()));
            }
            if let (Some(patience), Some((_, be, _))) = (config.early_stop, best.as_ref()) {
                if epoch - be >= patience {
                    break;
                }
            }
        }
    }

    let last = history.len() - 1;
    match (config.early_stop, best) {
        (Some(_), Some((_, best_epoch, p))) => Ok(TrainOutcome {
            params: p,
            history,
            val_history,
            best_epoch,
        }),
        _ => Ok(TrainOutcome {
            params,
            history,
            val_history,
            best_epoch: last,
        }),
    }
}
