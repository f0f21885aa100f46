//! Quantile switching ensemble: a flow-duration rank predictor routes each
//! window to a high-quantile, mid-quantile or MSE-trained forecaster.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{
    forward, predict_dataset, read_checkpoint, train, write_checkpoint, Checkpoint, LossSpec, NetParams, NetSpec,
    NeuralError, TrainConfig,
};
use crate::series::{ScalerParams, WindowedDataset, STREAMFLOW_ROW};

#[derive(Debug, Error)]
pub enum SwitchError {
    #[error("flow-duration curve needs at least one finite flow")]
    EmptyFlows,
    #[error("invalid switch config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("ensemble directory: {0}")]
    Layout(String),
}

/// Sorted training-period flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDurationCurve {
    sorted: Vec<f64>,
}

impl FlowDurationCurve {
    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// Fraction of training flows not exceeding `flow`.
    pub fn alpha_of(&self, flow: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= flow) as f64 / self.sorted.len() as f64
    }
}

pub fn build_fdc(train_flows: &[f64]) -> Result<FlowDurationCurve, SwitchError> {
    let mut sorted: Vec<f64> = train_flows.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return Err(SwitchError::EmptyFlows);
    }
    sorted.sort_by(f64::total_cmp);
    Ok(FlowDurationCurve { sorted })
}

pub fn alpha_of(flow: f64, fdc: &FlowDurationCurve) -> f64 {
    fdc.alpha_of(flow)
}

/// Rank of each sample's horizon maximum. Targets must be in flow units.
pub fn label_alpha(dataset: &WindowedDataset, fdc: &FlowDurationCurve) -> Vec<f64> {
    (0..dataset.len())
        .map(|m| fdc.alpha_of(dataset.target(m).iter().copied().fold(f64::NEG_INFINITY, f64::max)))
        .collect()
}

/// As [`label_alpha`] for scaled targets, inverted with the streamflow scaler.
pub fn label_alpha_scaled(dataset: &WindowedDataset, fdc: &FlowDurationCurve, scaler: &ScalerParams) -> Vec<f64> {
    let flows = dataset
        .targets
        .iter()
        .map(|&v| scaler.invert_value(STREAMFLOW_ROW, v))
        .collect();
    label_alpha(&dataset.with_targets(flows, dataset.horizon), fdc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwitchConfig {
    pub hi_threshold: f64,
    pub mid_threshold: f64,
    pub hi_tau: f64,
    pub mid_tau: f64,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        SwitchConfig {
            hi_threshold: 0.95,
            mid_threshold: 0.70,
            hi_tau: 0.95,
            mid_tau: 0.70,
        }
    }
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<(), SwitchError> {
        let (lo, hi) = (self.mid_threshold, self.hi_threshold);
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(SwitchError::InvalidConfig(format!(
                "thresholds must satisfy 0 < mid ({lo}) < hi ({hi}) < 1"
            )));
        }
        for tau in [self.hi_tau, self.mid_tau] {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(SwitchError::InvalidConfig(format!(
                    "quantile level {tau} is not in (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Hi,
    Mid,
    Lo,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Hi => "hi",
            Branch::Mid => "mid",
            Branch::Lo => "lo",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hi above `hi_threshold`, lo below `mid_threshold`, mid on the closed
/// interval between them.
pub fn select_branch(alpha_hat: f64, cfg: &SwitchConfig) -> Branch {
    if alpha_hat > cfg.hi_threshold {
        Branch::Hi
    } else if alpha_hat >= cfg.mid_threshold {
        Branch::Mid
    } else {
        Branch::Lo
    }
}

/// Predicted rank and chosen branch of one window.
pub type Routing = (f64, Branch);

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchEnsemble {
    pub alpha_spec: NetSpec,
    pub alpha_params: NetParams,
    pub branch_spec: NetSpec,
    pub branch_hi: NetParams,
    pub branch_mid: NetParams,
    pub branch_lo: NetParams,
    pub fdc: FlowDurationCurve,
    pub config: SwitchConfig,
    pub seed: u64,
}

/// Trains the rank predictor and the three branches on the same training
/// set with the same seed. `train_set` holds scaled samples; `scaler`
/// recovers flow units for the rank labels.
pub fn train_switch(
    train_set: &WindowedDataset,
    branch_spec: &NetSpec,
    fdc: FlowDurationCurve,
    scaler: &ScalerParams,
    config: &SwitchConfig,
    train_cfg: &TrainConfig,
) -> Result<SwitchEnsemble, SwitchError> {
    config.validate()?;
    branch_spec.validate()?;
    let alpha_spec = NetSpec {
        horizon: 1,
        ..*branch_spec
    };
    let alpha_set = train_set.with_targets(label_alpha_scaled(train_set, &fdc, scaler), 1);
    let hi_loss = LossSpec::pinball(config.hi_tau)?;
    let mid_loss = LossSpec::pinball(config.mid_tau)?;

    let ((alpha, hi), (mid, lo)) = rayon::join(
        || {
            rayon::join(
                || train(&alpha_spec, &alpha_set, &LossSpec::Mse, train_cfg, None),
                || train(branch_spec, train_set, &hi_loss, train_cfg, None),
            )
        },
        || {
            rayon::join(
                || train(branch_spec, train_set, &mid_loss, train_cfg, None),
                || train(branch_spec, train_set, &LossSpec::Mse, train_cfg, None),
            )
        },
    );
    Ok(SwitchEnsemble {
        alpha_spec,
        alpha_params: alpha?.params,
        branch_spec: *branch_spec,
        branch_hi: hi?.params,
        branch_mid: mid?.params,
        branch_lo: lo?.params,
        fdc,
        config: *config,
        seed: train_cfg.seed,
    })
}

impl SwitchEnsemble {
    pub fn branch_params(&self, b: Branch) -> &NetParams {
        match b {
            Branch::Hi => &self.branch_hi,
            Branch::Mid => &self.branch_mid,
            Branch::Lo => &self.branch_lo,
        }
    }

    /// Clamped rank predictions for every sample.
    pub fn predict_alpha(&self, dataset: &WindowedDataset) -> Result<Vec<f64>, SwitchError> {
        let w = self.alpha_spec.input_width();
        let mut out = Vec::with_capacity(dataset.len());
        for chunk in dataset.inputs.chunks(256 * w) {
            out.extend(forward(&self.alpha_spec, &self.alpha_params, chunk)?);
        }
        Ok(out.into_iter().map(|a| a.clamp(0.0, 1.0)).collect())
    }

    /// Routed forecasts for every sample: `(M × H forecasts, per-sample α̂ and branch)`.
    pub fn predict_all(&self, dataset: &WindowedDataset) -> Result<(Vec<f64>, Vec<Routing>), SwitchError> {
        let alphas = self.predict_alpha(dataset)?;
        let outs = [Branch::Hi, Branch::Mid, Branch::Lo]
            .map(|b| predict_dataset(&self.branch_spec, self.branch_params(b), dataset));
        let [hi, mid, lo] = outs;
        let (hi, mid, lo) = (hi?, mid?, lo?);
        let h = self.branch_spec.horizon;
        let mut forecast = Vec::with_capacity(alphas.len() * h);
        let mut routing = Vec::with_capacity(alphas.len());
        for (m, &a) in alphas.iter().enumerate() {
            let b = select_branch(a, &self.config);
            let src = match b {
                Branch::Hi => &hi,
                Branch::Mid => &mid,
                Branch::Lo => &lo,
            };
            forecast.extend_from_slice(&src[m * h..(m + 1) * h]);
            routing.push((a, b));
        }
        Ok((forecast, routing))
    }
}

/// Forecast of one `N × F` window with the branch used and the clamped α̂.
pub fn switch_predict(ensemble: &SwitchEnsemble, window: &[f64]) -> Result<(Vec<f64>, Branch, f64), SwitchError> {
    let alpha = forward(&ensemble.alpha_spec, &ensemble.alpha_params, window)?[0].clamp(0.0, 1.0);
    let branch = select_branch(alpha, &ensemble.config);
    let out = forward(&ensemble.branch_spec, ensemble.branch_params(branch), window)?;
    Ok((out, branch, alpha))
}

const MANIFEST: &str = "manifest.json";
const MODEL_FILES: [(&str, &str); 4] = [
    ("alpha", "alpha.json"),
    ("hi", "branch_hi.json"),
    ("mid", "branch_mid.json"),
    ("lo", "branch_lo.json"),
];

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleManifest {
    version: u32,
    config: SwitchConfig,
    seed: u64,
    fdc: Vec<f64>,
    models: Vec<(String, String)>,
}

/// Writes the four checkpoints plus a manifest holding the flow-duration
/// curve and the switch thresholds.
pub fn save_ensemble(dir: &Path, ensemble: &SwitchEnsemble) -> Result<(), SwitchError> {
    fs::create_dir_all(dir)?;
    let models = [
        (ensemble.alpha_spec, &ensemble.alpha_params),
        (ensemble.branch_spec, &ensemble.branch_hi),
        (ensemble.branch_spec, &ensemble.branch_mid),
        (ensemble.branch_spec, &ensemble.branch_lo),
    ];
    for ((_, file), (spec, params)) in MODEL_FILES.iter().zip(models) {
        write_checkpoint(&dir.join(file), &Checkpoint::new(spec, ensemble.seed, params))?;
    }
    let manifest = EnsembleManifest {
        version: 1,
        config: ensemble.config,
        seed: ensemble.seed,
        fdc: ensemble.fdc.sorted.clone(),
        models: MODEL_FILES
            .iter()
            .map(|(k, f)| (k.to_string(), f.to_string()))
            .collect(),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_ensemble(dir: &Path) -> Result<SwitchEnsemble, SwitchError> {
    let manifest: EnsembleManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    let mut loaded = Vec::with_capacity(4);
    for (key, _) in MODEL_FILES {
        let file = manifest
            .models
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, f)| f)
            .ok_or_else(|| SwitchError::Layout(format!("manifest lists no {key} model")))?;
        let ckpt = read_checkpoint(&dir.join(file))?;
        loaded.push((ckpt.spec, ckpt.to_params()?));
    }
    let mut it = loaded.into_iter();
    let (alpha_spec, alpha_params) = it.next().unwrap();
    let (branch_spec, branch_hi) = it.next().unwrap();
    let (mid_spec, branch_mid) = it.next().unwrap();
    let (lo_spec, branch_lo) = it.next().unwrap();
    if mid_spec != branch_spec || lo_spec != branch_spec {
        return Err(SwitchError::Layout("branch checkpoints disagree on shape".into()));
    }
    if alpha_spec.input_features != branch_spec.input_features || alpha_spec.window != branch_spec.window {
        return Err(SwitchError::Layout(
            "rank model input shape differs from branches".into(),
        ));
    }
    let mut fdc = build_fdc(&manifest.fdc)?;
    fdc.sorted = manifest.fdc;
    Ok(SwitchEnsemble {
        alpha_spec,
        alpha_params,
        branch_spec,
        branch_hi,
        branch_mid,
        branch_lo,
        fdc,
        config: manifest.config,
        seed: manifest.seed,
    })
}
