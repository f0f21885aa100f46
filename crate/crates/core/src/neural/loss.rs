use serde::{Deserialize, Serialize};

use super::NeuralError;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    Mse,
    /// Quantile loss at level `tau`.
    Pinball {
        tau: f64,
    },
}

impl LossSpec {
    pub fn pinball(tau: f64) -> Result<LossSpec, NeuralError> {
        check_tau(tau)?;
        Ok(LossSpec::Pinball { tau })
    }

    pub fn evaluate(&self, pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NeuralError> {
        match *self {
            LossSpec::Mse => mse_loss(pred, target),
            LossSpec::Pinball { tau } => pinball_loss(pred, target, tau),
        }
    }

    pub fn label(&self) -> String {
        match self {
            LossSpec::Mse => "mse".to_string(),
            LossSpec::Pinball { tau } => format!("pinball_{tau}"),
        }
    }
}

fn check_tau(tau: f64) -> Result<(), NeuralError> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(NeuralError::BadTau(tau))
    }
}

fn check_len(pred: &[f64], target: &[f64]) -> Result<(), NeuralError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NeuralError::Shape {
            expected: target.len(),
            got: pred.len(),
        });
    }
    Ok(())
}

/// Mean tilted absolute error: `rho(m) = tau·m` for `m = target - pred >= 0`,
/// `(tau - 1)·m` otherwise. The gradient at `m == 0` is taken as 0.
pub fn pinball_loss(pred: &[f64], target: &[f64], tau: f64) -> Result<(f64, Vec<f64>), NeuralError> {
    check_tau(tau)?;
    check_len(pred, target)?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let m = y - p;
            if m > 0.0 {
                total += tau * m;
                -tau / n
            } else if m < 0.0 {
                total += (tau - 1.0) * m;
                (1.0 - tau) / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((total / n, grad))
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NeuralError> {
    check_len(pred, target)?;
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, y)| 2.0 * (p - y) / n).collect();
    Ok((loss, grad))
}
