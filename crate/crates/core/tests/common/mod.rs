#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamflow::neural::{backward, forward, forward_cached, LossSpec, NetParams, NetSpec};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    /// Components skipped because a kink (ReLU, max-pool switch or a pinball
    /// residual sign change) lies within the difference step.
    pub kinks: usize,
    pub failures: usize,
    pub worst_rel: f64,
}

impl GradCheck {
    pub fn merge(&mut self, o: GradCheck) {
        self.checked += o.checked;
        self.kinks += o.kinks;
        self.failures += o.failures;
        self.worst_rel = self.worst_rel.max(o.worst_rel);
    }
}

fn loss_at(spec: &NetSpec, p: &NetParams, x: &[f64], y: &[f64], loss: &LossSpec) -> f64 {
    let pred = forward(spec, p, x).unwrap();
    loss.evaluate(&pred, y).unwrap().0
}

/// Central-difference oracle, independent of the backward pass.
#[allow(clippy::needless_range_loop)]
pub fn grad_check(
    spec: &NetSpec,
    params: &NetParams,
    x: &[f64],
    y: &[f64],
    loss: &LossSpec,
    h: f64,
    rel_tol: f64,
) -> GradCheck {
    let (pred, cache) = forward_cached(spec, params, x).unwrap();
    let (_, dl) = loss.evaluate(&pred, y).unwrap();
    let analytic = backward(spec, params, &cache, &dl).unwrap();
    let base = loss_at(spec, params, x, y, loss);
    let mut out = GradCheck::default();
    let mut p = params.clone();
    for i in 0..p.values.len() {
        let orig = p.values[i];
        p.values[i] = orig + h;
        let up = loss_at(spec, &p, x, y, loss);
        p.values[i] = orig - h;
        let down = loss_at(spec, &p, x, y, loss);
        p.values[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        let err = (a - numeric).abs();
        let ok = if scale > 1e-3 {
            err <= rel_tol * scale
        } else {
            err <= rel_tol * 1e-3
        };
        if !ok {
            // one-sided slopes disagree: the loss is not differentiable inside the step
            let right = (up - base) / h;
            let left = (base - down) / h;
            if (right - left).abs() > 10.0 * rel_tol * scale.max(1e-3) {
                out.kinks += 1;
                continue;
            }
            out.failures += 1;
        }
        if scale > 1e-3 {
            out.worst_rel = out.worst_rel.max(err / scale);
        }
        out.checked += 1;
    }
    out
}

pub fn random_params(spec: &NetSpec, rng: &mut ChaCha8Rng, scale: f64) -> NetParams {
    let mut p = NetParams::zeros(spec);
    for v in &mut p.values {
        *v = rng.random_range(-scale..scale);
    }
    p
}

pub fn random_batch(spec: &NetSpec, b: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let x = (0..b * spec.input_width())
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let y = (0..b * spec.horizon).map(|_| rng.random_range(0.0..1.0)).collect();
    (x, y)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
