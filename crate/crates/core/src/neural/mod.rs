//! From-scratch forecasters: LSTM, bidirectional LSTM, encoder-decoder LSTM,
//! 1-D CNN and a plain dense map, with exact gradients, MSE and pinball losses,
//! Adam and a mini-batch training loop.
//!
//! All parameters of a network live in one flat vector. [`Layout`] names the
//! slices; the layout is a pure function of [`NetSpec`].

mod adam;
mod checkpoint;
mod loss;
mod lstm;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use loss::{mse_loss, pinball_loss, LossSpec};
pub use train::{predict_dataset, train, TrainConfig, TrainOutcome};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use lstm::{LstmSlots, LstmStep};

/// Kernel length of the convolutional forecaster.
pub const CNN_KERNEL: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("parameter vector has {got} values, spec needs {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("backward called without a matching forward cache")]
    MissingCache,
    #[error("quantile level {0} is not in (0, 1)")]
    BadTau(f64),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Lstm,
    BdLstm,
    EdLstm,
    Cnn1d,
    /// Single affine map from the flattened window to the horizon.
    Dense,
}

impl NetKind {
    pub const ALL: [NetKind; 5] = [
        NetKind::Lstm,
        NetKind::BdLstm,
        NetKind::EdLstm,
        NetKind::Cnn1d,
        NetKind::Dense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NetKind::Lstm => "lstm",
            NetKind::BdLstm => "bd_lstm",
            NetKind::EdLstm => "ed_lstm",
            NetKind::Cnn1d => "cnn1d",
            NetKind::Dense => "dense",
        }
    }

    /// Hidden width used when none is configured: 20 cells for the recurrent
    /// nets, 64 filters for the CNN.
    pub fn default_hidden(self) -> usize {
        match self {
            NetKind::Cnn1d => 64,
            _ => 20,
        }
    }
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NetKind {
    type Err = NeuralError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NetKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| NeuralError::InvalidSpec(format!("unknown network kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetSpec {
    pub kind: NetKind,
    pub input_features: usize,
    pub window: usize,
    pub horizon: usize,
    pub hidden_units: usize,
    #[serde(default = "one")]
    pub layers: usize,
}

fn one() -> usize {
    1
}

impl NetSpec {
    pub fn new(kind: NetKind, input_features: usize, window: usize, horizon: usize, hidden_units: usize) -> Self {
        NetSpec {
            kind,
            input_features,
            window,
            horizon,
            hidden_units,
            layers: 1,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::InvalidSpec(m.to_string()));
        if self.input_features == 0 {
            return bad("input_features must be positive");
        }
        if self.window == 0 {
            return bad("window must be positive");
        }
        if self.horizon == 0 {
            return bad("horizon must be positive");
        }
        if self.hidden_units == 0 && self.kind != NetKind::Dense {
            return bad("hidden_units must be positive");
        }
        if self.layers != 1 {
            return bad("only single-layer networks are supported");
        }
        if self.kind == NetKind::Cnn1d && self.window < CNN_KERNEL {
            return bad("cnn1d needs a window of at least the kernel length");
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.window * self.input_features
    }

    pub fn param_count(&self) -> usize {
        Layout::for_spec(self).total
    }
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSlot {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub slots: Vec<TensorSlot>,
    pub total: usize,
}

impl Layout {
    fn push(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let offset = self.total;
        self.slots.push(TensorSlot {
            name,
            offset,
            rows,
            cols,
        });
        self.total += rows * cols;
        offset
    }

    fn push_lstm(&mut self, prefix: &str, input: usize, hidden: usize) -> LstmSlots {
        LstmSlots {
            w_x: self.push(format!("{prefix}.w_x"), 4 * hidden, input),
            w_h: self.push(format!("{prefix}.w_h"), 4 * hidden, hidden),
            b: self.push(format!("{prefix}.b"), 4 * hidden, 1),
            input,
            hidden,
        }
    }

    pub fn for_spec(spec: &NetSpec) -> Layout {
        Arch::build(spec).1
    }

    pub fn slot(&self, name: &str) -> Option<&TensorSlot> {
        self.slots.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, Copy)]
struct Head {
    w: usize,
    b: usize,
    inputs: usize,
    outputs: usize,
}

impl Head {
    fn apply(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        for (r, y) in out.iter_mut().enumerate().take(self.outputs) {
            let row = &params[self.w + r * self.inputs..self.w + (r + 1) * self.inputs];
            *y = params[self.b + r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates head gradients and returns the gradient w.r.t. the head input.
    fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (r, &d) in dy.iter().enumerate().take(self.outputs) {
            grad[self.b + r] += d;
            let row = self.w + r * self.inputs;
            for j in 0..self.inputs {
                grad[row + j] += d * x[j];
                dx[j] += d * params[row + j];
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: usize,
    filters: usize,
    channels: usize,
}

/// Resolved parameter offsets for one spec.
#[derive(Debug, Clone, Copy)]
enum Arch {
    Lstm { cell: LstmSlots, head: Head },
    BdLstm { fwd: LstmSlots, bwd: LstmSlots, head: Head },
    EdLstm { enc: LstmSlots, dec: LstmSlots, head: Head },
    Cnn1d { conv: Conv, head: Head },
    Dense { head: Head },
}

impl Arch {
    fn build(spec: &NetSpec) -> (Arch, Layout) {
        let mut l = Layout {
            slots: Vec::new(),
            total: 0,
        };
        let (f, hd, h) = (spec.input_features, spec.hidden_units, spec.horizon);
        let head = |l: &mut Layout, inputs: usize, outputs: usize| Head {
            w: l.push("head.w".into(), outputs, inputs),
            b: l.push("head.b".into(), outputs, 1),
            inputs,
            outputs,
        };
        let arch = match spec.kind {
            NetKind::Lstm => {
                let cell = l.push_lstm("lstm", f, hd);
                Arch::Lstm {
                    cell,
                    head: head(&mut l, hd, h),
                }
            }
            NetKind::BdLstm => {
                let fwd = l.push_lstm("fwd", f, hd);
                let bwd = l.push_lstm("bwd", f, hd);
                Arch::BdLstm {
                    fwd,
                    bwd,
                    head: head(&mut l, 2 * hd, h),
                }
            }
            NetKind::EdLstm => {
                let enc = l.push_lstm("enc", f, hd);
                let dec = l.push_lstm("dec", 1, hd);
                Arch::EdLstm {
                    enc,
                    dec,
                    head: head(&mut l, hd, 1),
                }
            }
            NetKind::Cnn1d => {
                let conv = Conv {
                    w: l.push("conv.w".into(), hd, CNN_KERNEL * f),
                    b: l.push("conv.b".into(), hd, 1),
                    filters: hd,
                    channels: f,
                };
                Arch::Cnn1d {
                    conv,
                    head: head(&mut l, hd, h),
                }
            }
            NetKind::Dense => Arch::Dense {
                head: head(&mut l, spec.window * f, h),
            },
        };
        (arch, l)
    }
}

/// Flat parameter store plus its layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl NetParams {
    pub fn zeros(spec: &NetSpec) -> NetParams {
        let layout = Layout::for_spec(spec);
        NetParams {
            values: vec![0.0; layout.total],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.slot(name).map(|s| &self.values[s.range()])
    }
}

/// Uniform `±1/sqrt(fan_in)` weights, zero biases except LSTM forget gates at 1.
pub fn init_params(spec: &NetSpec, seed: u64) -> Result<NetParams, NeuralError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = NetParams::zeros(spec);
    let hd = spec.hidden_units;
    for slot in &p.layout.slots {
        let range = slot.range();
        if slot.name.ends_with(".b") {
            if !slot.name.starts_with("head") && !slot.name.starts_with("conv") {
                // forget gate block of an LSTM bias
                for v in &mut p.values[range.start + hd..range.start + 2 * hd] {
                    *v = 1.0;
                }
            }
            continue;
        }
        let fan_in = match slot.name.as_str() {
            n if n.ends_with(".w_x") || n.ends_with(".w_h") => {
                let prefix = n.rsplit_once('.').unwrap().0;
                let w_x = p.layout.slot(&format!("{prefix}.w_x")).unwrap();
                w_x.cols + hd
            }
            _ => slot.cols,
        };
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut p.values[range] {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(p)
}

#[derive(Debug, Clone)]
enum SampleCache {
    Lstm(Vec<LstmStep>),
    BdLstm {
        fwd: Vec<LstmStep>,
        bwd: Vec<LstmStep>,
    },
    EdLstm {
        enc: Vec<LstmStep>,
        dec: Vec<LstmStep>,
    },
    Cnn1d {
        pre: Vec<f64>,
        argmax: Vec<usize>,
        pooled: Vec<f64>,
    },
    Dense,
}

/// Activations recorded by [`forward_cached`] for [`backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    spec: Option<NetSpec>,
    inputs: Vec<f64>,
    samples: Vec<SampleCache>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }
}

fn check_shapes(spec: &NetSpec, params: &NetParams, inputs: &[f64]) -> Result<usize, NeuralError> {
    spec.validate()?;
    let need = spec.param_count();
    if params.values.len() != need {
        return Err(NeuralError::ParamCount {
            expected: need,
            got: params.values.len(),
        });
    }
    let w = spec.input_width();
    if inputs.is_empty() || !inputs.len().is_multiple_of(w) {
        return Err(NeuralError::Shape {
            expected: w * (inputs.len() / w).max(1),
            got: inputs.len(),
        });
    }
    Ok(inputs.len() / w)
}

fn run_lstm(p: &[f64], cell: &LstmSlots, steps: impl Iterator<Item = usize>, x: &[f64], f: usize) -> Vec<LstmStep> {
    let mut h = vec![0.0; cell.hidden];
    let mut c = vec![0.0; cell.hidden];
    let mut out = Vec::new();
    for t in steps {
        let st = lstm::step(p, cell, &x[t * f..(t + 1) * f], &h, &c);
        h.clone_from(&st.h);
        c.clone_from(&st.c);
        out.push(st);
    }
    out
}

fn forward_sample(spec: &NetSpec, arch: &Arch, p: &[f64], x: &[f64], y: &mut [f64]) -> SampleCache {
    let (n, f) = (spec.window, spec.input_features);
    match arch {
        Arch::Lstm { cell, head } => {
            let steps = run_lstm(p, cell, 0..n, x, f);
            head.apply(p, &steps[n - 1].h, y);
            SampleCache::Lstm(steps)
        }
        Arch::BdLstm { fwd, bwd, head } => {
            let fs = run_lstm(p, fwd, 0..n, x, f);
            let bs = run_lstm(p, bwd, (0..n).rev(), x, f);
            let mut joint = fs[n - 1].h.clone();
            joint.extend_from_slice(&bs[n - 1].h);
            head.apply(p, &joint, y);
            SampleCache::BdLstm { fwd: fs, bwd: bs }
        }
        Arch::EdLstm { enc, dec, head } => {
            let es = run_lstm(p, enc, 0..n, x, f);
            let last = &es[n - 1];
            let (mut h, mut c) = (last.h.clone(), last.c.clone());
            let mut prev = 0.0;
            let mut ds = Vec::with_capacity(spec.horizon);
            for yk in y.iter_mut().take(spec.horizon) {
                let st = lstm::step(p, dec, &[prev], &h, &c);
                let mut out = [0.0];
                head.apply(p, &st.h, &mut out);
                *yk = out[0];
                prev = out[0];
                h.clone_from(&st.h);
                c.clone_from(&st.c);
                ds.push(st);
            }
            SampleCache::EdLstm { enc: es, dec: ds }
        }
        Arch::Cnn1d { conv, head } => {
            let positions = n - CNN_KERNEL + 1;
            let kw = CNN_KERNEL * conv.channels;
            let mut pre = vec![0.0; conv.filters * positions];
            let mut argmax = vec![0; conv.filters];
            let mut pooled = vec![0.0; conv.filters];
            for k in 0..conv.filters {
                let w = &p[conv.w + k * kw..conv.w + (k + 1) * kw];
                let mut best = f64::NEG_INFINITY;
                for pos in 0..positions {
                    // the kernel sees CNN_KERNEL consecutive timesteps, laid out like the input
                    let patch = &x[pos * f..(pos + CNN_KERNEL) * f];
                    let z = p[conv.b + k] + w.iter().zip(patch).map(|(a, b)| a * b).sum::<f64>();
                    pre[k * positions + pos] = z;
                    if z > best {
                        best = z;
                        argmax[k] = pos;
                    }
                }
                pooled[k] = best.max(0.0);
            }
            head.apply(p, &pooled, y);
            SampleCache::Cnn1d { pre, argmax, pooled }
        }
        Arch::Dense { head } => {
            head.apply(p, x, y);
            SampleCache::Dense
        }
    }
}

/// Predictions for a batch laid out `B × window × features`; returns `B × horizon`.
pub fn forward(spec: &NetSpec, params: &NetParams, inputs: &[f64]) -> Result<Vec<f64>, NeuralError> {
    forward_cached(spec, params, inputs).map(|(y, _)| y)
}

pub fn forward_cached(
    spec: &NetSpec,
    params: &NetParams,
    inputs: &[f64],
) -> Result<(Vec<f64>, ForwardCache), NeuralError> {
    let b = check_shapes(spec, params, inputs)?;
    let (arch, _) = Arch::build(spec);
    let w = spec.input_width();
    let mut y = vec![0.0; b * spec.horizon];
    let samples = inputs
        .chunks(w)
        .zip(y.chunks_mut(spec.horizon))
        .map(|(x, out)| forward_sample(spec, &arch, &params.values, x, out))
        .collect();
    Ok((
        y,
        ForwardCache {
            spec: Some(*spec),
            inputs: inputs.to_vec(),
            samples,
        },
    ))
}

fn backward_lstm_chain(
    p: &[f64],
    cell: &LstmSlots,
    steps: &[LstmStep],
    mut dh: Vec<f64>,
    mut dc: Vec<f64>,
    grad: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    for st in steps.iter().rev() {
        let (_, dhp, dcp) = lstm::step_backward(p, cell, st, &dh, &dc, grad);
        dh = dhp;
        dc = dcp;
    }
    (dh, dc)
}

fn backward_sample(
    spec: &NetSpec,
    arch: &Arch,
    p: &[f64],
    x: &[f64],
    cache: &SampleCache,
    dy: &[f64],
    grad: &mut [f64],
) {
    let n = spec.window;
    match (arch, cache) {
        (Arch::Lstm { cell, head }, SampleCache::Lstm(steps)) => {
            let dh = head.backward(p, &steps[n - 1].h, dy, grad);
            backward_lstm_chain(p, cell, steps, dh, vec![0.0; cell.hidden], grad);
        }
        (Arch::BdLstm { fwd, bwd, head }, SampleCache::BdLstm { fwd: fs, bwd: bs }) => {
            let mut joint = fs[n - 1].h.clone();
            joint.extend_from_slice(&bs[n - 1].h);
            let dj = head.backward(p, &joint, dy, grad);
            let hd = fwd.hidden;
            backward_lstm_chain(p, fwd, fs, dj[..hd].to_vec(), vec![0.0; hd], grad);
            backward_lstm_chain(p, bwd, bs, dj[hd..].to_vec(), vec![0.0; hd], grad);
        }
        (Arch::EdLstm { enc, dec, head }, SampleCache::EdLstm { enc: es, dec: ds }) => {
            let hd = dec.hidden;
            let mut dh = vec![0.0; hd];
            let mut dc = vec![0.0; hd];
            // gradient flowing into output k from decoder input k + 1
            let mut d_feedback = 0.0;
            for k in (0..ds.len()).rev() {
                let dyk = dy[k] + d_feedback;
                let dh_head = head.backward(p, &ds[k].h, &[dyk], grad);
                for (a, b) in dh.iter_mut().zip(&dh_head) {
                    *a += b;
                }
                let (dx, dhp, dcp) = lstm::step_backward(p, dec, &ds[k], &dh, &dc, grad);
                d_feedback = if k > 0 { dx[0] } else { 0.0 };
                dh = dhp;
                dc = dcp;
            }
            backward_lstm_chain(p, enc, es, dh, dc, grad);
        }
        (Arch::Cnn1d { conv, head }, SampleCache::Cnn1d { pre, argmax, pooled }) => {
            let f = spec.input_features;
            let positions = n - CNN_KERNEL + 1;
            let kw = CNN_KERNEL * conv.channels;
            let dpool = head.backward(p, pooled, dy, grad);
            for k in 0..conv.filters {
                let pos = argmax[k];
                if pre[k * positions + pos] <= 0.0 {
                    continue;
                }
                let d = dpool[k];
                grad[conv.b + k] += d;
                let patch = &x[pos * f..(pos + CNN_KERNEL) * f];
                for (g, v) in grad[conv.w + k * kw..conv.w + (k + 1) * kw].iter_mut().zip(patch) {
                    *g += d * v;
                }
            }
        }
        (Arch::Dense { head }, SampleCache::Dense) => {
            head.backward(p, x, dy, grad);
        }
        _ => unreachable!("cache kind always matches the spec that produced it"),
    }
}

/// Gradient of the loss w.r.t. every parameter, given the loss gradient w.r.t.
/// the predictions of the cached forward pass.
pub fn backward(
    spec: &NetSpec,
    params: &NetParams,
    cache: &ForwardCache,
    loss_grad: &[f64],
) -> Result<Vec<f64>, NeuralError> {
    if cache.spec.as_ref() != Some(spec) || cache.samples.is_empty() {
        return Err(NeuralError::MissingCache);
    }
    let expected = cache.samples.len() * spec.horizon;
    if loss_grad.len() != expected {
        return Err(NeuralError::Shape {
            expected,
            got: loss_grad.len(),
        });
    }
    if params.values.len() != spec.param_count() {
        return Err(NeuralError::ParamCount {
            expected: spec.param_count(),
            got: params.values.len(),
        });
    }
    let (arch, _) = Arch::build(spec);
    let mut grad = vec![0.0; params.values.len()];
    let w = spec.input_width();
    for (m, sc) in cache.samples.iter().enumerate() {
        let dy = &loss_grad[m * spec.horizon..(m + 1) * spec.horizon];
        if dy.iter().all(|&d| d == 0.0) {
            continue;
        }
        backward_sample(
            spec,
            &arch,
            &params.values,
            &cache.inputs[m * w..(m + 1) * w],
            sc,
            dy,
            &mut grad,
        );
    }
    Ok(grad)
}
