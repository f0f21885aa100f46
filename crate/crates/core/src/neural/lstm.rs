//! Single LSTM cell step and its exact backward pass.
//!
//! Gate pre-activations are stacked `[input, forget, cell, output]`, each of
//! length `hidden`. Weights are row-major: `w_x` is `4·hidden × input`,
//! `w_h` is `4·hidden × hidden`.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LstmSlots {
    pub w_x: usize,
    pub w_h: usize,
    pub b: usize,
    pub input: usize,
    pub hidden: usize,
}

#[cfg(test)]
impl LstmSlots {
    pub fn param_count(input: usize, hidden: usize) -> usize {
        4 * hidden * (input + hidden) + 4 * hidden
    }
}

/// Activations of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gates, `[i, f, g, o]`.
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn step(params: &[f64], s: &LstmSlots, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
    let (hd, nin) = (s.hidden, s.input);
    debug_assert_eq!(x.len(), nin);
    let mut gates = params[s.b..s.b + 4 * hd].to_vec();
    for (r, z) in gates.iter_mut().enumerate() {
        let wx = &params[s.w_x + r * nin..s.w_x + (r + 1) * nin];
        let wh = &params[s.w_h + r * hd..s.w_h + (r + 1) * hd];
        *z += wx.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        *z += wh.iter().zip(h_prev).map(|(w, v)| w * v).sum::<f64>();
    }
    for (r, z) in gates.iter_mut().enumerate() {
        *z = if (2 * hd..3 * hd).contains(&r) {
            z.tanh()
        } else {
            sigmoid(*z)
        };
    }
    let mut c = vec![0.0; hd];
    let mut tanh_c = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    for k in 0..hd {
        let (i, f, g, o) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
        c[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c[k].tanh();
        h[k] = o * tanh_c[k];
    }
    LstmStep {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        tanh_c,
        h,
        c,
    }
}

/// Backpropagates `dh`, `dc` (total gradients w.r.t. this step's `h` and `c`)
/// through one step. Accumulates parameter gradients into `grad` and returns
/// `(dx, dh_prev, dc_prev)`.
pub(crate) fn step_backward(
    params: &[f64],
    s: &LstmSlots,
    st: &LstmStep,
    dh: &[f64],
    dc: &[f64],
    grad: &mut [f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (hd, nin) = (s.hidden, s.input);
    let mut dz = vec![0.0; 4 * hd];
    let mut dc_prev = vec![0.0; hd];
    for k in 0..hd {
        let (i, f, g, o) = (
            st.gates[k],
            st.gates[hd + k],
            st.gates[2 * hd + k],
            st.gates[3 * hd + k],
        );
        let tc = st.tanh_c[k];
        let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
        dz[k] = dct * g * i * (1.0 - i);
        dz[hd + k] = dct * st.c_prev[k] * f * (1.0 - f);
        dz[2 * hd + k] = dct * i * (1.0 - g * g);
        dz[3 * hd + k] = dh[k] * tc * o * (1.0 - o);
        dc_prev[k] = dct * f;
    }
    let mut dx = vec![0.0; nin];
    let mut dh_prev = vec![0.0; hd];
    for (r, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grad[s.b + r] += d;
        let row_x = s.w_x + r * nin;
        for j in 0..nin {
            grad[row_x + j] += d * st.x[j];
            dx[j] += d * params[row_x + j];
        }
        let row_h = s.w_h + r * hd;
        for j in 0..hd {
            grad[row_h + j] += d * st.h_prev[j];
            dh_prev[j] += d * params[row_h + j];
        }
    }
    (dx, dh_prev, dc_prev)
}
