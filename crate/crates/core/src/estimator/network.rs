//! Forward and backward passes, generic over the float type so gradients can
//! be checked in double precision on a copy of the single-precision weights.

use num_traits::Float;

use super::config::{Activation, EstimatorConfig, Padding, CONV_LAYERS};
use super::params::Params;

/// Layer geometry derived once from a config.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub kernel: usize,
    pub pad_left: usize,
    pub lengths: [usize; CONV_LAYERS + 1],
    pub channels: [usize; CONV_LAYERS + 1],
    pub hidden: usize,
    pub activation: Activation,
}

impl Geometry {
    pub fn new(cfg: &EstimatorConfig) -> Self {
        Self {
            kernel: cfg.kernel_size,
            pad_left: match cfg.padding {
                Padding::Valid => 0,
                Padding::Same => (cfg.kernel_size - 1) / 2,
            },
            lengths: cfg.temporal_lengths(),
            channels: cfg.channels(),
            hidden: cfg.dense_units[0],
            activation: cfg.activation,
        }
    }

    pub fn pooled_width(&self) -> usize {
        self.channels[CONV_LAYERS]
    }
}

fn activate<T: Float>(act: Activation, z: T) -> T {
    match act {
        Activation::Relu => z.max(T::zero()),
        Activation::Tanh => z.tanh(),
        Activation::Identity => z,
    }
}

/// Derivative expressed through the pre-activation `z` and output `a`.
fn activate_grad<T: Float>(act: Activation, z: T, a: T) -> T {
    match act {
        Activation::Relu => {
            if z > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Activation::Tanh => T::one() - a * a,
        Activation::Identity => T::one(),
    }
}

/// Intermediate values of one forward pass, reused across samples.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// `acts[0]` is the scaled input; `acts[l]` the output of conv layer `l`.
    /// Each is `[time][channel]`.
    pub acts: Vec<Vec<T>>,
    /// Pre-activations of conv layers, `pre[l - 1]` for layer `l`.
    pub pre: Vec<Vec<T>>,
    pub pooled: Vec<T>,
    pub hidden_pre: Vec<T>,
    pub hidden: Vec<T>,
    pub output: T,
    // backward scratch
    d_act: Vec<Vec<T>>,
    d_hidden: Vec<T>,
    d_pooled: Vec<T>,
}

impl<T: Float> Trace<T> {
    pub fn new(g: &Geometry) -> Self {
        let acts = (0..=CONV_LAYERS)
            .map(|l| vec![T::zero(); g.lengths[l] * g.channels[l]])
            .collect::<Vec<_>>();
        Self {
            pre: acts[1..].to_vec(),
            d_act: acts.clone(),
            acts,
            pooled: vec![T::zero(); g.pooled_width()],
            hidden_pre: vec![T::zero(); g.hidden],
            hidden: vec![T::zero(); g.hidden],
            output: T::zero(),
            d_hidden: vec![T::zero(); g.hidden],
            d_pooled: vec![T::zero(); g.pooled_width()],
        }
    }
}

/// Run the network on an already scaled input of length `k`; the raw linear
/// output is stored in `trace.output` and returned.
pub fn forward<T: Float>(g: &Geometry, p: &Params<T>, input: &[T], trace: &mut Trace<T>) -> T {
    trace.acts[0].copy_from_slice(input);
    for l in 0..CONV_LAYERS {
        let w = &p.tensors[2 * l].data;
        let b = &p.tensors[2 * l + 1].data;
        let (c_in, c_out) = (g.channels[l], g.channels[l + 1]);
        let (l_in, l_out) = (g.lengths[l], g.lengths[l + 1]);
        let (before, after) = trace.acts.split_at_mut(l + 1);
        let a_in = &before[l];
        let a_out = &mut after[0];
        let z = &mut trace.pre[l];
        for t in 0..l_out {
            let zt = &mut z[t * c_out..(t + 1) * c_out];
            zt.copy_from_slice(b);
            for j in 0..g.kernel {
                let src = t + j;
                if src < g.pad_left || src - g.pad_left >= l_in {
                    continue;
                }
                let src = src - g.pad_left;
                for i in 0..c_in {
                    let x = a_in[src * c_in + i];
                    let wrow = &w[(j * c_in + i) * c_out..(j * c_in + i + 1) * c_out];
                    for (zo, &wo) in zt.iter_mut().zip(wrow) {
                        *zo = *zo + wo * x;
                    }
                }
            }
            for (o, &zo) in zt.iter().enumerate() {
                a_out[t * c_out + o] = activate(g.activation, zo);
            }
        }
    }

    let c = g.pooled_width();
    let len = g.lengths[CONV_LAYERS];
    let last = &trace.acts[CONV_LAYERS];
    let inv_len = T::one() / T::from(len).unwrap();
    for ch in 0..c {
        let mut s = T::zero();
        for t in 0..len {
            s = s + last[t * c + ch];
        }
        trace.pooled[ch] = s * inv_len;
    }

    let w1 = &p.tensors[2 * CONV_LAYERS].data;
    let b1 = &p.tensors[2 * CONV_LAYERS + 1].data;
    trace.hidden_pre.copy_from_slice(b1);
    for (i, &x) in trace.pooled.iter().enumerate() {
        let row = &w1[i * g.hidden..(i + 1) * g.hidden];
        for (h, &wv) in trace.hidden_pre.iter_mut().zip(row) {
            *h = *h + wv * x;
        }
    }
    for (a, &z) in trace.hidden.iter_mut().zip(&trace.hidden_pre) {
        *a = activate(g.activation, z);
    }

    let w2 = &p.tensors[2 * CONV_LAYERS + 2].data;
    let b2 = p.tensors[2 * CONV_LAYERS + 3].data[0];
    let mut y = b2;
    for (&h, &wv) in trace.hidden.iter().zip(w2) {
        y = y + wv * h;
    }
    trace.output = y;
    y
}

/// Accumulate `d_output * d(output)/d(params)` into `grads` using the values
/// left in `trace` by the preceding [`forward`] call.
#[allow(clippy::needless_range_loop)]
pub fn backward<T: Float>(g: &Geometry, p: &Params<T>, trace: &mut Trace<T>, d_output: T, grads: &mut Params<T>) {
    let hidden = g.hidden;
    let (gw2, gb2) = (2 * CONV_LAYERS + 2, 2 * CONV_LAYERS + 3);
    let w2 = &p.tensors[gw2].data;
    for h in 0..hidden {
        let gw = &mut grads.tensors[gw2].data[h];
        *gw = *gw + d_output * trace.hidden[h];
        trace.d_hidden[h] = w2[h] * d_output * activate_grad(g.activation, trace.hidden_pre[h], trace.hidden[h]);
    }
    grads.tensors[gb2].data[0] = grads.tensors[gb2].data[0] + d_output;

    let (gw1, gb1) = (2 * CONV_LAYERS, 2 * CONV_LAYERS + 1);
    let w1 = &p.tensors[gw1].data;
    for (i, &x) in trace.pooled.iter().enumerate() {
        let mut acc = T::zero();
        for h in 0..hidden {
            let dh = trace.d_hidden[h];
            let gw = &mut grads.tensors[gw1].data[i * hidden + h];
            *gw = *gw + dh * x;
            acc = acc + w1[i * hidden + h] * dh;
        }
        trace.d_pooled[i] = acc;
    }
    for h in 0..hidden {
        let gb = &mut grads.tensors[gb1].data[h];
        *gb = *gb + trace.d_hidden[h];
    }

    let c = g.pooled_width();
    let len = g.lengths[CONV_LAYERS];
    let inv_len = T::one() / T::from(len).unwrap();
    {
        let d_last = &mut trace.d_act[CONV_LAYERS];
        for t in 0..len {
            for ch in 0..c {
                d_last[t * c + ch] = trace.d_pooled[ch] * inv_len;
            }
        }
    }

    for l in (0..CONV_LAYERS).rev() {
        let (c_in, c_out) = (g.channels[l], g.channels[l + 1]);
        let (l_in, l_out) = (g.lengths[l], g.lengths[l + 1]);
        let w = &p.tensors[2 * l].data;
        // turn d_act[l+1] into d_pre in place
        {
            let z = &trace.pre[l];
            let a = &trace.acts[l + 1];
            let d = &mut trace.d_act[l + 1];
            for idx in 0..l_out * c_out {
                d[idx] = d[idx] * activate_grad(g.activation, z[idx], a[idx]);
            }
        }
        let need_input_grad = l > 0;
        let (d_lo, d_hi) = trace.d_act.split_at_mut(l + 1);
        let dz = &d_hi[0];
        let d_in = &mut d_lo[l];
        if need_input_grad {
            d_in.iter_mut().for_each(|v| *v = T::zero());
        }
        let a_in = &trace.acts[l];
        let (gw_t, gb_t) = grads.tensors.split_at_mut(2 * l + 1);
        let gw = &mut gw_t[2 * l].data;
        let gb = &mut gb_t[0].data;
        for t in 0..l_out {
            let dzt = &dz[t * c_out..(t + 1) * c_out];
            for (o, &d) in dzt.iter().enumerate() {
                gb[o] = gb[o] + d;
            }
            for j in 0..g.kernel {
                let src = t + j;
                if src < g.pad_left || src - g.pad_left >= l_in {
                    continue;
                }
                let src = src - g.pad_left;
                for i in 0..c_in {
                    let x = a_in[src * c_in + i];
                    let base = (j * c_in + i) * c_out;
                    let mut acc = T::zero();
                    for (o, &d) in dzt.iter().enumerate() {
                        gw[base + o] = gw[base + o] + d * x;
                        acc = acc + w[base + o] * d;
                    }
                    if need_input_grad {
                        d_in[src * c_in + i] = d_in[src * c_in + i] + acc;
                    }
                }
            }
        }
    }
}

/// Subgradient of `|pred - label|` with respect to `pred`, zero at the kink.
pub fn abs_loss_grad<T: Float>(pred: T, label: T) -> T {
    if pred > label {
        T::one()
    } else if pred < label {
        -T::one()
    } else {
        T::zero()
    }
}

/// Scale raw bpm values into the network's input units.
pub fn scale_input<T: Float>(window: &[f64], input_scale: f64, out: &mut [T]) {
    for (o, &v) in out.iter_mut().zip(window) {
        *o = T::from(v / input_scale).expect("finite input");
    }
}

/// Mean absolute-error loss and its gradient over a batch of scaled inputs.
/// `inputs` is `labels.len()` consecutive windows of length `k`.
pub fn batch_gradient<T: Float>(
    g: &Geometry,
    p: &Params<T>,
    inputs: &[T],
    labels: &[T],
    trace: &mut Trace<T>,
    grads: &mut Params<T>,
) -> f64 {
    let k = g.lengths[0];
    let n = labels.len();
    grads.fill_zero();
    let inv_n = T::one() / T::from(n).unwrap();
    let mut loss = 0.0f64;
    for (x, &y) in inputs.chunks_exact(k).zip(labels) {
        let pred = forward(g, p, x, trace);
        loss += (pred - y).abs().to_f64().unwrap_or(f64::NAN);
        backward(g, p, trace, abs_loss_grad(pred, y) * inv_n, grads);
    }
    loss / n as f64
}
