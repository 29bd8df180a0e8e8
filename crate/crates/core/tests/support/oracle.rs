//! Straight-line f64 reference implementation of the estimator, written
//! independently of the library's network code. Tensors are looked up by name.

#![allow(dead_code)]

use hr_sentinel::estimator::{Activation, EstimatorConfig, Padding, Params};

fn tensor<'a>(p: &'a Params<f64>, name: &str) -> &'a [f64] {
    &p.tensors
        .iter()
        .find(|t| t.name == name)
        .unwrap_or_else(|| panic!("missing tensor {name}"))
        .data
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        Activation::Tanh => z.tanh(),
        Activation::Identity => z,
    }
}

/// Output of every stage: `stages[l][t][c]` for the input and each conv layer,
/// followed by the pooled vector and the scalar output.
pub struct OracleTrace {
    pub stages: Vec<Vec<Vec<f64>>>,
    pub pooled: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: f64,
}

pub fn forward_trace(cfg: &EstimatorConfig, p: &Params<f64>, raw: &[f64]) -> OracleTrace {
    assert_eq!(raw.len(), cfg.k);
    let mut x: Vec<Vec<f64>> = raw.iter().map(|v| vec![v / cfg.input_scale]).collect();
    let mut stages = vec![x.clone()];
    let kern = cfg.kernel_size;
    for l in 0..4 {
        let w = tensor(p, &format!("conv{}.weight", l + 1));
        let b = tensor(p, &format!("conv{}.bias", l + 1));
        let c_in = x[0].len();
        let c_out = cfg.conv_filters[l];
        let (out_len, offset) = match cfg.padding {
            Padding::Valid => (x.len() - kern + 1, 0i64),
            Padding::Same => (x.len(), ((kern - 1) / 2) as i64),
        };
        let mut y = vec![vec![0.0; c_out]; out_len];
        for (t, row) in y.iter_mut().enumerate() {
            for (o, cell) in row.iter_mut().enumerate() {
                let mut z = b[o];
                for j in 0..kern {
                    let src = t as i64 + j as i64 - offset;
                    if src < 0 || src >= x.len() as i64 {
                        continue;
                    }
                    for i in 0..c_in {
                        z += w[(j * c_in + i) * c_out + o] * x[src as usize][i];
                    }
                }
                *cell = act(cfg.activation, z);
            }
        }
        x = y;
        stages.push(x.clone());
    }
    let c = x[0].len();
    let pooled: Vec<f64> = (0..c)
        .map(|ch| x.iter().map(|r| r[ch]).sum::<f64>() / x.len() as f64)
        .collect();
    let h_units = cfg.dense_units[0];
    let w1 = tensor(p, "dense1.weight");
    let b1 = tensor(p, "dense1.bias");
    let hidden: Vec<f64> = (0..h_units)
        .map(|h| {
            let z = b1[h] + (0..c).map(|i| w1[i * h_units + h] * pooled[i]).sum::<f64>();
            act(cfg.activation, z)
        })
        .collect();
    let w2 = tensor(p, "dense2.weight");
    let b2 = tensor(p, "dense2.bias");
    let output = b2[0] + hidden.iter().zip(w2).map(|(h, w)| h * w).sum::<f64>();
    OracleTrace {
        stages,
        pooled,
        hidden,
        output,
    }
}

pub fn forward(cfg: &EstimatorConfig, p: &Params<f64>, raw: &[f64]) -> f64 {
    forward_trace(cfg, p, raw).output
}

/// Mean absolute error of the oracle over a batch.
pub fn batch_loss(cfg: &EstimatorConfig, p: &Params<f64>, windows: &[Vec<f64>], labels: &[f64]) -> f64 {
    windows
        .iter()
        .zip(labels)
        .map(|(w, y)| (forward(cfg, p, w) - y).abs())
        .sum::<f64>()
        / windows.len() as f64
}

/// Which units are strictly positive after activation, over a whole batch.
/// For ReLU networks this is the set of linear pieces the batch lies on.
fn active_pattern(cfg: &EstimatorConfig, p: &Params<f64>, windows: &[Vec<f64>]) -> Vec<bool> {
    let mut out = Vec::new();
    for w in windows {
        let t = forward_trace(cfg, p, w);
        for stage in &t.stages[1..] {
            out.extend(stage.iter().flatten().map(|&v| v > 0.0));
        }
        out.extend(t.hidden.iter().map(|&v| v > 0.0));
    }
    out
}

/// Central finite-difference gradient of [`batch_loss`] for every parameter,
/// in declaration order.
///
/// For ReLU networks a step of `h` can cross a kink, where the difference
/// quotient no longer approximates the derivative. In that case the step is
/// shrunk for that parameter until both probes stay on the same linear piece.
pub fn numeric_gradient(
    cfg: &EstimatorConfig,
    p: &Params<f64>,
    windows: &[Vec<f64>],
    labels: &[f64],
    h: f64,
) -> Vec<f64> {
    let kinked = cfg.activation == Activation::Relu;
    let base = active_pattern(cfg, p, windows);
    let mut probe = p.clone();
    let mut out = Vec::with_capacity(p.len());
    for ti in 0..p.tensors.len() {
        for di in 0..p.tensors[ti].data.len() {
            let orig = probe.tensors[ti].data[di];
            let mut step = h;
            loop {
                probe.tensors[ti].data[di] = orig + step;
                let up = batch_loss(cfg, &probe, windows, labels);
                let up_ok = !kinked || active_pattern(cfg, &probe, windows) == base;
                probe.tensors[ti].data[di] = orig - step;
                let down = batch_loss(cfg, &probe, windows, labels);
                let down_ok = !kinked || active_pattern(cfg, &probe, windows) == base;
                probe.tensors[ti].data[di] = orig;
                if (up_ok && down_ok) || step < 1e-9 {
                    out.push((up - down) / (2.0 * step));
                    break;
                }
                step /= 10.0;
            }
        }
    }
    out
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

pub fn tiny_config(seed: u64, activation: Activation) -> EstimatorConfig {
    EstimatorConfig {
        k: 6,
        conv_filters: vec![2, 2, 2, 2],
        kernel_size: 2,
        activation,
        seed,
        ..EstimatorConfig::default()
    }
}

/// Outcome of one gradient check: worst relative error and how many
/// parameters were compared.
pub struct GradCheck {
    pub max_rel_err: f64,
    pub params: usize,
}

/// Compare the library's analytic batch gradient against central differences
/// of the oracle loss on a random model built from `seed`.
pub fn gradient_check(seed: u64, activation: Activation) -> GradCheck {
    use hr_sentinel::estimator::init_model;
    use hr_sentinel::estimator::network::{batch_gradient, scale_input, Geometry, Trace};
    use rand::{Rng, SeedableRng};

    let cfg = tiny_config(seed, activation);
    let model = init_model(&cfg).expect("tiny config is valid");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut p: Params<f64> = model.params.cast();
    for t in &mut p.tensors {
        if t.name.ends_with(".bias") {
            for v in &mut t.data {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    let windows: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..cfg.k).map(|_| rng.random_range(40.0..180.0)).collect())
        .collect();
    // labels kept at least 0.5 bpm from the prediction, away from the |.| kink
    let labels: Vec<f64> = windows
        .iter()
        .map(|w| {
            let off = rng.random_range(0.5..2.0);
            forward(&cfg, &p, w) + if rng.random_bool(0.5) { off } else { -off }
        })
        .collect();

    let g = Geometry::new(&cfg);
    let mut trace = Trace::new(&g);
    let mut grads = Params::<f64>::zeros(&cfg);
    let mut inputs = vec![0.0f64; cfg.k * windows.len()];
    for (w, out) in windows.iter().zip(inputs.chunks_exact_mut(cfg.k)) {
        scale_input(w, cfg.input_scale, out);
    }
    batch_gradient(&g, &p, &inputs, &labels, &mut trace, &mut grads);
    let numeric = numeric_gradient(&cfg, &p, &windows, &labels, 1e-5);
    let max_rel_err = grads
        .iter()
        .zip(&numeric)
        .map(|(&a, &b)| relative_error(a, b))
        .fold(0.0, f64::max);
    GradCheck {
        max_rel_err,
        params: numeric.len(),
    }
}
