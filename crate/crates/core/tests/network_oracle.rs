mod support;

use hr_sentinel::estimator::network::{backward, batch_gradient, forward, scale_input, Geometry, Trace};
use hr_sentinel::estimator::{init_model, Activation, EstimatorConfig, Padding, Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracle;

fn random_window(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(40.0..180.0)).collect()
}

fn library_forward(cfg: &EstimatorConfig, p: &Params<f64>, raw: &[f64]) -> (f64, Trace<f64>) {
    let g = Geometry::new(cfg);
    let mut trace = Trace::new(&g);
    let mut input = vec![0.0; cfg.k];
    scale_input(raw, cfg.input_scale, &mut input);
    let y = forward(&g, p, &input, &mut trace);
    (y, trace)
}

#[test]
fn forward_matches_oracle_on_default_architecture() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..5 {
        let cfg = EstimatorConfig {
            seed,
            ..Default::default()
        };
        let p: Params<f64> = init_model(&cfg).unwrap().params.cast();
        for _ in 0..20 {
            let w = random_window(&mut rng, cfg.k);
            let (y, trace) = library_forward(&cfg, &p, &w);
            let o = oracle::forward_trace(&cfg, &p, &w);
            assert!((y - o.output).abs() < 1e-9, "{y} vs {}", o.output);
            for (a, b) in trace.pooled.iter().zip(&o.pooled) {
                assert!((a - b).abs() < 1e-12);
            }
            let lens: Vec<usize> = o.stages.iter().map(Vec::len).collect();
            assert_eq!(lens, vec![10, 8, 6, 4, 2]);
        }
    }
}

#[test]
fn forward_matches_oracle_for_other_activations_and_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for activation in [Activation::Tanh, Activation::Identity, Activation::Relu] {
        for padding in [Padding::Valid, Padding::Same] {
            let cfg = EstimatorConfig {
                activation,
                padding,
                ..Default::default()
            };
            let p: Params<f64> = init_model(&cfg).unwrap().params.cast();
            for _ in 0..10 {
                let w = random_window(&mut rng, cfg.k);
                let (y, _) = library_forward(&cfg, &p, &w);
                assert!((y - oracle::forward(&cfg, &p, &w)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn single_filter_network_is_a_hand_computable_chain() {
    // identity activations and one channel per layer collapse the network into
    // a fixed linear filter followed by an affine map
    let cfg = EstimatorConfig {
        conv_filters: vec![1, 1, 1, 1],
        dense_units: vec![1, 1],
        activation: Activation::Identity,
        ..Default::default()
    };
    let mut p = Params::<f64>::zeros(&cfg);
    for l in 0..4 {
        p.tensors[2 * l].data = vec![1.0, 0.0, 0.0];
    }
    p.tensors[8].data = vec![2.0];
    p.tensors[9].data = vec![0.5];
    p.tensors[10].data = vec![3.0];
    p.tensors[11].data = vec![-1.0];
    let w: Vec<f64> = (1..=10).map(|v| v as f64 * 20.0).collect();
    // four taps [1,0,0] keep x[0..2]; mean of x[0], x[1] = 30 / 200 = 0.15
    let expected = 3.0 * (2.0 * 0.15 + 0.5) - 1.0;
    let (y, _) = library_forward(&cfg, &p, &w);
    assert!((y - expected).abs() < 1e-6, "{y}");
    assert!((oracle::forward(&cfg, &p, &w) - expected).abs() < 1e-6);
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..10 {
        for activation in [Activation::Relu, Activation::Tanh] {
            let check = oracle::gradient_check(seed, activation);
            assert!(check.params > 0);
            assert!(
                check.max_rel_err < 1e-3,
                "seed {seed} {activation:?}: max relative error {}",
                check.max_rel_err
            );
        }
    }
}

#[test]
fn zero_loss_gives_zero_gradient() {
    let cfg = oracle::tiny_config(3, Activation::Relu);
    let p: Params<f64> = init_model(&cfg).unwrap().params.cast();
    let g = Geometry::new(&cfg);
    let mut trace = Trace::new(&g);
    let mut grads = Params::<f64>::zeros(&cfg);
    let w = vec![60.0, 62.0, 61.0, 90.0, 95.0, 70.0];
    let mut input = vec![0.0; 6];
    scale_input(&w, cfg.input_scale, &mut input);
    let pred = forward(&g, &p, &input, &mut trace);
    let loss = batch_gradient(&g, &p, &input, &[pred], &mut trace, &mut grads);
    assert_eq!(loss, 0.0);
    assert!(grads.iter().all(|&v| v == 0.0));
}

#[test]
fn duplicated_batch_has_the_same_mean_gradient() {
    let cfg = oracle::tiny_config(9, Activation::Tanh);
    let p: Params<f64> = init_model(&cfg).unwrap().params.cast();
    let g = Geometry::new(&cfg);
    let mut trace = Trace::new(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let raw: Vec<f64> = (0..3).flat_map(|_| random_window(&mut rng, 6)).collect();
    let mut input = vec![0.0; raw.len()];
    scale_input(&raw, cfg.input_scale, &mut input);
    let labels = [5.0, 12.0, 30.0];

    let mut once = Params::<f64>::zeros(&cfg);
    let l1 = batch_gradient(&g, &p, &input, &labels, &mut trace, &mut once);
    let doubled_in: Vec<f64> = input.iter().chain(&input).copied().collect();
    let doubled_labels: Vec<f64> = labels.iter().chain(&labels).copied().collect();
    let mut twice = Params::<f64>::zeros(&cfg);
    let l2 = batch_gradient(&g, &p, &doubled_in, &doubled_labels, &mut trace, &mut twice);
    assert!((l1 - l2).abs() < 1e-12);
    for (a, b) in once.iter().zip(twice.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn backward_accumulates_linearly_in_d_output() {
    let cfg = oracle::tiny_config(4, Activation::Tanh);
    let p: Params<f64> = init_model(&cfg).unwrap().params.cast();
    let g = Geometry::new(&cfg);
    let mut trace = Trace::new(&g);
    let mut input = vec![0.0; 6];
    scale_input(&[70.0, 71.0, 75.0, 80.0, 78.0, 77.0], cfg.input_scale, &mut input);
    forward(&g, &p, &input, &mut trace);
    let mut a = Params::<f64>::zeros(&cfg);
    backward(&g, &p, &mut trace, 1.0, &mut a);
    let mut b = Params::<f64>::zeros(&cfg);
    backward(&g, &p, &mut trace, 0.5, &mut b);
    backward(&g, &p, &mut trace, 0.5, &mut b);
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() < 1e-12);
    }
}
