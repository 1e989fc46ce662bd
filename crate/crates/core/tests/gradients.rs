//! Finite-difference and adjointness checks for every layer kind.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use szgan_core::tensor::{
    conv2d_forward, deconv2d_forward, LayerSpec, Mode, Model, Network, Tensor,
};

fn randn(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Scalar objective `sum(r * f(x))` evaluated with a fixed dropout stream.
fn objective(model: &mut Model, x: &Tensor, r: &[f64], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = model.forward(x, Mode::Train, &mut rng).unwrap();
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares analytic parameter and input gradients to central differences.
fn check_network(net: Network, batch: usize, seed: u64, probes: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = net.init_params(seed);
    for (_, t) in params.tensors_mut() {
        let fresh = randn(t.len(), &mut rng);
        t.data_mut().copy_from_slice(&fresh);
    }
    let mut in_shape = vec![batch];
    in_shape.extend_from_slice(net.input_shape());
    let x = Tensor::new(in_shape.clone(), randn(in_shape.iter().product(), &mut rng)).unwrap();
    let out_len = batch * net.output_shape().iter().product::<usize>();
    let r = randn(out_len, &mut rng);
    let mut model = Model::new(net, params).unwrap();

    let drop_seed = seed ^ 0xD0;
    objective(&mut model, &x, &r, drop_seed);
    let mut upstream_shape = vec![batch];
    upstream_shape.extend_from_slice(model.network().output_shape());
    let dx = model
        .backward(&Tensor::new(upstream_shape, r.clone()).unwrap())
        .unwrap();

    let h = 1e-5;
    let names: Vec<String> = model.params().tensors().iter().map(|(n, _)| n.clone()).collect();
    for k in 0..probes {
        let name = &names[rng.random_range(0..names.len())];
        let (layer, part) = name.rsplit_once('.').unwrap();
        let len = {
            let p = model.params().get(layer).unwrap();
            if part == "weight" { p.weight.len() } else { p.bias.len() }
        };
        let idx = rng.random_range(0..len);
        let analytic = {
            let p = model.params().get(layer).unwrap();
            let t = if part == "weight" { &p.weight } else { &p.bias };
            t.grad().unwrap()[idx]
        };
        let bump = |delta: f64, model: &mut Model| {
            let p = model.params_mut().get_mut(layer).unwrap();
            let t = if part == "weight" { &mut p.weight } else { &mut p.bias };
            t.data_mut()[idx] += delta;
        };
        bump(h, &mut model);
        let plus = objective(&mut model, &x, &r, drop_seed);
        bump(-2.0 * h, &mut model);
        let minus = objective(&mut model, &x, &r, drop_seed);
        bump(h, &mut model);
        let numeric = (plus - minus) / (2.0 * h);
        let err = rel_err(analytic, numeric);
        assert!(err < 1e-4, "probe {k} {name}[{idx}]: analytic {analytic} numeric {numeric} rel {err}");
    }

    for _ in 0..probes.min(x.len()) {
        let idx = rng.random_range(0..x.len());
        let mut xp = x.clone();
        xp.data_mut()[idx] += h;
        let plus = objective(&mut model, &xp, &r, drop_seed);
        xp.data_mut()[idx] -= 2.0 * h;
        let minus = objective(&mut model, &xp, &r, drop_seed);
        let numeric = (plus - minus) / (2.0 * h);
        let err = rel_err(dx.data()[idx], numeric);
        assert!(err < 1e-4, "input[{idx}]: analytic {} numeric {numeric}", dx.data()[idx]);
    }
}

#[test]
fn dense_stack_with_every_pointwise_activation() {
    let net = Network::new(
        &[6],
        vec![
            LayerSpec::Dense { out: 5 },
            LayerSpec::Sigmoid,
            LayerSpec::Dropout { rate: 0.3 },
            LayerSpec::Dense { out: 4 },
            LayerSpec::Tanh,
            LayerSpec::Dense { out: 4 },
            LayerSpec::Relu,
            LayerSpec::Dense { out: 3 },
            LayerSpec::LeakyRelu { leak: 0.2 },
            LayerSpec::Dense { out: 3 },
            LayerSpec::Softmax,
        ],
    )
    .unwrap();
    check_network(net, 3, 1, 30);
}

#[test]
fn conv_stack() {
    let net = Network::new(
        &[2, 8, 12],
        vec![
            LayerSpec::Conv2d { filters: 3, kernel: (5, 5), stride: (2, 2) },
            LayerSpec::LeakyRelu { leak: 0.2 },
            LayerSpec::Conv2d { filters: 2, kernel: (3, 3), stride: (2, 1) },
            LayerSpec::Flatten,
            LayerSpec::Dense { out: 2 },
        ],
    )
    .unwrap();
    check_network(net, 2, 2, 30);
}

#[test]
fn deconv_stack_with_reshape() {
    let net = Network::new(
        &[4],
        vec![
            LayerSpec::Dense { out: 12 },
            LayerSpec::Relu,
            LayerSpec::Reshape { shape: vec![3, 2, 2] },
            LayerSpec::Deconv2d { filters: 2, kernel: (5, 5), stride: (2, 2) },
            LayerSpec::Tanh,
            LayerSpec::Deconv2d { filters: 1, kernel: (3, 3), stride: (1, 2) },
        ],
    )
    .unwrap();
    check_network(net, 2, 3, 30);
}

#[test]
fn toy_discriminator_and_generator() {
    let d = Network::new(
        &[1, 8, 16],
        vec![
            LayerSpec::Conv2d { filters: 2, kernel: (5, 5), stride: (2, 2) },
            LayerSpec::LeakyRelu { leak: 0.2 },
            LayerSpec::Conv2d { filters: 3, kernel: (5, 5), stride: (2, 2) },
            LayerSpec::LeakyRelu { leak: 0.2 },
            LayerSpec::Conv2d { filters: 4, kernel: (5, 5), stride: (2, 2) },
            LayerSpec::LeakyRelu { leak: 0.2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { out: 1 },
        ],
    )
    .unwrap();
    check_network(d, 2, 4, 25);
    let g = Network::new(
        &[5],
        vec![
            LayerSpec::Dense { out: 8 },
            LayerSpec::Relu,
            LayerSpec::Reshape { shape: vec![4, 1, 2] },
            LayerSpec::Deconv2d { filters: 3, kernel: (5, 5), stride: (2, 2) },
            LayerSpec::Relu,
            LayerSpec::Deconv2d { filters: 2, kernel: (5, 5), stride: (2, 2) },
            LayerSpec::Relu,
            LayerSpec::Deconv2d { filters: 1, kernel: (5, 5), stride: (2, 2) },
            LayerSpec::Tanh,
        ],
    )
    .unwrap();
    check_network(g, 2, 5, 25);
}

#[test]
fn identical_seeds_train_identically() {
    use szgan_core::tensor::{Optimizer, OptimizerConfig};
    let run = || {
        let net = Network::new(
            &[1, 4, 8],
            vec![
                LayerSpec::Conv2d { filters: 2, kernel: (3, 3), stride: (2, 2) },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Dense { out: 1 },
            ],
        )
        .unwrap();
        let params = net.init_params(42);
        let mut model = Model::new(net, params).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let x = Tensor::new(vec![3, 1, 4, 8], randn(96, &mut rng)).unwrap();
            model.forward(&x, Mode::Train, &mut rng).unwrap();
            model.backward(&Tensor::full(&[3, 1], 1.0)).unwrap();
            opt.step(model.params_mut()).unwrap();
        }
        model.into_params()
    };
    assert!(run().bitwise_eq(&run()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// <conv(x), y> == <x, deconv(y)> with shared weights.
    #[test]
    fn conv_and_deconv_are_adjoint(
        seed in any::<u64>(),
        c_in in 1usize..4,
        c_out in 1usize..4,
        h in 1usize..6,
        w in 1usize..6,
        k in 1usize..6,
        s in 1usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // The deconv output must be exactly stride x its input, so conv input is (s*h, s*w).
        let x = Tensor::new(vec![c_in, s * h, s * w], randn(c_in * s * h * s * w, &mut rng)).unwrap();
        let wts = Tensor::new(vec![c_out, c_in, k, k], randn(c_out * c_in * k * k, &mut rng)).unwrap();
        let y = Tensor::new(vec![c_out, h, w], randn(c_out * h * w, &mut rng)).unwrap();
        let conv = conv2d_forward(&x, &wts, &Tensor::zeros(&[c_out]), (s, s)).unwrap();
        prop_assert_eq!(conv.shape(), y.shape());
        let back = deconv2d_forward(&y, &wts, &Tensor::zeros(&[c_in]), (s, s)).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        let lhs = conv.dot(&y);
        let rhs = x.dot(&back);
        prop_assert!((lhs - rhs).abs() < 1e-9, "{} vs {}", lhs, rhs);
    }
}
