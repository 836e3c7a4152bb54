mod common;

use common::*;
use pose3d::layers::{Conv3dLayer, DenseLayer, MaxPoolLayer, PReluLayer};
use pose3d::training::{mpjpe, mpjpe_gradient};
use pose3d::{ArchitectureConfig, NetworkParams, RngState, Tensor};

fn conv_case(rng: &mut RngState) -> (Conv3dLayer<f64>, Tensor<f64>, Tensor<f64>) {
    let (o, c) = (1 + rng.below(3), 1 + rng.below(3));
    let (kt, kh, kw) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3));
    let x = random_tensor(&[c, kt + rng.below(3), kh + rng.below(4), kw + rng.below(4)], rng, -1.0, 1.0);
    let layer = Conv3dLayer::new(
        random_tensor(&[o, c, kt, kh, kw], rng, -1.0, 1.0),
        random_tensor(&[o], rng, -1.0, 1.0),
    )
    .unwrap();
    let out_shape = layer.output_shape(x.shape()).unwrap();
    let upstream = random_tensor(&out_shape, rng, -1.0, 1.0);
    (layer, x, upstream)
}

#[test]
fn conv_backward_matches_finite_differences() {
    let mut rng = RngState::new(11);
    for _ in 0..20 {
        let (layer, x, g) = conv_case(&mut rng);
        let grads = layer.backward(&x, &g).unwrap();

        let wrt_x = |x: &Tensor<f64>| dot(&layer.forward(x).unwrap(), &g);
        assert!(check_grad(&wrt_x, &x, &grads.input, None) < FD_TOL);

        let wrt_k = |k: &Tensor<f64>| {
            let l = Conv3dLayer::new(k.clone(), layer.bias.clone()).unwrap();
            dot(&l.forward(&x).unwrap(), &g)
        };
        assert!(check_grad(&wrt_k, &layer.kernel, &grads.params[0], None) < FD_TOL);

        let wrt_b = |b: &Tensor<f64>| {
            let l = Conv3dLayer::new(layer.kernel.clone(), b.clone()).unwrap();
            dot(&l.forward(&x).unwrap(), &g)
        };
        assert!(check_grad(&wrt_b, &layer.bias, &grads.params[1], None) < FD_TOL);
    }
}

#[test]
fn conv_input_gradient_is_the_transpose() {
    // <conv(x) - b, y> == <x, conv_backward(y).input> for the linear part
    let mut rng = RngState::new(12);
    for _ in 0..20 {
        let (mut layer, x, y) = conv_case(&mut rng);
        layer.bias = Tensor::zeros_like(&layer.bias);
        let lhs = dot(&layer.forward(&x).unwrap(), &y);
        let rhs = dot(&x, &layer.backward(&x, &y).unwrap().input);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }
}

#[test]
fn prelu_backward_matches_finite_differences() {
    let mut rng = RngState::new(13);
    for _ in 0..20 {
        let c = 1 + rng.below(4);
        let x = away_from_zero(&[c, 2, 3, 3], &mut rng, 1e-3);
        let mut layer = PReluLayer::<f64>::new(c).unwrap();
        layer.slope = random_tensor(&[c], &mut rng, -0.5, 0.5);
        let g = random_tensor(x.shape(), &mut rng, -1.0, 1.0);
        let grads = layer.backward(&x, &g).unwrap();

        let wrt_x = |x: &Tensor<f64>| dot(&layer.forward(x).unwrap(), &g);
        assert!(check_grad(&wrt_x, &x, &grads.input, None) < FD_TOL);
        let wrt_a = |a: &Tensor<f64>| {
            let l = PReluLayer { slope: a.clone() };
            dot(&l.forward(&x).unwrap(), &g)
        };
        assert!(check_grad(&wrt_a, &layer.slope, &grads.params[0], None) < FD_TOL);
    }
}

#[test]
fn maxpool_backward_matches_finite_differences() {
    let mut rng = RngState::new(14);
    let pool = MaxPoolLayer::default();
    for _ in 0..20 {
        let shape = [1 + rng.below(2), 1 + rng.below(3), 2 + rng.below(5), 2 + rng.below(5)];
        // a shuffled ramp keeps every pooling window's maximum unique
        let n: usize = shape.iter().product();
        let mut values: Vec<f64> = (0..n).map(|v| v as f64 * 0.01).collect();
        rng.shuffle(&mut values);
        let x = Tensor::from_vec(&shape, values).unwrap();
        let (out, idx) = pool.forward(&x).unwrap();
        let g = random_tensor(out.shape(), &mut rng, -1.0, 1.0);
        let dx = pool.backward(&idx, &g).unwrap();
        let f = |x: &Tensor<f64>| dot(&pool.forward(x).unwrap().0, &g);
        assert!(check_grad(&f, &x, &dx, None) < FD_TOL);
    }
}

#[test]
fn dense_backward_matches_finite_differences() {
    let mut rng = RngState::new(15);
    for _ in 0..20 {
        let (o, i) = (1 + rng.below(6), 1 + rng.below(9));
        let layer = DenseLayer::new(
            random_tensor(&[o, i], &mut rng, -1.0, 1.0),
            random_tensor(&[o], &mut rng, -1.0, 1.0),
        )
        .unwrap();
        let x = random_tensor(&[i], &mut rng, -1.0, 1.0);
        let g = random_tensor(&[o], &mut rng, -1.0, 1.0);
        let grads = layer.backward(&x, &g).unwrap();
        let wrt_x = |x: &Tensor<f64>| dot(&layer.forward(x).unwrap(), &g);
        assert!(check_grad(&wrt_x, &x, &grads.input, None) < FD_TOL);
        let wrt_w = |w: &Tensor<f64>| {
            let l = DenseLayer::new(w.clone(), layer.bias.clone()).unwrap();
            dot(&l.forward(&x).unwrap(), &g)
        };
        assert!(check_grad(&wrt_w, &layer.weights, &grads.params[0], None) < FD_TOL);
        let wrt_b = |b: &Tensor<f64>| {
            let l = DenseLayer::new(layer.weights.clone(), b.clone()).unwrap();
            dot(&l.forward(&x).unwrap(), &g)
        };
        assert!(check_grad(&wrt_b, &layer.bias, &grads.params[1], None) < FD_TOL);
    }
}

#[test]
fn mpjpe_gradient_matches_finite_differences() {
    let mut rng = RngState::new(16);
    for _ in 0..10 {
        let truth = random_tensor(&[5, 17, 3], &mut rng, -500.0, 500.0);
        let pred = random_tensor(&[5, 17, 3], &mut rng, -500.0, 500.0);
        let analytic = mpjpe_gradient(&pred, &truth).unwrap();
        let f = |p: &Tensor<f64>| mpjpe(p, &truth).unwrap();
        let indices: Vec<usize> = (0..pred.len()).collect();
        let numeric = numeric_grad(&f, &pred, &indices);
        let worst = numeric
            .iter()
            .zip(analytic.data())
            .map(|(n, a)| (n - a).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "max abs deviation {worst}");
    }
}

#[test]
fn reduced_network_matches_finite_differences() {
    for seed in [21, 22] {
        for (name, err) in network_gradient_errors(seed) {
            assert!(err < FD_TOL, "{name}: relative error {err:e}");
        }
    }
}

#[test]
fn backward_is_linear_in_upstream_gradient() {
    let mut rng = RngState::new(17);
    let cfg = ArchitectureConfig::reduced([2, 2, 2, 2, 2], 45, 1);
    let net = NetworkParams::<f64>::build(&cfg, &mut rng).unwrap();
    let x = random_tensor(&cfg.input_shape(), &mut rng, -1.0, 1.0);
    let g = random_tensor(&[cfg.output_dim()], &mut rng, -1.0, 1.0);
    let (_, trace) = net.forward(&x).unwrap();
    let once = net.backward(&trace, &g).unwrap();
    let twice = net.backward(&trace, &g.scale(2.0)).unwrap();
    for (a, b) in once.tensors.iter().zip(&twice.tensors) {
        assert_eq!(&a.scale(2.0), b);
    }
    let zero = net.backward(&trace, &Tensor::zeros(&[cfg.output_dim()]).unwrap()).unwrap();
    assert!(zero.tensors.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn layers_are_linear_for_fixed_parameters() {
    let mut rng = RngState::new(18);
    for _ in 0..10 {
        let (mut layer, x, _) = conv_case(&mut rng);
        layer.bias = Tensor::zeros_like(&layer.bias);
        let y = random_tensor(x.shape(), &mut rng, -1.0, 1.0);
        let (a, b) = (rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
        let mut mix = x.scale(a);
        mix.add_scaled(&y, b).unwrap();
        let mut expected = layer.forward(&x).unwrap().scale(a);
        expected.add_scaled(&layer.forward(&y).unwrap(), b).unwrap();
        assert!(layer.forward(&mix).unwrap().max_abs_diff(&expected).unwrap() < 1e-10);
    }
}
