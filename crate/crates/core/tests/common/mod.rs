#![allow(dead_code)]

use pose3d::{ArchitectureConfig, NetworkParams, RngState, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn random_tensor(shape: &[usize], rng: &mut RngState, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

/// Like `random_tensor` but every value keeps at least `gap` away from zero.
pub fn away_from_zero(shape: &[usize], rng: &mut RngState, gap: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.uniform(gap, 1.0);
            if rng.below(2) == 0 { v } else { -v }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` at `x` on the chosen flat indices.
pub fn numeric_grad(f: &dyn Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, indices: &[usize]) -> Vec<f64> {
    indices
        .iter()
        .map(|&i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += FD_STEP;
            let mut minus = x.clone();
            minus.data_mut()[i] -= FD_STEP;
            (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// ||a - n|| / max(||a||, ||n||), zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 { 0.0 } else { norm(&diff) / scale }
}

/// Compare an analytic gradient with central differences, on every element
/// or on `sample` random ones.
pub fn check_grad(
    f: &dyn Fn(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    sample: Option<(usize, &mut RngState)>,
) -> f64 {
    assert_eq!(x.shape(), analytic.shape());
    let indices: Vec<usize> = match sample {
        Some((k, rng)) if k < x.len() => rng.choose_distinct(x.len(), k),
        _ => (0..x.len()).collect(),
    };
    let numeric = numeric_grad(f, x, &indices);
    let picked: Vec<f64> = indices.iter().map(|&i| analytic.data()[i]).collect();
    relative_error(&picked, &numeric)
}

/// Discrete 3D convolution written as a flipped-kernel sum over
/// `X[i-m, j-n, k-l] * K[m, n, l]`, evaluated at the positions where the
/// kernel lies fully inside the input, summed over input channels.
/// `x` is `[c, t, h, w]`, `kernel` is `[o, c, kt, kh, kw]`.
pub fn flipped_kernel_conv(x: &Tensor<f64>, kernel: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
    let &[c, t, h, w] = x.shape() else { panic!("rank 4 input") };
    let &[o, kc, kt, kh, kw] = kernel.shape() else { panic!("rank 5 kernel") };
    assert_eq!(c, kc);
    let (to, ho, wo) = (t - kt + 1, h - kh + 1, w - kw + 1);
    let mut out = Tensor::zeros(&[o, to, ho, wo]).unwrap();
    for oc in 0..o {
        for i in 0..to {
            for j in 0..ho {
                for k in 0..wo {
                    // full-convolution index of this valid position
                    let (fi, fj, fk) = (i + kt - 1, j + kh - 1, k + kw - 1);
                    let mut acc = bias.data()[oc];
                    for ic in 0..c {
                        for m in 0..kt {
                            for n in 0..kh {
                                for l in 0..kw {
                                    // the flipped kernel K[m, n, l] = kernel[kt-1-m, kh-1-n, kw-1-l]
                                    let kv = kernel.get(&[oc, ic, kt - 1 - m, kh - 1 - n, kw - 1 - l]).unwrap();
                                    acc += x.get(&[ic, fi - m, fj - n, fk - l]).unwrap() * kv;
                                }
                            }
                        }
                    }
                    out.set(&[oc, i, j, k], acc).unwrap();
                }
            }
        }
    }
    out
}

/// Independent scalar Nesterov recurrence on L(theta) = theta^2:
/// v <- mu v - lr * 2 (theta + mu v); theta <- theta + v.
pub fn scalar_nesterov_quadratic(theta0: f64, lr: f64, mu: f64, steps: usize) -> Vec<f64> {
    let (mut theta, mut v) = (theta0, 0.0);
    (0..steps)
        .map(|_| {
            let g = 2.0 * (theta + mu * v);
            v = mu * v - lr * g;
            theta += v;
            theta
        })
        .collect()
}

/// Every parameter tensor (all elements or a sample) plus a sample of input
/// positions of a reduced network, through a random linear readout.
pub fn network_gradient_errors(seed: u64) -> Vec<(String, f64)> {
    let mut rng = RngState::new(seed);
    let cfg = ArchitectureConfig::reduced([2, 3, 2, 2, 3], 45, 2);
    let mut net = NetworkParams::<f64>::build(&cfg, &mut rng).unwrap();
    // non-trivial biases and slopes so every term of the chain rule is exercised
    for k in 0..5 {
        net.convs[k].bias = random_tensor(net.convs[k].bias.shape(), &mut rng, -0.1, 0.1);
        net.prelus[k].slope = random_tensor(net.prelus[k].slope.shape(), &mut rng, 0.05, 0.5);
    }
    net.head.bias = random_tensor(net.head.bias.shape(), &mut rng, -1.0, 1.0);
    let x = random_tensor(&cfg.input_shape(), &mut rng, -1.0, 1.0);
    let g = random_tensor(&[cfg.output_dim()], &mut rng, -1.0, 1.0);
    let (_, trace) = net.forward(&x).unwrap();
    let grads = net.backward(&trace, &g).unwrap();

    let names = net.names();
    let mut errors = Vec::new();
    for (slot, name) in names.iter().enumerate() {
        let base = net.tensors()[slot].clone();
        let f = |p: &Tensor<f64>| {
            let mut probe = net.clone();
            *probe.tensors_mut()[slot] = p.clone();
            dot(&probe.predict(&x).unwrap(), &g)
        };
        let err = check_grad(&f, &base, &grads.tensors[slot], Some((60, &mut rng)));
        errors.push((name.clone(), err));
    }
    let (_, trace) = net.forward(&x).unwrap();
    let input_grad = net.input_gradient(&trace, &g).unwrap();
    let f = |x: &Tensor<f64>| dot(&net.predict(x).unwrap(), &g);
    errors.push(("input".into(), check_grad(&f, &x, &input_grad, Some((60, &mut rng)))));
    errors
}
