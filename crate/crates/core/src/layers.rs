//! Differentiable layer primitives: valid-mode 3D convolution, spatial max
//! pooling, channel-wise PReLU and a dense head.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Initial PReLU slope.
pub const PRELU_INIT_SLOPE: f64 = 0.01;

/// Gradients produced by a backward pass. `params` follows the order of the
/// layer's `params()`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T: Scalar> {
    pub params: Vec<Tensor<T>>,
    pub input: Tensor<T>,
}

fn axpy<T: Scalar>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + a * s;
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn rank4(t: &Tensor<impl Scalar>, context: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: format!("{context} expects a [channels, time, height, width] tensor"),
        }),
    }
}

/// Valid-mode, unit-stride 3D convolution (cross-correlation) over
/// `[in_ch, t, h, w]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3dLayer<T: Scalar> {
    /// `[out_ch, in_ch, kt, kh, kw]`
    pub kernel: Tensor<T>,
    /// `[out_ch]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv3dLayer<T> {
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if kernel.rank() != 5 {
            return Err(Error::InvalidShape {
                shape: kernel.shape().to_vec(),
                reason: "conv kernel must be [out, in, kt, kh, kw]".into(),
            });
        }
        if bias.shape() != [kernel.shape()[0]] {
            return Err(Error::mismatch("conv bias", &kernel.shape()[..1], bias.shape()));
        }
        Ok(Self { kernel, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_extent(&self) -> [usize; 3] {
        let s = self.kernel.shape();
        [s[2], s[3], s[4]]
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.kernel, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.kernel, &mut self.bias]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 4]> {
        let [kt, kh, kw] = self.kernel_extent();
        match *input {
            [c, t, h, w] if c == self.in_channels() && t >= kt && h >= kh && w >= kw => {
                Ok([self.out_channels(), t - kt + 1, h - kh + 1, w - kw + 1])
            }
            _ => Err(Error::InvalidShape {
                shape: input.to_vec(),
                reason: format!(
                    "conv3d with kernel {:?} needs [{}, >={kt}, >={kh}, >={kw}] input",
                    self.kernel.shape(),
                    self.in_channels()
                ),
            }),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [c_in, t, h, w] = rank4(x, "conv3d")?;
        let out_shape = self.output_shape(x.shape())?;
        let [_, to, ho, wo] = out_shape;
        let [kt, kh, kw] = self.kernel_extent();
        let xd = x.data();
        let kd = self.kernel.data();
        let bd = self.bias.data();
        let mut out = Tensor::zeros(&out_shape)?;
        out.data_mut()
            .par_chunks_mut(to * ho * wo)
            .enumerate()
            .for_each(|(o, out_o)| {
                out_o.fill(bd[o]);
                for c in 0..c_in {
                    for m in 0..kt {
                        for n in 0..kh {
                            for l in 0..kw {
                                let wv = kd[(((o * c_in + c) * kt + m) * kh + n) * kw + l];
                                for i in 0..to {
                                    for j in 0..ho {
                                        let xo = ((c * t + i + m) * h + j + n) * w + l;
                                        let oo = (i * ho + j) * wo;
                                        axpy(&mut out_o[oo..oo + wo], wv, &xd[xo..xo + wo]);
                                    }
                                }
                            }
                        }
                    }
                }
            });
        Ok(out)
    }

    /// Gradients `[d kernel, d bias]` and the input gradient.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LayerGrads<T>> {
        Ok(LayerGrads {
            params: self.param_grads(x, grad_out)?,
            input: self.input_grad(x.shape(), grad_out)?,
        })
    }

    fn check_upstream(&self, input: &[usize], grad_out: &Tensor<T>) -> Result<[usize; 4]> {
        let out_shape = self.output_shape(input)?;
        if grad_out.shape() != out_shape {
            return Err(Error::mismatch("conv3d backward", &out_shape, grad_out.shape()));
        }
        Ok(out_shape)
    }

    /// `[d kernel, d bias]` only.
    pub fn param_grads(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let [c_in, t, h, w] = rank4(x, "conv3d")?;
        let [c_out, to, ho, wo] = self.check_upstream(x.shape(), grad_out)?;
        let [kt, kh, kw] = self.kernel_extent();
        let plane = to * ho * wo;
        let xd = x.data();
        let gd = grad_out.data();

        let grad_bias = Tensor::from_vec(&[c_out], gd.chunks(plane).map(|g| g.iter().copied().sum()).collect())?;

        let mut grad_kernel = Tensor::zeros_like(&self.kernel);
        grad_kernel
            .data_mut()
            .par_chunks_mut(c_in * kt * kh * kw)
            .enumerate()
            .for_each(|(o, gk_o)| {
                let g_o = &gd[o * plane..(o + 1) * plane];
                for c in 0..c_in {
                    for m in 0..kt {
                        for n in 0..kh {
                            for l in 0..kw {
                                let mut acc = T::zero();
                                for i in 0..to {
                                    for j in 0..ho {
                                        let xo = ((c * t + i + m) * h + j + n) * w + l;
                                        let go = (i * ho + j) * wo;
                                        acc = acc + dot(&g_o[go..go + wo], &xd[xo..xo + wo]);
                                    }
                                }
                                gk_o[((c * kt + m) * kh + n) * kw + l] = acc;
                            }
                        }
                    }
                }
            });
        Ok(vec![grad_kernel, grad_bias])
    }

    /// Gradient with respect to an input of shape `input`.
    pub fn input_grad(&self, input: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let [c_out, to, ho, wo] = self.check_upstream(input, grad_out)?;
        let &[c_in, t, h, w] = input else { unreachable!("checked by output_shape") };
        let [kt, kh, kw] = self.kernel_extent();
        let plane = to * ho * wo;
        let gd = grad_out.data();
        let kd = self.kernel.data();
        let mut grad_input = Tensor::zeros(input)?;
        grad_input
            .data_mut()
            .par_chunks_mut(t * h * w)
            .enumerate()
            .for_each(|(c, gx_c)| {
                for o in 0..c_out {
                    let g_o = &gd[o * plane..(o + 1) * plane];
                    for m in 0..kt {
                        for n in 0..kh {
                            for l in 0..kw {
                                let wv = kd[(((o * c_in + c) * kt + m) * kh + n) * kw + l];
                                for i in 0..to {
                                    for j in 0..ho {
                                        let xo = ((i + m) * h + j + n) * w + l;
                                        let go = (i * ho + j) * wo;
                                        axpy(&mut gx_c[xo..xo + wo], wv, &g_o[go..go + wo]);
                                    }
                                }
                            }
                        }
                    }
                }
            });
        Ok(grad_input)
    }
}

/// Parametric ReLU with one learnable slope per channel (axis 0).
#[derive(Debug, Clone, PartialEq)]
pub struct PReluLayer<T: Scalar> {
    pub slope: Tensor<T>,
}

impl<T: Scalar> PReluLayer<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            slope: Tensor::new(&[channels], T::from_f64_lossy(PRELU_INIT_SLOPE))?,
        })
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.slope]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.slope]
    }

    fn block(&self, x: &Tensor<T>) -> Result<usize> {
        let channels = self.slope.len();
        if x.shape()[0] != channels {
            return Err(Error::mismatch("prelu channels", &[channels], &x.shape()[..1]));
        }
        Ok(x.len() / channels)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let block = self.block(x)?;
        let mut out = x.clone();
        for (chunk, &a) in out.data_mut().chunks_mut(block).zip(self.slope.data()) {
            for v in chunk {
                if *v <= T::zero() {
                    *v = a * *v;
                }
            }
        }
        Ok(out)
    }

    /// Non-positive inputs take the slope branch, including the subgradient at 0.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LayerGrads<T>> {
        if x.shape() != grad_out.shape() {
            return Err(Error::mismatch("prelu backward", x.shape(), grad_out.shape()));
        }
        let block = self.block(x)?;
        let mut grad_input = grad_out.clone();
        let mut grad_slope = Vec::with_capacity(self.slope.len());
        for ((gx, xs), &a) in grad_input
            .data_mut()
            .chunks_mut(block)
            .zip(x.data().chunks(block))
            .zip(self.slope.data())
        {
            let mut acc = T::zero();
            for (g, &xv) in gx.iter_mut().zip(xs) {
                if xv <= T::zero() {
                    acc = acc + *g * xv;
                    *g = *g * a;
                }
            }
            grad_slope.push(acc);
        }
        Ok(LayerGrads {
            params: vec![Tensor::from_vec(self.slope.shape(), grad_slope)?],
            input: grad_input,
        })
    }
}

/// Argmax positions recorded by a pooling forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxIndices {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    /// Flat input offset of the maximum for every output element.
    pub indices: Vec<usize>,
}

/// 2×2 spatial max pooling in ceil mode; the time axis is left untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPoolLayer {
    pub pool_h: usize,
    pub pool_w: usize,
}

impl Default for MaxPoolLayer {
    fn default() -> Self {
        Self { pool_h: 2, pool_w: 2 }
    }
}

impl MaxPoolLayer {
    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 4]> {
        match *input {
            [c, t, h, w] => Ok([c, t, h.div_ceil(self.pool_h), w.div_ceil(self.pool_w)]),
            _ => Err(Error::InvalidShape {
                shape: input.to_vec(),
                reason: "max pool expects a [channels, time, height, width] tensor".into(),
            }),
        }
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ArgmaxIndices)> {
        let [c, t, h, w] = rank4(x, "max pool")?;
        let out_shape = self.output_shape(x.shape())?;
        let [_, _, ho, wo] = out_shape;
        let xd = x.data();
        let mut values = Vec::with_capacity(c * t * ho * wo);
        let mut indices = Vec::with_capacity(values.capacity());
        for slice in 0..c * t {
            let base = slice * h * w;
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut best = base + oi * self.pool_h * w + oj * self.pool_w;
                    for i in oi * self.pool_h..((oi + 1) * self.pool_h).min(h) {
                        for j in oj * self.pool_w..((oj + 1) * self.pool_w).min(w) {
                            let idx = base + i * w + j;
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    values.push(xd[best]);
                    indices.push(best);
                }
            }
        }
        Ok((
            Tensor::from_vec(&out_shape, values)?,
            ArgmaxIndices {
                input_shape: x.shape().to_vec(),
                output_shape: out_shape.to_vec(),
                indices,
            },
        ))
    }

    pub fn backward<T: Scalar>(&self, indices: &ArgmaxIndices, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.shape() != indices.output_shape.as_slice() {
            return Err(Error::mismatch("max pool backward", &indices.output_shape, grad_out.shape()));
        }
        let mut grad_input = Tensor::zeros(&indices.input_shape)?;
        let gx = grad_input.data_mut();
        for (&idx, &g) in indices.indices.iter().zip(grad_out.data()) {
            gx[idx] = gx[idx] + g;
        }
        Ok(grad_input)
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T: Scalar> {
    /// `[out, in]`
    pub weights: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: weights.shape().to_vec(),
                reason: "dense weights must be [out, in]".into(),
            });
        }
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::mismatch("dense bias", &weights.shape()[..1], bias.shape()));
        }
        Ok(Self { weights, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weights, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weights, &mut self.bias]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n_in = self.in_features();
        if x.shape() != [n_in] {
            return Err(Error::mismatch("dense input", &[n_in], x.shape()));
        }
        let out = self
            .weights
            .data()
            .par_chunks(n_in)
            .zip(self.bias.data())
            .map(|(row, &b)| b + dot(row, x.data()))
            .collect();
        Tensor::from_vec(&[self.out_features()], out)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LayerGrads<T>> {
        let (n_out, n_in) = (self.out_features(), self.in_features());
        if x.shape() != [n_in] {
            return Err(Error::mismatch("dense input", &[n_in], x.shape()));
        }
        if grad_out.shape() != [n_out] {
            return Err(Error::mismatch("dense backward", &[n_out], grad_out.shape()));
        }
        let g = grad_out.data();
        let mut grad_w = Tensor::zeros_like(&self.weights);
        grad_w
            .data_mut()
            .par_chunks_mut(n_in)
            .zip(g)
            .for_each(|(row, &go)| {
                for (r, &xv) in row.iter_mut().zip(x.data()) {
                    *r = go * xv;
                }
            });
        let mut grad_x = vec![T::zero(); n_in];
        for (row, &go) in self.weights.data().chunks(n_in).zip(g) {
            axpy(&mut grad_x, go, row);
        }
        Ok(LayerGrads {
            params: vec![grad_w, grad_out.clone()],
            input: Tensor::from_vec(&[n_in], grad_x)?,
        })
    }
}
