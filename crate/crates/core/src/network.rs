//! The five-layer spatiotemporal network: C1 P1 C2 P2 C3 C4 C5 P5, flatten,
//! dense head. Every conv layer is followed by a PReLU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{ArgmaxIndices, Conv3dLayer, DenseLayer, MaxPoolLayer, PReluLayer};
use crate::tensor::{xavier_init, RngState, Scalar, Tensor};

pub const INPUT_CHANNELS: usize = 3;
/// Frames per input window, and per output pose sequence.
pub const WINDOW: usize = 5;
pub const COORDS: usize = 3;
pub const DEFAULT_JOINTS: usize = 17;
pub const DEFAULT_INPUT_SIZE: usize = 128;
pub const DEFAULT_FLATTEN: usize = 9680;
pub const DEFAULT_CHANNEL_PLAN: [usize; 5] = [16, 24, 32, 40, 40];

/// `(time, height, width)` kernel extents of C1..C5.
pub const KERNELS: [[usize; 3]; 5] = [[3, 5, 5], [2, 5, 5], [1, 5, 5], [1, 3, 3], [1, 3, 3]];
/// Spatial pooling follows C1, C2 and C5.
pub const POOL_AFTER: [bool; 5] = [true, true, false, false, true];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureConfig {
    /// Output channels of C1..C5.
    pub channel_plan: [usize; 5],
    /// Side of the square input frames.
    pub input_size: usize,
    pub joints: usize,
    /// Required flatten length; `None` disables the check (reduced nets).
    pub flatten_size: Option<usize>,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            channel_plan: DEFAULT_CHANNEL_PLAN,
            input_size: DEFAULT_INPUT_SIZE,
            joints: DEFAULT_JOINTS,
            flatten_size: Some(DEFAULT_FLATTEN),
        }
    }
}

/// Name and `[channels, time, height, width]` extent of one stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ArchitectureConfig {
    /// Same topology with a smaller input and no flatten constraint.
    pub fn reduced(channel_plan: [usize; 5], input_size: usize, joints: usize) -> Self {
        Self {
            channel_plan,
            input_size,
            joints,
            flatten_size: None,
        }
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [INPUT_CHANNELS, WINDOW, self.input_size, self.input_size]
    }

    pub fn output_dim(&self) -> usize {
        WINDOW * self.joints * COORDS
    }

    /// Stage extents from C1 to the head output. Fails if any extent
    /// vanishes or the flatten constraint is violated.
    pub fn stages(&self) -> Result<Vec<Stage>> {
        if self.channel_plan.contains(&0) || self.joints == 0 {
            return Err(Error::Config(format!(
                "channel_plan {:?} and joints {} must be positive",
                self.channel_plan, self.joints
            )));
        }
        let [_, mut t, mut h, mut w] = self.input_shape();
        let mut stages = Vec::with_capacity(10);
        for (k, (&[kt, kh, kw], &pool)) in KERNELS.iter().zip(&POOL_AFTER).enumerate() {
            if t < kt || h < kh || w < kw {
                return Err(Error::Config(format!(
                    "input size {} is too small: C{} receives {t}x{h}x{w}, kernel {kt}x{kh}x{kw}",
                    self.input_size,
                    k + 1
                )));
            }
            (t, h, w) = (t - kt + 1, h - kh + 1, w - kw + 1);
            let c = self.channel_plan[k];
            stages.push(Stage {
                name: format!("C{}", k + 1),
                shape: vec![c, t, h, w],
            });
            if pool {
                (h, w) = (h.div_ceil(2), w.div_ceil(2));
                stages.push(Stage {
                    name: format!("P{}", k + 1),
                    shape: vec![c, t, h, w],
                });
            }
        }
        let flat = self.channel_plan[4] * t * h * w;
        if let Some(expected) = self.flatten_size {
            if flat != expected {
                return Err(Error::Config(format!(
                    "channel_plan[4]={} gives flatten size {flat} ({}x{t}x{h}x{w}), expected {expected} \
                     (set flatten_size to null to derive it from the plan)",
                    self.channel_plan[4], self.channel_plan[4]
                )));
            }
        }
        stages.push(Stage {
            name: "flatten".into(),
            shape: vec![flat],
        });
        stages.push(Stage {
            name: "output".into(),
            shape: vec![self.output_dim()],
        });
        Ok(stages)
    }

    pub fn validate(&self) -> Result<()> {
        self.stages().map(|_| ())
    }

    pub fn flatten_len(&self) -> Result<usize> {
        let stages = self.stages()?;
        Ok(stages[stages.len() - 2].shape[0])
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> Result<usize> {
        let flat = self.flatten_len()?;
        let mut in_ch = INPUT_CHANNELS;
        let mut total = 0;
        for (&out_ch, k) in self.channel_plan.iter().zip(KERNELS) {
            total += out_ch * in_ch * k.iter().product::<usize>() + out_ch + out_ch;
            in_ch = out_ch;
        }
        Ok(total + self.output_dim() * flat + self.output_dim())
    }

    /// Canonical `(name, shape)` list of every parameter tensor.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let flat = self.flatten_len()?;
        let mut in_ch = INPUT_CHANNELS;
        let mut out = Vec::with_capacity(17);
        for (k, (&c, [kt, kh, kw])) in self.channel_plan.iter().zip(KERNELS).enumerate() {
            out.push((format!("conv{}.kernel", k + 1), vec![c, in_ch, kt, kh, kw]));
            out.push((format!("conv{}.bias", k + 1), vec![c]));
            out.push((format!("prelu{}.slope", k + 1), vec![c]));
            in_ch = c;
        }
        out.push(("head.weights".into(), vec![self.output_dim(), flat]));
        out.push(("head.bias".into(), vec![self.output_dim()]));
        Ok(out)
    }
}

/// All learnable parameters of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T: Scalar> {
    pub config: ArchitectureConfig,
    pub convs: Vec<Conv3dLayer<T>>,
    pub prelus: Vec<PReluLayer<T>>,
    pub head: DenseLayer<T>,
}

/// Activations retained by `forward` for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Scalar> {
    conv_inputs: Vec<Tensor<T>>,
    prelu_inputs: Vec<Tensor<T>>,
    pools: Vec<Option<ArgmaxIndices>>,
    pooled_shape: Vec<usize>,
    head_input: Tensor<T>,
    pub stages: Vec<Stage>,
}

/// Gradients for every parameter, in `NetworkParams::names()` order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads<T: Scalar> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> NetworkGrads<T> {
    pub fn zeros_like(params: &NetworkParams<T>) -> Self {
        Self {
            tensors: params.tensors().into_iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Self, factor: T) -> Result<()> {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_scaled(b, factor)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

impl<T: Scalar> NetworkParams<T> {
    /// Xavier-uniform weights, zero biases, PReLU slopes at their initial value.
    pub fn build(config: &ArchitectureConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::with_capacity(5);
        let mut prelus = Vec::with_capacity(5);
        let mut in_ch = INPUT_CHANNELS;
        for (&out_ch, k) in config.channel_plan.iter().zip(KERNELS) {
            let receptive: usize = k.iter().product();
            let kernel = xavier_init(
                &[out_ch, in_ch, k[0], k[1], k[2]],
                in_ch * receptive,
                out_ch * receptive,
                rng,
            )?;
            convs.push(Conv3dLayer::new(kernel, Tensor::zeros(&[out_ch])?)?);
            prelus.push(PReluLayer::new(out_ch)?);
            in_ch = out_ch;
        }
        let flat = config.flatten_len()?;
        let out = config.output_dim();
        let head = DenseLayer::new(xavier_init(&[out, flat], flat, out, rng)?, Tensor::zeros(&[out])?)?;
        Ok(Self {
            config: config.clone(),
            convs,
            prelus,
            head,
        })
    }

    /// Assemble from tensors in canonical order, checking every shape.
    pub fn from_tensors(config: &ArchitectureConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let shapes = config.param_shapes()?;
        if tensors.len() != shapes.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::mismatch(format!("layer {name}"), shape, t.shape()));
            }
        }
        let mut it = tensors.into_iter();
        let mut convs = Vec::with_capacity(5);
        let mut prelus = Vec::with_capacity(5);
        for _ in 0..5 {
            let (kernel, bias, slope) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
            convs.push(Conv3dLayer::new(kernel, bias)?);
            prelus.push(PReluLayer { slope });
        }
        let (w, b) = (it.next().unwrap(), it.next().unwrap());
        Ok(Self {
            config: config.clone(),
            convs,
            prelus,
            head: DenseLayer::new(w, b)?,
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.config
            .param_shapes()
            .expect("params were built from a valid config")
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::with_capacity(17);
        for (conv, prelu) in self.convs.iter().zip(&self.prelus) {
            out.extend(conv.params());
            out.extend(prelu.params());
        }
        out.extend(self.head.params());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::with_capacity(17);
        for (conv, prelu) in self.convs.iter_mut().zip(self.prelus.iter_mut()) {
            out.extend(conv.params_mut());
            out.extend(prelu.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        self.names().into_iter().zip(self.tensors()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams::from_tensors(&self.config, self.tensors().into_iter().map(Tensor::cast).collect())
            .expect("cast preserves shapes")
    }

    /// Forward pass over one `[3, 5, S, S]` window; returns the flat pose
    /// vector and the trace needed by `backward`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        let expected = self.config.input_shape();
        if x.shape() != expected {
            return Err(Error::mismatch("network input", &expected, x.shape()));
        }
        let pool = MaxPoolLayer::default();
        let mut conv_inputs = Vec::with_capacity(5);
        let mut prelu_inputs = Vec::with_capacity(5);
        let mut pools = Vec::with_capacity(5);
        let mut stages = Vec::with_capacity(10);
        let mut act = x.clone();
        for (k, (conv, prelu)) in self.convs.iter().zip(&self.prelus).enumerate() {
            let pre = conv.forward(&act)?;
            stages.push(Stage {
                name: format!("C{}", k + 1),
                shape: pre.shape().to_vec(),
            });
            let post = prelu.forward(&pre)?;
            conv_inputs.push(std::mem::replace(&mut act, post));
            prelu_inputs.push(pre);
            if POOL_AFTER[k] {
                let (pooled, idx) = pool.forward(&act)?;
                stages.push(Stage {
                    name: format!("P{}", k + 1),
                    shape: pooled.shape().to_vec(),
                });
                act = pooled;
                pools.push(Some(idx));
            } else {
                pools.push(None);
            }
        }
        let pooled_shape = act.shape().to_vec();
        let head_input = act.flatten();
        stages.push(Stage {
            name: "flatten".into(),
            shape: head_input.shape().to_vec(),
        });
        let out = self.head.forward(&head_input)?;
        stages.push(Stage {
            name: "output".into(),
            shape: out.shape().to_vec(),
        });
        Ok((
            out,
            ForwardTrace {
                conv_inputs,
                prelu_inputs,
                pools,
                pooled_shape,
                head_input,
                stages,
            },
        ))
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(x).map(|(y, _)| y)
    }

    pub fn backward(&self, trace: &ForwardTrace<T>, grad_out: &Tensor<T>) -> Result<NetworkGrads<T>> {
        self.backprop(trace, grad_out, false).map(|(g, _)| g)
    }

    /// Gradient of `<output, grad_out>` with respect to the network input.
    pub fn input_gradient(&self, trace: &ForwardTrace<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.backprop(trace, grad_out, true)
            .map(|(_, x)| x.expect("input gradient requested"))
    }

    fn backprop(
        &self,
        trace: &ForwardTrace<T>,
        grad_out: &Tensor<T>,
        want_input: bool,
    ) -> Result<(NetworkGrads<T>, Option<Tensor<T>>)> {
        if trace.conv_inputs.len() != self.convs.len() {
            return Err(Error::Config("forward trace does not match these parameters".into()));
        }
        let pool = MaxPoolLayer::default();
        let head = self.head.backward(&trace.head_input, grad_out)?;
        let mut grad = head.input.reshape(&trace.pooled_shape)?;
        let mut per_layer: Vec<[Tensor<T>; 3]> = Vec::with_capacity(5);
        for k in (0..self.convs.len()).rev() {
            if let Some(idx) = &trace.pools[k] {
                grad = pool.backward(idx, &grad)?;
            }
            let p = self.prelus[k].backward(&trace.prelu_inputs[k], &grad)?;
            let conv = &self.convs[k];
            let [kernel, bias]: [Tensor<T>; 2] = conv
                .param_grads(&trace.conv_inputs[k], &p.input)?
                .try_into()
                .expect("conv has two parameters");
            let [slope]: [Tensor<T>; 1] = p.params.try_into().expect("prelu has one parameter");
            per_layer.push([kernel, bias, slope]);
            if k > 0 || want_input {
                grad = conv.input_grad(trace.conv_inputs[k].shape(), &p.input)?;
            }
        }
        let mut tensors = Vec::with_capacity(17);
        for layer in per_layer.into_iter().rev() {
            tensors.extend(layer);
        }
        tensors.extend(head.params);
        Ok((NetworkGrads { tensors }, want_input.then_some(grad)))
    }
}
