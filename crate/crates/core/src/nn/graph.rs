//! Static layer graph with reverse-mode gradients.
//!
//! A graph is a topologically ordered op list built once per model. Forward
//! evaluation fills a tape of node values; backward seeds any node with a
//! gradient and propagates to earlier nodes and trainable parameters. Batch
//! normalization always normalizes with its stored statistics, so forward
//! passes are deterministic in either mode.

use ndarray::{Array1, Array2, Array4, ArrayD, ArrayView4, Axis, Ix2, Ix4};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::rng::RngStream;

use super::kernels;

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zero,
    One,
    /// Kaiming normal with the given fan-in.
    KaimingNormal(usize),
    /// Uniform in ±1/sqrt(fan_in).
    FanInUniform(usize),
}

#[derive(Debug, Clone)]
pub struct Param<F: Scalar> {
    pub name: String,
    pub value: ArrayD<F>,
    pub trainable: bool,
    pub init: Init,
}

#[derive(Debug, Clone)]
pub enum Op {
    Input,
    Conv2d {
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
        stride: usize,
        pad: usize,
        groups: usize,
    },
    BatchNorm {
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        mean: ParamId,
        var: ParamId,
    },
    Relu {
        x: NodeId,
    },
    Silu {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    MaxPool {
        x: NodeId,
        k: usize,
        stride: usize,
        pad: usize,
    },
    AvgPool {
        x: NodeId,
        k: usize,
        stride: usize,
    },
    /// N×C×H×W -> N×C.
    GlobalAvgPool {
        x: NodeId,
    },
    Linear {
        x: NodeId,
        w: ParamId,
        b: Option<ParamId>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    /// Channel concatenation of 4-D inputs.
    ConcatC {
        xs: Vec<NodeId>,
    },
    /// y[n,c,h,w] = x[n,c,h,w] * gate[n,c]; the squeeze-excitation product.
    ScaleChannels {
        x: NodeId,
        gate: NodeId,
    },
}

#[derive(Debug, Clone)]
pub struct Graph<F: Scalar> {
    pub ops: Vec<Op>,
    pub params: Vec<Param<F>>,
    pub input: NodeId,
    pub output: NodeId,
    /// Final spatial feature map before global pooling; the Grad-CAM target.
    pub last_conv: NodeId,
    pub in_channels: usize,
}

/// Node values from one forward pass.
pub struct Tape<F: Scalar> {
    pub values: Vec<ArrayD<F>>,
}

impl<F: Scalar> Tape<F> {
    pub fn value(&self, node: NodeId) -> &ArrayD<F> {
        &self.values[node.0]
    }

    /// Output logits as an N-vector (models emit N×1).
    pub fn logits(&self, output: NodeId) -> Vec<F> {
        self.values[output.0].iter().copied().collect()
    }
}

/// Gradients from one backward pass.
pub struct Grads<F: Scalar> {
    pub nodes: Vec<Option<ArrayD<F>>>,
    pub params: Vec<Option<ArrayD<F>>>,
}

impl<F: Scalar> Grads<F> {
    pub fn node(&self, node: NodeId) -> Option<&ArrayD<F>> {
        self.nodes[node.0].as_ref()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Initialize all parameters from their declared schemes, in parameter
    /// order, so two graphs built and seeded identically hold identical
    /// weights.
    pub fn init_params(&mut self, rng: &mut RngStream) {
        for p in &mut self.params {
            match p.init {
                Init::Zero => p.value.fill(F::zero()),
                Init::One => p.value.fill(F::one()),
                Init::KaimingNormal(fan_in) => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    for v in p.value.iter_mut() {
                        *v = F::from_f64(rng.gauss() * std);
                    }
                }
                Init::FanInUniform(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for v in p.value.iter_mut() {
                        *v = F::from_f64(rng.uniform(-bound, bound));
                    }
                }
            }
        }
    }

    pub fn forward(&self, input: &ArrayView4<F>) -> Result<Tape<F>> {
        let (_, c, _, _) = input.dim();
        if c != self.in_channels {
            return Err(Error::Shape {
                expected: format!("{} input channels", self.in_channels),
                got: format!("{c}"),
            });
        }
        let mut values: Vec<ArrayD<F>> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let v: ArrayD<F> = match op {
                Op::Input => input.to_owned().into_dyn(),
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                    groups,
                } => {
                    let xv = as4(&values[x.0]);
                    let wv = self.params[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
                    let bias: Option<Vec<F>> = b.map(|bid| {
                        self.params[bid.0].value.iter().copied().collect()
                    });
                    kernels::conv2d_forward(&xv, &wv, bias.as_deref(), *stride, *pad, *groups)
                        .into_dyn()
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    var,
                } => {
                    let xv = as4(&values[x.0]);
                    let (n, c, h, w) = xv.dim();
                    let g = &self.params[gamma.0].value;
                    let bt = &self.params[beta.0].value;
                    let mu = &self.params[mean.0].value;
                    let vr = &self.params[var.0].value;
                    let eps = F::from_f64(BN_EPS);
                    let mut out = Array4::<F>::zeros((n, c, h, w));
                    for ch in 0..c {
                        let scale = g[[ch]] / (vr[[ch]] + eps).sqrt();
                        let shift = bt[[ch]] - mu[[ch]] * scale;
                        for i in 0..n {
                            for y in 0..h {
                                for xx in 0..w {
                                    out[[i, ch, y, xx]] = xv[[i, ch, y, xx]] * scale + shift;
                                }
                            }
                        }
                    }
                    out.into_dyn()
                }
                Op::Relu { x } => values[x.0].mapv(|v| if v > F::zero() { v } else { F::zero() }),
                Op::Silu { x } => values[x.0].mapv(|v| v * sigmoid_scalar(v)),
                Op::Sigmoid { x } => values[x.0].mapv(sigmoid_scalar),
                Op::MaxPool { x, k, stride, pad } => {
                    kernels::maxpool_forward(&as4(&values[x.0]), *k, *stride, *pad).into_dyn()
                }
                Op::AvgPool { x, k, stride } => {
                    kernels::avgpool_forward(&as4(&values[x.0]), *k, *stride).into_dyn()
                }
                Op::GlobalAvgPool { x } => {
                    let xv = as4(&values[x.0]);
                    let (n, c, h, w) = xv.dim();
                    let inv = F::from_f64(1.0 / (h * w) as f64);
                    let mut out = Array2::<F>::zeros((n, c));
                    for i in 0..n {
                        for ch in 0..c {
                            let mut acc = F::zero();
                            for y in 0..h {
                                for xx in 0..w {
                                    acc += xv[[i, ch, y, xx]];
                                }
                            }
                            out[[i, ch]] = acc * inv;
                        }
                    }
                    out.into_dyn()
                }
                Op::Linear { x, w, b } => {
                    let xv = values[x.0].view().into_dimensionality::<Ix2>().unwrap();
                    let wv = self.params[w.0].value.view().into_dimensionality::<Ix2>().unwrap();
                    let mut out = xv.dot(&wv.t());
                    if let Some(bid) = b {
                        let bv = &self.params[bid.0].value;
                        for mut row in out.rows_mut() {
                            for (j, v) in row.iter_mut().enumerate() {
                                *v += bv[[j]];
                            }
                        }
                    }
                    out.into_dyn()
                }
                Op::Add { a, b } => &values[a.0] + &values[b.0],
                Op::ConcatC { xs } => {
                    let views: Vec<_> = xs.iter().map(|x| as4(&values[x.0])).collect();
                    let view_refs: Vec<_> = views.iter().map(|v| v.view()).collect();
                    ndarray::concatenate(Axis(1), &view_refs)
                        .expect("concat shapes agree")
                        .into_dyn()
                }
                Op::ScaleChannels { x, gate } => {
                    let xv = as4(&values[x.0]);
                    let gv = values[gate.0].view().into_dimensionality::<Ix2>().unwrap();
                    let (n, c, h, w) = xv.dim();
                    let mut out = Array4::<F>::zeros((n, c, h, w));
                    for i in 0..n {
                        for ch in 0..c {
                            let g = gv[[i, ch]];
                            for y in 0..h {
                                for xx in 0..w {
                                    out[[i, ch, y, xx]] = xv[[i, ch, y, xx]] * g;
                                }
                            }
                        }
                    }
                    out.into_dyn()
                }
            };
            values.push(v);
        }
        Ok(Tape { values })
    }

    /// Backward pass from `seed` with gradient `seed_grad`. Param gradients
    /// are collected only when `want_params` is set (attribution passes
    /// skip them).
    pub fn backward(
        &self,
        tape: &Tape<F>,
        seed: NodeId,
        seed_grad: ArrayD<F>,
        want_params: bool,
    ) -> Grads<F> {
        let mut nodes: Vec<Option<ArrayD<F>>> = vec![None; self.ops.len()];
        let mut params: Vec<Option<ArrayD<F>>> = vec![None; self.params.len()];
        nodes[seed.0] = Some(seed_grad);

        let add_node = |slot: &mut Option<ArrayD<F>>, g: ArrayD<F>| match slot {
            Some(existing) => *existing = &*existing + &g,
            None => *slot = Some(g),
        };

        for idx in (0..=seed.0).rev() {
            let dy = match nodes[idx].take() {
                Some(g) => g,
                None => continue,
            };
            // Attribution needs the gradient at the feature-map node itself,
            // not only at the graph input.
            if idx == self.last_conv.0 {
                nodes[idx] = Some(dy.clone());
            }
            match &self.ops[idx] {
                Op::Input => {
                    nodes[idx] = Some(dy);
                    continue;
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                    groups,
                } => {
                    let xv = as4(&tape.values[x.0]);
                    let wv = self.params[w.0].value.view().into_dimensionality::<Ix4>().unwrap();
                    let dyv = as4(&dy);
                    let (dx, dw, db) = kernels::conv2d_backward(
                        &xv,
                        &wv,
                        &dyv,
                        b.is_some() && want_params,
                        *stride,
                        *pad,
                        *groups,
                    );
                    add_node(&mut nodes[x.0], dx.into_dyn());
                    if want_params {
                        add_param(&mut params[w.0], dw.into_dyn());
                        if let (Some(bid), Some(db)) = (b, db) {
                            add_param(
                                &mut params[bid.0],
                                Array1::from_vec(db).into_dyn(),
                            );
                        }
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    var,
                } => {
                    let xv = as4(&tape.values[x.0]);
                    let dyv = as4(&dy);
                    let (n, c, h, w) = xv.dim();
                    let g = &self.params[gamma.0].value;
                    let mu = &self.params[mean.0].value;
                    let vr = &self.params[var.0].value;
                    let eps = F::from_f64(BN_EPS);
                    let mut dx = Array4::<F>::zeros((n, c, h, w));
                    let mut dgamma = Array1::<F>::zeros(c);
                    let mut dbeta = Array1::<F>::zeros(c);
                    for ch in 0..c {
                        let inv_std = F::one() / (vr[[ch]] + eps).sqrt();
                        let scale = g[[ch]] * inv_std;
                        for i in 0..n {
                            for y in 0..h {
                                for xx in 0..w {
                                    let gout = dyv[[i, ch, y, xx]];
                                    dx[[i, ch, y, xx]] = gout * scale;
                                    dgamma[[ch]] +=
                                        gout * (xv[[i, ch, y, xx]] - mu[[ch]]) * inv_std;
                                    dbeta[[ch]] += gout;
                                }
                            }
                        }
                    }
                    add_node(&mut nodes[x.0], dx.into_dyn());
                    if want_params {
                        add_param(&mut params[gamma.0], dgamma.into_dyn());
                        add_param(&mut params[beta.0], dbeta.into_dyn());
                        // Stored statistics receive no gradient.
                        let _ = (mean, var);
                    }
                }
                Op::Relu { x } => {
                    let mask = tape.values[x.0].mapv(|v| {
                        if v > F::zero() {
                            F::one()
                        } else {
                            F::zero()
                        }
                    });
                    add_node(&mut nodes[x.0], &dy * &mask);
                }
                Op::Silu { x } => {
                    let dx = ndarray::Zip::from(&dy)
                        .and(&tape.values[x.0])
                        .map_collect(|&g, &v| {
                            let s = sigmoid_scalar(v);
                            g * (s + v * s * (F::one() - s))
                        });
                    add_node(&mut nodes[x.0], dx);
                }
                Op::Sigmoid { x } => {
                    let y = &tape.values[idx];
                    let dx = ndarray::Zip::from(&dy)
                        .and(y)
                        .map_collect(|&g, &s| g * s * (F::one() - s));
                    add_node(&mut nodes[x.0], dx);
                }
                Op::MaxPool { x, k, stride, pad } => {
                    let xv = as4(&tape.values[x.0]);
                    let dx = kernels::maxpool_backward(&xv, &as4(&dy), *k, *stride, *pad);
                    add_node(&mut nodes[x.0], dx.into_dyn());
                }
                Op::AvgPool { x, k, stride } => {
                    let xv = as4(&tape.values[x.0]);
                    let dx = kernels::avgpool_backward(xv.dim(), &as4(&dy), *k, *stride);
                    add_node(&mut nodes[x.0], dx.into_dyn());
                }
                Op::GlobalAvgPool { x } => {
                    let xv = as4(&tape.values[x.0]);
                    let (n, c, h, w) = xv.dim();
                    let dyv = dy.view().into_dimensionality::<Ix2>().unwrap();
                    let inv = F::from_f64(1.0 / (h * w) as f64);
                    let mut dx = Array4::<F>::zeros((n, c, h, w));
                    for i in 0..n {
                        for ch in 0..c {
                            let gr = dyv[[i, ch]] * inv;
                            for y in 0..h {
                                for xx in 0..w {
                                    dx[[i, ch, y, xx]] = gr;
                                }
                            }
                        }
                    }
                    add_node(&mut nodes[x.0], dx.into_dyn());
                }
                Op::Linear { x, w, b } => {
                    let xv = tape.values[x.0].view().into_dimensionality::<Ix2>().unwrap();
                    let wv = self.params[w.0].value.view().into_dimensionality::<Ix2>().unwrap();
                    let dyv = dy.view().into_dimensionality::<Ix2>().unwrap();
                    let dx = dyv.dot(&wv);
                    add_node(&mut nodes[x.0], dx.into_dyn());
                    if want_params {
                        let dw = dyv.t().dot(&xv);
                        add_param(&mut params[w.0], dw.into_dyn());
                        if let Some(bid) = b {
                            let db = dyv.sum_axis(Axis(0));
                            add_param(&mut params[bid.0], db.into_dyn());
                        }
                    }
                }
                Op::Add { a, b } => {
                    add_node(&mut nodes[a.0], dy.clone());
                    add_node(&mut nodes[b.0], dy);
                }
                Op::ConcatC { xs } => {
                    let dyv = as4(&dy);
                    let mut offset = 0usize;
                    for x in xs {
                        let c = tape.values[x.0].shape()[1];
                        let part = dyv
                            .slice(ndarray::s![.., offset..offset + c, .., ..])
                            .to_owned();
                        add_node(&mut nodes[x.0], part.into_dyn());
                        offset += c;
                    }
                }
                Op::ScaleChannels { x, gate } => {
                    let xv = as4(&tape.values[x.0]);
                    let gv = tape.values[gate.0]
                        .view()
                        .into_dimensionality::<Ix2>()
                        .unwrap();
                    let dyv = as4(&dy);
                    let (n, c, h, w) = xv.dim();
                    let mut dx = Array4::<F>::zeros((n, c, h, w));
                    let mut dgate = Array2::<F>::zeros((n, c));
                    for i in 0..n {
                        for ch in 0..c {
                            let g = gv[[i, ch]];
                            for y in 0..h {
                                for xx in 0..w {
                                    let go = dyv[[i, ch, y, xx]];
                                    dx[[i, ch, y, xx]] = go * g;
                                    dgate[[i, ch]] += go * xv[[i, ch, y, xx]];
                                }
                            }
                        }
                    }
                    add_node(&mut nodes[x.0], dx.into_dyn());
                    add_node(&mut nodes[gate.0], dgate.into_dyn());
                }
            }
        }

        Grads { nodes, params }
    }
}

fn add_param<F: Scalar>(slot: &mut Option<ArrayD<F>>, g: ArrayD<F>) {
    match slot {
        Some(existing) => *existing = &*existing + &g,
        None => *slot = Some(g),
    }
}

fn as4<F: Scalar>(v: &ArrayD<F>) -> ArrayView4<'_, F> {
    v.view().into_dimensionality::<Ix4>().unwrap()
}

fn sigmoid_scalar<F: Scalar>(v: F) -> F {
    // Split on sign for stability.
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

/// Incremental graph construction with automatic parameter registration.
pub struct GraphBuilder<F: Scalar> {
    ops: Vec<Op>,
    params: Vec<Param<F>>,
    in_channels: usize,
    input: NodeId,
}

impl<F: Scalar> GraphBuilder<F> {
    pub fn new(in_channels: usize) -> (Self, NodeId) {
        let builder = Self {
            ops: vec![Op::Input],
            params: Vec::new(),
            in_channels,
            input: NodeId(0),
        };
        (builder, NodeId(0))
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.ops.push(op);
        NodeId(self.ops.len() - 1)
    }

    fn add_param(
        &mut self,
        name: String,
        shape: &[usize],
        trainable: bool,
        init: Init,
    ) -> ParamId {
        self.params.push(Param {
            name,
            value: ArrayD::zeros(ndarray::IxDyn(shape)),
            trainable,
            init,
        });
        ParamId(self.params.len() - 1)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        name: &str,
        x: NodeId,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
    ) -> NodeId {
        let fan_in = (cin / groups) * k * k;
        let w = self.add_param(
            format!("{name}.weight"),
            &[cout, cin / groups, k, k],
            true,
            Init::KaimingNormal(fan_in),
        );
        let b = bias.then(|| {
            self.add_param(format!("{name}.bias"), &[cout], true, Init::Zero)
        });
        self.push(Op::Conv2d {
            x,
            w,
            b,
            stride,
            pad,
            groups,
        })
    }

    pub fn batch_norm(&mut self, name: &str, x: NodeId, channels: usize) -> NodeId {
        let gamma = self.add_param(format!("{name}.gamma"), &[channels], true, Init::One);
        let beta = self.add_param(format!("{name}.beta"), &[channels], true, Init::Zero);
        let mean = self.add_param(format!("{name}.mean"), &[channels], false, Init::Zero);
        let var = self.add_param(format!("{name}.var"), &[channels], false, Init::One);
        self.push(Op::BatchNorm {
            x,
            gamma,
            beta,
            mean,
            var,
        })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu { x })
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Silu { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid { x })
    }

    pub fn max_pool(&mut self, x: NodeId, k: usize, stride: usize, pad: usize) -> NodeId {
        self.push(Op::MaxPool { x, k, stride, pad })
    }

    pub fn avg_pool(&mut self, x: NodeId, k: usize, stride: usize) -> NodeId {
        self.push(Op::AvgPool { x, k, stride })
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        self.push(Op::GlobalAvgPool { x })
    }

    pub fn linear(
        &mut self,
        name: &str,
        x: NodeId,
        in_features: usize,
        out_features: usize,
        bias: bool,
    ) -> NodeId {
        let w = self.add_param(
            format!("{name}.weight"),
            &[out_features, in_features],
            true,
            Init::FanInUniform(in_features),
        );
        let b = bias.then(|| {
            self.add_param(
                format!("{name}.bias"),
                &[out_features],
                true,
                Init::FanInUniform(in_features),
            )
        });
        self.push(Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add { a, b })
    }

    pub fn concat(&mut self, xs: Vec<NodeId>) -> NodeId {
        self.push(Op::ConcatC { xs })
    }

    pub fn scale_channels(&mut self, x: NodeId, gate: NodeId) -> NodeId {
        self.push(Op::ScaleChannels { x, gate })
    }

    pub fn finish(self, output: NodeId, last_conv: NodeId) -> Graph<F> {
        Graph {
            ops: self.ops,
            params: self.params,
            input: self.input,
            output,
            last_conv,
            in_channels: self.in_channels,
        }
    }
}
