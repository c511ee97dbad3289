//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its output and whatever the
//! backward pass needs. [`Tape::backward`] walks the nodes in exact reverse
//! order of recording. A tape can be differentiated once; call
//! [`Tape::reset`] before recording the next pass.

use crate::error::{Error, Result};
use crate::filtering;
use crate::ops::conv::{self, ConvSpec};
use crate::ops::layout;
use crate::ops::norm::{self, BnCache};
use crate::ops::pool;
use crate::spectral::{self, SpectrumTensor};
use crate::tensor::{Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    AvgPool2 {
        x: Var,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Tanh {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BnCache,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Narrow {
        x: Var,
        start: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    MulConst {
        x: Var,
        factor: Tensor,
    },
    Shift {
        x: Var,
    },
    Scale {
        x: Var,
        s: f64,
    },
    Mean {
        x: Var,
    },
    DotConst {
        x: Var,
        weights: Tensor,
    },
    MeanAbsDiff {
        a: Var,
        b: Var,
    },
    SoftmaxChannels {
        x: Var,
    },
    Filter {
        f: Var,
        t: Var,
    },
    Rfft2Stacked {
        x: Var,
    },
    Irfft2Stacked {
        x: Var,
    },
    QuadrantStack {
        x: Var,
    },
    Tile2 {
        x: Var,
    },
    Gram {
        x: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records that a leaf was read from a parameter store.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Binding {
    pub var: Var,
    pub store: u64,
    pub param: usize,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: Shape) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Ordered record of a forward pass.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<Binding>,
    recording: bool,
    backward_ran: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], v: Var, g: Tensor) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g).expect("gradient shapes agree with values"),
        slot @ None => *slot = Some(g),
    }
}

fn spectrum_from_stacked(x: &Tensor, signal_width: usize) -> SpectrumTensor {
    let s = x.shape();
    let mut spec = SpectrumTensor::zeros(s.batch, s.channels / 2, s.height, signal_width);
    let dst = spec.data_mut();
    let mut i = 0;
    for b in 0..s.batch {
        for c in 0..s.channels / 2 {
            for k in 0..s.height {
                for l in 0..s.width {
                    dst[i] = x.at(b, 2 * c, k, l);
                    dst[i + 1] = x.at(b, 2 * c + 1, k, l);
                    i += 2;
                }
            }
        }
    }
    spec
}

fn stacked_from_spectrum(spec: &SpectrumTensor) -> Tensor {
    let shape = Shape::new(spec.batch(), 2 * spec.channels(), spec.height(), spec.width_half());
    Tensor::from_fn(shape, |b, c, k, l| {
        let (re, im) = spec.get(b, c / 2, k, l);
        if c % 2 == 0 {
            re
        } else {
            im
        }
    })
}

impl Tape {
    /// A tape that records operations for differentiation.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bindings: Vec::new(),
            recording: true,
            backward_ran: false,
        }
    }

    /// A tape that only evaluates; nothing requires gradients and no
    /// backward state is kept.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Tape::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Clears all nodes so the tape can record a fresh pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.bindings.clear();
        self.backward_ran = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn bindings(&self) -> &[Binding] {
        &self.bindings
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.recording,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub(crate) fn bind(&mut self, value: Tensor, requires_grad: bool, store: u64, param: usize) -> Var {
        let var = self.leaf(value, requires_grad);
        if self.nodes[var.0].requires_grad {
            self.bindings.push(Binding { var, store, param });
        }
        var
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        let value = value.ensure_finite(op_name(&op))?;
        let requires_grad = self.recording && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(out, Op::Conv2d { x, w, b, spec }, &parents)
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = conv::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(out, Op::ConvTranspose2d { x, w, b, spec }, &parents)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let out = pool::avg_pool2(self.value(x))?;
        self.push(out, Op::AvgPool2 { x }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu { x }, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh { x }, &[x])
    }

    /// Batch normalization; `running` holds `(mean, var)` and is updated in
    /// training mode.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&mut Tensor, &mut Tensor),
        training: bool,
    ) -> Result<Var> {
        let (out, cache) = norm::batch_norm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running.0,
            running.1,
            training,
        )?;
        self.push(out, Op::BatchNorm { x, gamma, beta, cache }, &[x, gamma, beta])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = layout::concat_channels(self.value(a), self.value(b))?;
        self.push(out, Op::Concat { a, b }, &[a, b])
    }

    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = layout::narrow_channels(self.value(x), start, len)?;
        self.push(out, Op::Narrow { x, start }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        self.push(out, Op::Add { a, b }, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        self.push(out, Op::Sub { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        self.push(out, Op::Mul { a, b }, &[a, b])
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, factor: Tensor) -> Result<Var> {
        let out = self.value(x).zip_map(&factor, |p, q| p * q)?;
        self.push(out, Op::MulConst { x, factor }, &[x])
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(&mut self, x: Var, offset: &Tensor) -> Result<Var> {
        let out = self.value(x).zip_map(offset, |p, q| p + q)?;
        self.push(out, Op::Shift { x }, &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v + s);
        self.push(out, Op::Shift { x }, &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale { x, s }, &[x])
    }

    /// Mean over all elements, as a single-element tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).mean());
        self.push(out, Op::Mean { x }, &[x])
    }

    /// `sum(x * weights)` for constant weights.
    pub fn dot_const(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        self.value(x).expect_shape("dot_const", weights.shape())?;
        let out = Tensor::scalar(self.value(x).dot(&weights));
        self.push(out, Op::DotConst { x, weights }, &[x])
    }

    /// `mean(|a - b|)`.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.expect_shape("mean_abs_diff", vb.shape())?;
        let total: f64 = va.data().iter().zip(vb.data()).map(|(p, q)| (p - q).abs()).sum();
        let out = Tensor::scalar(total / va.numel() as f64);
        self.push(out, Op::MeanAbsDiff { a, b }, &[a, b])
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let out = filtering::softmax_channels(self.value(x));
        self.push(out, Op::SoftmaxChannels { x }, &[x])
    }

    /// Per-pixel filtering of `f` by the kernel field `t` (`(B, N*N, h, w)`).
    pub fn apply_filter(&mut self, f: Var, t: Var) -> Result<Var> {
        let out = filtering::filter_forward(self.value(f), self.value(t))?;
        self.push(out, Op::Filter { f, t }, &[f, t])
    }

    /// Real 2-D FFT with real and imaginary parts interleaved along channels:
    /// `(B, C, H, W) -> (B, 2C, H, W/2+1)`.
    pub fn rfft2_stacked(&mut self, x: Var) -> Result<Var> {
        let spec = spectral::rfft2(self.value(x))?;
        let out = stacked_from_spectrum(&spec);
        self.push(out, Op::Rfft2Stacked { x }, &[x])
    }

    /// Inverse of [`Tape::rfft2_stacked`] back to `out_h x out_w`.
    pub fn irfft2_stacked(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(x);
        if !s.channels.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "stacked spectrum needs an even channel count, got {}",
                s.channels
            )));
        }
        if s.width != out_w / 2 + 1 || s.height != out_h {
            return Err(Error::shape(
                "irfft2_stacked",
                format!("spectrum for {out_h}x{out_w}"),
                s,
            ));
        }
        let spec = spectrum_from_stacked(self.value(x), out_w);
        let out = spectral::irfft2(&spec, out_h, out_w)?;
        self.push(out, Op::Irfft2Stacked { x }, &[x])
    }

    pub fn quadrant_stack(&mut self, x: Var) -> Result<Var> {
        let out = layout::quadrant_stack(self.value(x))?;
        self.push(out, Op::QuadrantStack { x }, &[x])
    }

    pub fn tile2(&mut self, x: Var) -> Result<Var> {
        let out = layout::tile2(self.value(x));
        self.push(out, Op::Tile2 { x }, &[x])
    }

    pub fn gram(&mut self, x: Var) -> Result<Var> {
        let out = layout::gram(self.value(x));
        self.push(out, Op::Gram { x }, &[x])
    }

    /// Back-propagates from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_ran {
            return Err(Error::BackwardAlreadyRan);
        }
        let loss_shape = self.shape(loss);
        if loss_shape.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        self.backward_ran = true;
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(loss_shape, 1.0));
        }
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop_node(nodes, node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::ConvTranspose2d { .. } => "conv_transpose2d",
        Op::AvgPool2 { .. } => "avg_pool2",
        Op::Relu { .. } => "relu",
        Op::LeakyRelu { .. } => "leaky_relu",
        Op::Tanh { .. } => "tanh",
        Op::BatchNorm { .. } => "batch_norm",
        Op::Concat { .. } => "concat_channels",
        Op::Narrow { .. } => "narrow_channels",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::MulConst { .. } => "mul_const",
        Op::Shift { .. } => "shift",
        Op::Scale { .. } => "scale",
        Op::Mean { .. } => "mean",
        Op::DotConst { .. } => "dot_const",
        Op::MeanAbsDiff { .. } => "mean_abs_diff",
        Op::SoftmaxChannels { .. } => "softmax_channels",
        Op::Filter { .. } => "apply_filter",
        Op::Rfft2Stacked { .. } => "rfft2",
        Op::Irfft2Stacked { .. } => "irfft2",
        Op::QuadrantStack { .. } => "quadrant_stack",
        Op::Tile2 { .. } => "tile2",
        Op::Gram { .. } => "gram",
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
    let val = |v: Var| &nodes[v.0].value;
    let wants = |v: Var| nodes[v.0].requires_grad;
    let mut acc = |v: Var, t: Tensor| accumulate(grads, nodes, v, t);
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d { x, w, b, spec } => {
            let cg = conv::conv2d_backward(val(*x), val(*w), spec, g)?;
            acc(*x, cg.input);
            acc(*w, cg.weight);
            if let Some(b) = b {
                acc(*b, cg.bias);
            }
        }
        Op::ConvTranspose2d { x, w, b, spec } => {
            let cg = conv::conv_transpose2d_backward(val(*x), val(*w), spec, g)?;
            acc(*x, cg.input);
            acc(*w, cg.weight);
            if let Some(b) = b {
                acc(*b, cg.bias);
            }
        }
        Op::AvgPool2 { x } => acc(*x, pool::avg_pool2_backward(val(*x).shape(), g)),
        Op::Relu { x } => acc(*x, val(*x).zip_map(g, |v, d| if v > 0.0 { d } else { 0.0 })?),
        Op::LeakyRelu { x, slope } => acc(*x, val(*x).zip_map(g, |v, d| if v > 0.0 { d } else { slope * d })?),
        Op::Tanh { x } => acc(*x, node.value.zip_map(g, |y, d| d * (1.0 - y * y))?),
        Op::BatchNorm { x, gamma, beta, cache } => {
            let (gx, gg, gb) = norm::batch_norm_backward(cache, val(*gamma), g);
            acc(*x, gx);
            acc(*gamma, gg);
            acc(*beta, gb);
        }
        Op::Concat { a, b } => {
            let ca = val(*a).shape().channels;
            let cb = val(*b).shape().channels;
            if wants(*a) {
                acc(*a, layout::narrow_channels(g, 0, ca)?);
            }
            if wants(*b) {
                acc(*b, layout::narrow_channels(g, ca, cb)?);
            }
        }
        Op::Narrow { x, start } => acc(*x, layout::narrow_channels_backward(val(*x).shape(), *start, g)),
        Op::Add { a, b } => {
            acc(*a, g.clone());
            acc(*b, g.clone());
        }
        Op::Sub { a, b } => {
            acc(*a, g.clone());
            acc(*b, g.scale(-1.0));
        }
        Op::Mul { a, b } => {
            if wants(*a) {
                acc(*a, g.zip_map(val(*b), |d, q| d * q)?);
            }
            if wants(*b) {
                acc(*b, g.zip_map(val(*a), |d, p| d * p)?);
            }
        }
        Op::MulConst { x, factor } => acc(*x, g.zip_map(factor, |d, q| d * q)?),
        Op::Shift { x } => acc(*x, g.clone()),
        Op::Scale { x, s } => acc(*x, g.scale(*s)),
        Op::Mean { x } => {
            let s = val(*x).shape();
            acc(*x, Tensor::full(s, g.data()[0] / s.numel() as f64));
        }
        Op::DotConst { x, weights } => acc(*x, weights.scale(g.data()[0])),
        Op::MeanAbsDiff { a, b } => {
            let scale = g.data()[0] / val(*a).numel() as f64;
            let sign = val(*a).zip_map(val(*b), |p, q| {
                if p > q {
                    scale
                } else if p < q {
                    -scale
                } else {
                    0.0
                }
            })?;
            if wants(*b) {
                acc(*b, sign.scale(-1.0));
            }
            acc(*a, sign);
        }
        Op::SoftmaxChannels { x } => acc(*x, filtering::softmax_channels_backward(&node.value, g)),
        Op::Filter { f, t } => {
            let (gf, gt) = filtering::filter_backward(g, val(*f), val(*t))?;
            acc(*f, gf);
            acc(*t, gt);
        }
        Op::Rfft2Stacked { x } => {
            let spec = spectrum_from_stacked(g, val(*x).shape().width);
            acc(*x, spectral::rfft2_backward(&spec)?);
        }
        Op::Irfft2Stacked { x } => {
            let spec = spectral::irfft2_backward(g)?;
            acc(*x, stacked_from_spectrum(&spec));
        }
        Op::QuadrantStack { x } => acc(*x, layout::quadrant_stack_backward(val(*x).shape(), g)),
        Op::Tile2 { x } => acc(*x, layout::tile2_backward(val(*x).shape(), g)),
        Op::Gram { x } => acc(*x, layout::gram_backward(val(*x), g)),
    }
    Ok(())
}
