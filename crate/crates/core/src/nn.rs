//! Layers built on the tape: convolutions, batch norm, and activation glue.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::ops::conv::ConvSpec;
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Shape, Tensor};

/// A forward pass in progress: the tape being recorded, the parameters the
/// layers read from, and the train/eval switch.
pub struct Session<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a mut ParamStore,
    pub training: bool,
}

impl<'a> Session<'a> {
    pub fn new(tape: &'a mut Tape, params: &'a mut ParamStore, training: bool) -> Self {
        Session { tape, params, training }
    }

    /// Places a parameter on the tape.
    pub fn param(&mut self, id: ParamId) -> Var {
        let p = self.params.param(id);
        let requires_grad = p.kind == ParamKind::Trainable && !self.params.is_frozen();
        let value = p.value.clone();
        let store = self.params.id();
        self.tape.bind(value, requires_grad, store, id.index())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu(s) => tape.leaky_relu(x, s),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Convolution or transposed convolution with optional bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: ConvSpec, bias: bool, rng: &mut R) -> Self {
        let weight = store.add_he_normal(format!("{name}.weight"), spec.weight_shape(), spec.fan_in(), rng);
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                Tensor::zeros(spec.bias_shape()),
                ParamKind::Trainable,
            )
        });
        Conv { spec, weight, bias }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        if self.spec.transpose {
            s.tape.conv_transpose2d(x, w, b, self.spec)
        } else {
            s.tape.conv2d(x, w, b, self.spec)
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let shape = Shape::new(1, channels, 1, 1);
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(shape, 1.0), ParamKind::Trainable),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(shape), ParamKind::Trainable),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(shape), ParamKind::Buffer),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::full(shape, 1.0),
                ParamKind::Buffer,
            ),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        let training = s.training;
        let running = s.params.pair_mut(self.running_mean, self.running_var);
        s.tape.batch_norm(x, gamma, beta, running, training)
    }
}

/// `act(bn(conv(x)))`, with the norm optional. Convolutions followed by a
/// norm carry no bias, since the norm's shift subsumes it.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv,
    pub norm: Option<BatchNorm>,
    pub act: Activation,
}

impl ConvBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: ConvSpec,
        norm: bool,
        act: Activation,
        rng: &mut R,
    ) -> Self {
        let conv = Conv::new(store, &format!("{name}.conv"), spec, !norm, rng);
        let norm = norm.then(|| BatchNorm::new(store, &format!("{name}.bn"), spec.out_channels));
        ConvBlock { conv, norm, act }
    }

    /// Conv + BN + ReLU.
    pub fn standard<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: ConvSpec, rng: &mut R) -> Self {
        ConvBlock::new(store, name, spec, true, Activation::Relu, rng)
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let mut y = self.conv.forward(s, x)?;
        if let Some(bn) = &self.norm {
            y = bn.forward(s, y)?;
        }
        self.act.apply(s.tape, y)
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.conv.spec
    }
}
