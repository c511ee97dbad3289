//! Reconstruction objective: L1, perceptual, style and hinge adversarial
//! terms, with the frozen feature extractor and patch discriminator they use.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvBlock, Session};
use crate::ops::conv::ConvSpec;
use crate::params::ParamStore;

/// Seed of the default feature extractor. Changing it changes every
/// perceptual, style and Fréchet value.
pub const EXTRACTOR_SEED: u64 = 0x5eed_dcf0;

/// Channel widths of the extractor stages.
pub const EXTRACTOR_CHANNELS: [usize; 4] = [16, 32, 64, 64];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub adversarial: f64,
    pub perceptual: f64,
    pub style: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            adversarial: 0.1,
            perceptual: 0.1,
            style: 250.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.l1, self.adversarial, self.perceptual, self.style];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Component values of one objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub l1: f64,
    pub adversarial: f64,
    pub perceptual: f64,
    pub style: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l1: f64,
    pub adversarial: f64,
    pub perceptual: f64,
    pub style: f64,
    pub total: f64,
}

pub fn total_loss(c: LossComponents, w: &LossWeights) -> LossReport {
    LossReport {
        l1: c.l1,
        adversarial: c.adversarial,
        perceptual: c.perceptual,
        style: c.style,
        total: w.l1 * c.l1 + w.adversarial * c.adversarial + w.perceptual * c.perceptual + w.style * c.style,
    }
}

/// Four stride-2 3x3 conv stages with ReLU and frozen random weights.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub params: ParamStore,
    stages: Vec<ConvBlock>,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor::new(EXTRACTOR_SEED)
    }
}

impl FeatureExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut stages = Vec::new();
        let mut input = 3;
        for (i, &c) in EXTRACTOR_CHANNELS.iter().enumerate() {
            let spec = ConvSpec::conv(3, input, c).stride(2).pad(1);
            stages.push(ConvBlock::new(
                &mut params,
                &format!("stage{i}"),
                spec,
                false,
                Activation::Relu,
                &mut rng,
            ));
            input = c;
        }
        params.set_frozen(true);
        FeatureExtractor { params, stages }
    }

    pub fn feature_dim(&self) -> usize {
        EXTRACTOR_CHANNELS[EXTRACTOR_CHANNELS.len() - 1]
    }

    /// Activations after every stage.
    pub fn features(&mut self, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
        let mut s = Session::new(tape, &mut self.params, false);
        let mut taps = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for stage in &self.stages {
            h = stage.forward(&mut s, h)?;
            taps.push(h);
        }
        Ok(taps)
    }
}

/// Four stride-2 4x4 convs ending in a one-channel logit map.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    pub params: ParamStore,
    layers: Vec<ConvBlock>,
}

impl PatchDiscriminator {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let widths = [3, 32, 64, 128, 1];
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let spec = ConvSpec::conv(4, w[0], w[1]).stride(2).pad(1);
                let act = if i + 2 < widths.len() {
                    Activation::LeakyRelu(0.2)
                } else {
                    Activation::Identity
                };
                ConvBlock::new(&mut params, &format!("disc{i}"), spec, false, act, &mut rng)
            })
            .collect();
        PatchDiscriminator { params, layers }
    }

    /// Logit map `(B, 1, H/16, W/16)`.
    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut s = Session::new(tape, &mut self.params, true);
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(&mut s, h)?;
        }
        Ok(h)
    }
}

pub fn l1_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    tape.mean_abs_diff(pred, target)
}

fn sum_vars(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Sum over stages of the mean absolute feature difference.
pub fn perceptual_loss(tape: &mut Tape, pred: &[Var], target: &[Var]) -> Result<Var> {
    let terms = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| tape.mean_abs_diff(p, t))
        .collect::<Result<Vec<_>>>()?;
    sum_vars(tape, &terms)
}

/// Sum over stages of the mean absolute Gram-matrix difference.
pub fn style_loss(tape: &mut Tape, pred: &[Var], target: &[Var]) -> Result<Var> {
    let mut terms = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let gp = tape.gram(p)?;
        let gt = tape.gram(t)?;
        terms.push(tape.mean_abs_diff(gp, gt)?);
    }
    sum_vars(tape, &terms)
}

/// `(perceptual, style)` from one extractor pass over each image.
pub fn feature_losses(tape: &mut Tape, extractor: &mut FeatureExtractor, pred: Var, target: Var) -> Result<(Var, Var)> {
    let fp = extractor.features(tape, pred)?;
    let ft = extractor.features(tape, target)?;
    Ok((perceptual_loss(tape, &fp, &ft)?, style_loss(tape, &fp, &ft)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdversarialRole {
    Generator,
    Discriminator,
}

/// Hinge loss from discriminator logits. The generator role ignores
/// `real_logits`.
pub fn hinge_loss(tape: &mut Tape, fake_logits: Var, real_logits: Option<Var>, role: AdversarialRole) -> Result<Var> {
    match role {
        AdversarialRole::Generator => {
            let m = tape.mean(fake_logits)?;
            tape.scale(m, -1.0)
        }
        AdversarialRole::Discriminator => {
            let real = real_logits.ok_or_else(|| Error::invalid("discriminator hinge loss needs real logits"))?;
            let r = tape.scale(real, -1.0)?;
            let r = tape.add_scalar(r, 1.0)?;
            let r = tape.relu(r)?;
            let r = tape.mean(r)?;
            let f = tape.add_scalar(fake_logits, 1.0)?;
            let f = tape.relu(f)?;
            let f = tape.mean(f)?;
            tape.add(r, f)
        }
    }
}

pub fn adversarial_loss(
    tape: &mut Tape,
    disc: &mut PatchDiscriminator,
    pred: Var,
    target: Var,
    role: AdversarialRole,
) -> Result<Var> {
    let fake = disc.forward(tape, pred)?;
    let real = match role {
        AdversarialRole::Discriminator => Some(disc.forward(tape, target)?),
        AdversarialRole::Generator => None,
    };
    hinge_loss(tape, fake, real, role)
}

/// Scalar loss variables recorded for one generator objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveVars {
    pub l1: Var,
    pub adversarial: Option<Var>,
    pub perceptual: Var,
    pub style: Var,
    pub total: Var,
}

impl ObjectiveVars {
    pub fn report(&self, tape: &Tape, weights: &LossWeights) -> LossReport {
        let v = |x: Var| tape.value(x).item(0)[0];
        let mut r = total_loss(
            LossComponents {
                l1: v(self.l1),
                adversarial: self.adversarial.map(v).unwrap_or(0.0),
                perceptual: v(self.perceptual),
                style: v(self.style),
            },
            weights,
        );
        r.total = v(self.total);
        r
    }
}

/// Records the weighted generator objective on `pred` against `target`.
/// With `disc` present the generator hinge term is included; its
/// parameters are frozen for the duration.
pub fn generator_objective(
    tape: &mut Tape,
    extractor: &mut FeatureExtractor,
    disc: Option<&mut PatchDiscriminator>,
    pred: Var,
    target: Var,
    weights: &LossWeights,
) -> Result<ObjectiveVars> {
    let l1 = l1_loss(tape, pred, target)?;
    let (perceptual, style) = feature_losses(tape, extractor, pred, target)?;
    let adversarial = match disc {
        Some(d) => {
            let was = d.params.is_frozen();
            d.params.set_frozen(true);
            let r = adversarial_loss(tape, d, pred, target, AdversarialRole::Generator);
            d.params.set_frozen(was);
            Some(r?)
        }
        None => None,
    };
    let mut terms = vec![
        tape.scale(l1, weights.l1)?,
        tape.scale(perceptual, weights.perceptual)?,
        tape.scale(style, weights.style)?,
    ];
    if let Some(a) = adversarial {
        terms.push(tape.scale(a, weights.adversarial)?);
    }
    let total = sum_vars(tape, &terms)?;
    Ok(ObjectiveVars {
        l1,
        adversarial,
        perceptual,
        style,
        total,
    })
}
