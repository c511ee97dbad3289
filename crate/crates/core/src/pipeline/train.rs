//! Alternating generator/discriminator training and evaluation.

use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_loss, generator_objective, AdversarialRole, FeatureExtractor, LossReport, PatchDiscriminator,
};
use crate::masks::{apply_masks, center_mask, irregular_mask, stack_masks, MaskGrid, DEFAULT_COVERAGE};
use crate::metrics::{fit_feature_stats, frechet_distance, psnr, psnr_holes, ssim, ssim_holes, Psnr};
use crate::model::{expand_mask, DcfNet};
use crate::tensor::Tensor;

use super::adam::{clip_grad_norm, Adam};
use super::config::{MaskMode, TrainConfig};
use super::data::Dataset;

/// Seed offsets deriving the auxiliary streams from the run seed.
const DISC_SEED: u64 = 0xd15c;
const STREAM_SEED: u64 = 0x5747;

/// One row of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub iteration: u64,
    pub report: LossReport,
}

pub const CURVE_HEADER: &str = "iteration,l1,adversarial,perceptual,style,total";

/// Loss curve as CSV with [`CURVE_HEADER`].
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for p in curve {
        let r = &p.report;
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{:e}",
            p.iteration, r.l1, r.adversarial, r.perceptual, r.style, r.total
        );
    }
    s
}

/// Mask for `mode`; irregular masks are drawn from `seed`.
pub fn make_mask(mode: MaskMode, height: usize, width: usize, seed: u64) -> Result<MaskGrid> {
    match mode {
        MaskMode::Center => center_mask(height, width),
        MaskMode::Irregular => irregular_mask(height, width, seed, DEFAULT_COVERAGE),
    }
}

/// Everything a training run mutates.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub net: DcfNet,
    pub disc: PatchDiscriminator,
    pub extractor: FeatureExtractor,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = DcfNet::build(config.model(), config.seed)?;
        let disc = PatchDiscriminator::new(config.seed ^ DISC_SEED);
        let opt_g = Adam::new(&net.params, config.learning_rate);
        let opt_d = Adam::new(&disc.params, config.learning_rate);
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ STREAM_SEED),
            config,
            net,
            disc,
            extractor: FeatureExtractor::default(),
            opt_g,
            opt_d,
            iteration: 0,
        })
    }

    /// Draws a batch of indices and masks from the run's random stream.
    pub fn sample_batch(&mut self, data: &Dataset) -> Result<(Tensor, Vec<MaskGrid>)> {
        let (h, w) = data.resolution();
        if h != self.config.resolution || w != self.config.resolution {
            return Err(Error::Data(format!(
                "images are {h}x{w}, configuration expects {0}x{0}",
                self.config.resolution
            )));
        }
        let indices: Vec<usize> = (0..self.config.batch_size)
            .map(|_| self.rng.random_range(0..data.len()))
            .collect();
        let masks = (0..self.config.batch_size)
            .map(|_| {
                let seed = self.rng.next_u64();
                make_mask(self.config.mask_mode, h, w, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((data.batch(&indices), masks))
    }

    /// One optimization step on a given batch and masks.
    pub fn train_step(&mut self, target: &Tensor, masks: &[MaskGrid]) -> Result<LossReport> {
        let masked = apply_masks(target, masks)?;
        let mask = stack_masks(masks)?;
        let weights = self.config.weights;
        let mut tape = Tape::new();
        let x = tape.constant(masked);
        let gt = tape.constant(target.clone());
        let out = self.net.forward(&mut tape, x, &mask, true)?;

        if self.config.adversarial {
            let mut dt = Tape::new();
            let fake = dt.constant(tape.value(out.raw).clone());
            let real = dt.constant(target.clone());
            let loss = adversarial_loss(&mut dt, &mut self.disc, fake, real, AdversarialRole::Discriminator)?;
            let grads = dt.backward(loss)?;
            self.disc.params.zero_grads();
            self.disc.params.collect_grads(&dt, &grads);
            self.opt_d.step(&mut self.disc.params)?;
        }

        let disc = self.config.adversarial.then_some(&mut self.disc);
        let obj = generator_objective(&mut tape, &mut self.extractor, disc, out.raw, gt, &weights)?;
        let report = obj.report(&tape, &weights);
        let grads = tape.backward(obj.total)?;
        self.net.params.zero_grads();
        self.net.params.collect_grads(&tape, &grads);
        if let Some(c) = self.config.grad_clip {
            clip_grad_norm(&mut self.net.params, c);
        }
        self.opt_g.step(&mut self.net.params)?;
        self.iteration += 1;
        Ok(report)
    }

    /// Samples a batch and trains on it.
    pub fn step(&mut self, data: &Dataset) -> Result<LossReport> {
        let (batch, masks) = self.sample_batch(data)?;
        self.train_step(&batch, &masks)
    }

    /// Runs until `config.iterations`, calling `on_step` after each step.
    pub fn run(
        &mut self,
        data: &Dataset,
        mut on_step: impl FnMut(&Trainer, &CurvePoint) -> Result<()>,
    ) -> Result<Vec<CurvePoint>> {
        let mut curve = Vec::new();
        while self.iteration < self.config.iterations {
            let report = self.step(data)?;
            let point = CurvePoint {
                iteration: self.iteration,
                report,
            };
            on_step(self, &point)?;
            curve.push(point);
        }
        Ok(curve)
    }
}

/// Trains a fresh model and returns it with its loss curve.
pub fn train_loop(config: TrainConfig, data: &Dataset) -> Result<(Trainer, Vec<CurvePoint>)> {
    let mut trainer = Trainer::new(config)?;
    let curve = trainer.run(data, |_, _| Ok(()))?;
    Ok((trainer, curve))
}

/// Metrics for one way of filling the holes. PSNR is computed from the
/// pooled squared error over all samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSet {
    pub psnr_full: Psnr,
    pub psnr_holes: Psnr,
    pub ssim_full: f64,
    pub ssim_holes: f64,
    pub frechet: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub model: MetricSet,
    /// Holes left at zero, i.e. mid-gray.
    pub mid_gray: MetricSet,
    /// Holes filled with the per-channel mean of the known pixels.
    pub mean_fill: MetricSet,
}

impl EvalReport {
    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = format!("samples={}\n", self.samples);
        for (name, m) in [
            ("model", &self.model),
            ("mid_gray", &self.mid_gray),
            ("mean_fill", &self.mean_fill),
        ] {
            let _ = write!(
                s,
                "{name}.psnr_full={}\n{name}.psnr_holes={}\n{name}.ssim_full={:.6}\n{name}.ssim_holes={:.6}\n{name}.frechet={:.6}\n",
                m.psnr_full, m.psnr_holes, m.ssim_full, m.ssim_holes, m.frechet
            );
        }
        s
    }
}

/// Fills the holes with the per-channel mean of the known pixels.
pub fn mean_fill(masked: &Tensor, mask: &Tensor) -> Tensor {
    let s = masked.shape();
    let mut out = masked.clone();
    for b in 0..s.batch {
        for c in 0..s.channels {
            let (mut sum, mut n) = (0.0, 0usize);
            for y in 0..s.height {
                for x in 0..s.width {
                    if mask.at(b, 0, y, x) != 0.0 {
                        sum += masked.at(b, c, y, x);
                        n += 1;
                    }
                }
            }
            let fill = if n > 0 { sum / n as f64 } else { 0.0 };
            for y in 0..s.height {
                for x in 0..s.width {
                    if mask.at(b, 0, y, x) == 0.0 {
                        out.set(b, c, y, x, fill);
                    }
                }
            }
        }
    }
    out
}

fn to_unit_range(t: &Tensor) -> Tensor {
    t.map(|v| (v + 1.0) / 2.0)
}

struct Accumulator {
    se_full: f64,
    n_full: usize,
    se_holes: f64,
    n_holes: usize,
    ssim_full: f64,
    ssim_holes: f64,
    ssim_holes_n: usize,
    outputs: Vec<Tensor>,
}

impl Accumulator {
    fn new() -> Self {
        Accumulator {
            se_full: 0.0,
            n_full: 0,
            se_holes: 0.0,
            n_holes: 0,
            ssim_full: 0.0,
            ssim_holes: 0.0,
            ssim_holes_n: 0,
            outputs: Vec::new(),
        }
    }

    fn add(&mut self, out: &Tensor, gt: &Tensor, mask: &Tensor) -> Result<()> {
        let (o, g) = (to_unit_range(out), to_unit_range(gt));
        let m = expand_mask(mask, o.shape().channels);
        for ((a, b), k) in o.data().iter().zip(g.data()).zip(m.data()) {
            let e = (a - b) * (a - b);
            self.se_full += e;
            if *k == 0.0 {
                self.se_holes += e;
                self.n_holes += 1;
            }
        }
        self.n_full += o.numel();
        self.ssim_full += ssim(&o, &g, 1.0)?;
        // Masks whose holes all hug the border have no full window inside.
        if let Ok(v) = ssim_holes(&o, &g, mask, 1.0) {
            self.ssim_holes += v;
            self.ssim_holes_n += 1;
        }
        self.outputs.push(out.clone());
        Ok(())
    }

    fn finish(self, reference: &crate::metrics::GaussianStats, extractor: &mut FeatureExtractor) -> Result<MetricSet> {
        let n = self.outputs.len() as f64;
        let stats = fit_feature_stats(&stack(&self.outputs), extractor)?;
        Ok(MetricSet {
            psnr_full: crate::metrics::psnr_from_mse(self.se_full / self.n_full as f64, 1.0),
            psnr_holes: crate::metrics::psnr_from_mse(self.se_holes / self.n_holes.max(1) as f64, 1.0),
            ssim_full: self.ssim_full / n,
            ssim_holes: self.ssim_holes / self.ssim_holes_n.max(1) as f64,
            frechet: frechet_distance(&stats, reference)?,
        })
    }
}

fn stack(items: &[Tensor]) -> Tensor {
    let s = items[0].shape();
    let data = items.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::from_vec(
        crate::tensor::Shape {
            batch: items.len(),
            ..s
        },
        data,
    )
    .expect("stack")
}

/// Per-sample mask seed for image `index` under evaluation seed `seed`.
pub fn eval_mask_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)
}

/// Completes every image under every seed's mask in eval mode and scores
/// the composited results against two trivial fills.
pub fn evaluate(
    net: &mut DcfNet,
    data: &Dataset,
    mode: MaskMode,
    seeds: &[u64],
    extractor: &mut FeatureExtractor,
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("evaluation needs at least one seed"));
    }
    let samples = data.len() * if mode == MaskMode::Center { 1 } else { seeds.len() };
    if samples < 2 {
        return Err(Error::invalid(
            "evaluation needs at least two samples for the Fréchet score",
        ));
    }
    let (h, w) = data.resolution();
    let mut model = Accumulator::new();
    let mut gray = Accumulator::new();
    let mut mean = Accumulator::new();
    let mut truths = Vec::with_capacity(samples);
    let used: &[u64] = if mode == MaskMode::Center { &seeds[..1] } else { seeds };
    for &seed in used {
        for (i, gt) in data.images.iter().enumerate() {
            let m = make_mask(mode, h, w, eval_mask_seed(seed, i))?;
            let masked = apply_masks(gt, std::slice::from_ref(&m))?;
            let mask = m.to_tensor();
            let (_, comp) = net.infer(&masked, &mask)?;
            model.add(&comp, gt, &mask)?;
            gray.add(&masked, gt, &mask)?;
            mean.add(&mean_fill(&masked, &mask), gt, &mask)?;
            truths.push(gt.clone());
        }
    }
    let reference = fit_feature_stats(&stack(&truths), extractor)?;
    Ok(EvalReport {
        samples,
        model: model.finish(&reference, extractor)?,
        mid_gray: gray.finish(&reference, extractor)?,
        mean_fill: mean.finish(&reference, extractor)?,
    })
}

/// Full-frame PSNR of one completion in `[0, 1]` space.
pub fn completion_psnr(out: &Tensor, gt: &Tensor) -> Result<Psnr> {
    psnr(&to_unit_range(out), &to_unit_range(gt), 1.0)
}

/// Hole-region PSNR of one completion in `[0, 1]` space.
pub fn completion_psnr_holes(out: &Tensor, gt: &Tensor, mask: &Tensor) -> Result<Psnr> {
    psnr_holes(&to_unit_range(out), &to_unit_range(gt), mask, 1.0)
}
