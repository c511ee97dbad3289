//! The dual-path completion network: encoder, kernel predictor, the
//! feature-level filtering site, FFC residual trunk and decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::ffc::{FfcConfig, FfcResBlock};
use crate::filtering::DEFAULT_NEIGHBORHOOD;
use crate::nn::{Conv, ConvBlock, Session};
use crate::ops::conv::{ConvSpec, Padding};
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

/// Reference resolution of the layer table below.
pub const REFERENCE_RESOLUTION: usize = 256;

/// Every named intermediate with its channel count and spatial size at the
/// reference resolution. Channel count `0` stands for the output channels
/// and `9` for the kernel taps at the default neighborhood.
pub const LAYER_TABLE: [(&str, usize, usize); 16] = [
    ("f1", 64, 256),
    ("f2", 128, 128),
    ("f2'", 128, 64),
    ("f3", 256, 64),
    ("f3'", 256, 64),
    ("f4", 256, 64),
    ("f5", 256, 64),
    ("f6", 256, 64),
    ("f7", 128, 64),
    ("f8", 64, 128),
    ("f9", 0, 256),
    ("e1", 64, 256),
    ("e2", 128, 128),
    ("e2'", 128, 64),
    ("e3", 256, 64),
    ("T3", 9, 64),
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcfConfig {
    pub resolution: usize,
    /// Side of the filtering neighborhood; must be odd.
    pub neighborhood: usize,
    pub out_channels: usize,
    pub ffc_blocks: usize,
    pub global_ratio: f64,
    pub enable_lfu: bool,
    /// Adds a second filtering stage on the decoder output, driven by a
    /// 1x1 head on `e1`.
    pub image_level_filter: bool,
}

impl Default for DcfConfig {
    fn default() -> Self {
        DcfConfig {
            resolution: 64,
            neighborhood: DEFAULT_NEIGHBORHOOD,
            out_channels: 3,
            ffc_blocks: 6,
            global_ratio: 0.5,
            enable_lfu: true,
            image_level_filter: false,
        }
    }
}

impl DcfConfig {
    pub fn with_resolution(resolution: usize) -> Self {
        DcfConfig {
            resolution,
            ..DcfConfig::default()
        }
    }

    pub fn taps(&self) -> usize {
        self.neighborhood * self.neighborhood
    }

    fn ffc(&self) -> FfcConfig {
        FfcConfig {
            channels: 256,
            global_ratio: self.global_ratio,
            enable_lfu: self.enable_lfu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolution;
        if !r.is_power_of_two() || !r.is_multiple_of(4) {
            return Err(Error::invalid(format!(
                "resolution must be a power of two divisible by 4, got {r}"
            )));
        }
        // The local Fourier unit splits the R/4 trunk into quadrants.
        if self.enable_lfu && r < 8 {
            return Err(Error::invalid(format!(
                "resolution {r} is too small for the local Fourier unit (minimum 8)"
            )));
        }
        if self.neighborhood == 0 || self.neighborhood.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "neighborhood side must be odd, got {}",
                self.neighborhood
            )));
        }
        if self.out_channels == 0 {
            return Err(Error::invalid("output channels must be positive"));
        }
        self.ffc().validate()
    }
}

/// One row of a shape audit.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditRow {
    pub name: &'static str,
    pub expected: Shape,
    pub actual: Shape,
}

impl AuditRow {
    pub fn matches(&self) -> bool {
        self.expected == self.actual
    }
}

/// Expected `(name, shape)` of every intermediate for a single image at
/// `config.resolution`, scaled from the reference table.
pub fn expected_shapes(config: &DcfConfig) -> Vec<(&'static str, Shape)> {
    let scale = |size: usize| size * config.resolution / REFERENCE_RESOLUTION;
    LAYER_TABLE
        .iter()
        .map(|&(name, channels, size)| {
            let channels = match name {
                "f9" => config.out_channels,
                "T3" => config.taps(),
                _ => channels,
            };
            let s = scale(size);
            (name, Shape::new(1, channels, s, s))
        })
        .collect()
}

/// Compares a recorded trace against [`expected_shapes`]. Every expected
/// name must appear; batch size is ignored.
pub fn audit_trace(config: &DcfConfig, trace: &[(&'static str, Shape)]) -> Vec<AuditRow> {
    expected_shapes(config)
        .into_iter()
        .map(|(name, expected)| {
            let actual = trace
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, s)| Shape { batch: 1, ..*s })
                .unwrap_or(Shape::new(0, 0, 0, 0));
            AuditRow { name, expected, actual }
        })
        .collect()
}

fn conv_same4(i: usize, o: usize) -> ConvSpec {
    ConvSpec::conv(4, i, o).padding(Padding::new(1, 2, 1, 2))
}

fn convt_same4(i: usize, o: usize) -> ConvSpec {
    ConvSpec::transposed(4, i, o).padding(Padding::new(1, 2, 1, 2))
}

/// Layer specs in forward order. Shared by the builder and the static audit.
struct Schedule {
    enc1: ConvSpec,
    enc2: ConvSpec,
    enc3: ConvSpec,
    enc4: ConvSpec,
    dec1: ConvSpec,
    dec2: ConvSpec,
    dec3: ConvSpec,
    dec4: ConvSpec,
    pred1: ConvSpec,
    pred2: ConvSpec,
    pred3: ConvSpec,
    head: ConvSpec,
}

impl Schedule {
    fn new(config: &DcfConfig) -> Self {
        Schedule {
            enc1: ConvSpec::conv(7, 3, 64).pad(3),
            enc2: ConvSpec::conv(4, 64, 128).stride(2).pad(1),
            enc3: conv_same4(128, 256),
            enc4: ConvSpec::conv(1, 256, 256),
            dec1: ConvSpec::transposed(1, 256, 256),
            dec2: convt_same4(256, 128),
            dec3: ConvSpec::transposed(4, 128, 64).stride(2).pad(1),
            dec4: ConvSpec::transposed(7, 64, config.out_channels)
                .stride(2)
                .pad(3)
                .output_padding(1),
            pred1: ConvSpec::conv(7, 3, 64).pad(3),
            pred2: ConvSpec::conv(4, 64, 128).stride(2).pad(1),
            // Input is the concatenation [f2', e2'], hence 256 channels.
            pred3: conv_same4(256, 256),
            head: ConvSpec::conv(1, 256, config.taps()),
        }
    }
}

/// Shape audit from the conv shape functions alone, without running the
/// network.
pub fn audit_schedule(config: &DcfConfig) -> Result<Vec<AuditRow>> {
    config.validate()?;
    let s = Schedule::new(config);
    let r = config.resolution;
    let pool = |x: Shape| x.with_spatial(x.height / 2, x.width / 2);
    let input = Shape::new(1, 3, r, r);
    let f1 = s.enc1.output_shape(input)?;
    let f2 = s.enc2.output_shape(f1)?;
    let f2p = pool(f2);
    let f3 = s.enc3.output_shape(f2p)?;
    let e1 = s.pred1.output_shape(input)?;
    let e2 = s.pred2.output_shape(e1)?;
    let e2p = pool(e2);
    let cat = e2p.with_channels(e2p.channels + f2p.channels);
    let e3 = s.pred3.output_shape(cat)?;
    let t3 = s.head.output_shape(e3)?;
    let f3p = f3;
    let f4 = s.enc4.output_shape(f3p)?;
    let f5 = f4;
    let f6 = s.dec1.output_shape(f5)?;
    let f7 = s.dec2.output_shape(f6)?;
    let f8 = s.dec3.output_shape(f7)?;
    let f9 = s.dec4.output_shape(f8)?;
    let trace = [
        ("f1", f1),
        ("f2", f2),
        ("f2'", f2p),
        ("f3", f3),
        ("f3'", f3p),
        ("f4", f4),
        ("f5", f5),
        ("f6", f6),
        ("f7", f7),
        ("f8", f8),
        ("f9", f9),
        ("e1", e1),
        ("e2", e2),
        ("e2'", e2p),
        ("e3", e3),
        ("T3", t3),
    ];
    Ok(audit_trace(config, &trace))
}

fn check_audit(rows: &[AuditRow]) -> Result<()> {
    match rows.iter().find(|r| !r.matches()) {
        Some(r) => Err(Error::invalid(format!(
            "layer {} has shape {}, expected {}",
            r.name, r.actual, r.expected
        ))),
        None => Ok(()),
    }
}

#[derive(Clone, Debug)]
struct Layers {
    enc1: ConvBlock,
    enc2: ConvBlock,
    enc3: ConvBlock,
    enc4: ConvBlock,
    blocks: Vec<FfcResBlock>,
    dec1: ConvBlock,
    dec2: ConvBlock,
    dec3: ConvBlock,
    dec4: Conv,
    pred1: ConvBlock,
    pred2: ConvBlock,
    pred3: ConvBlock,
    head: Conv,
    image_head: Option<Conv>,
}

/// Encoder features consumed by the predictor and filtering site.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub f1: Var,
    pub f2: Var,
    pub f2_pooled: Var,
    pub f3: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub raw: Var,
    pub composited: Var,
    /// Normalized kernel field at the filtering site.
    pub kernels: Var,
    pub trace: Vec<(&'static str, Shape)>,
}

/// The completion network and its parameters.
#[derive(Clone, Debug)]
pub struct DcfNet {
    pub config: DcfConfig,
    pub params: ParamStore,
    layers: Layers,
}

impl DcfNet {
    /// Builds and initializes the network deterministically from `seed`,
    /// then audits every layer's output size.
    pub fn build(config: DcfConfig, seed: u64) -> Result<Self> {
        check_audit(&audit_schedule(&config)?)?;
        let s = Schedule::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let rng = &mut rng;
        let enc1 = ConvBlock::standard(&mut p, "enc1", s.enc1, rng);
        let enc2 = ConvBlock::standard(&mut p, "enc2", s.enc2, rng);
        let enc3 = ConvBlock::standard(&mut p, "enc3", s.enc3, rng);
        let pred1 = ConvBlock::standard(&mut p, "pred1", s.pred1, rng);
        let pred2 = ConvBlock::standard(&mut p, "pred2", s.pred2, rng);
        let pred3 = ConvBlock::standard(&mut p, "pred3", s.pred3, rng);
        let head = Conv::new(&mut p, "kernel_head", s.head, true, rng);
        let enc4 = ConvBlock::standard(&mut p, "enc4", s.enc4, rng);
        let blocks = (0..config.ffc_blocks)
            .map(|i| FfcResBlock::new(&mut p, &format!("ffc{i}"), config.ffc(), rng))
            .collect::<Result<Vec<_>>>()?;
        let dec1 = ConvBlock::standard(&mut p, "dec1", s.dec1, rng);
        let dec2 = ConvBlock::standard(&mut p, "dec2", s.dec2, rng);
        let dec3 = ConvBlock::standard(&mut p, "dec3", s.dec3, rng);
        let dec4 = Conv::new(&mut p, "dec4", s.dec4, true, rng);
        let image_head = config
            .image_level_filter
            .then(|| Conv::new(&mut p, "image_head", ConvSpec::conv(1, 64, config.taps()), true, rng));
        Ok(DcfNet {
            config,
            params: p,
            layers: Layers {
                enc1,
                enc2,
                enc3,
                enc4,
                blocks,
                dec1,
                dec2,
                dec3,
                dec4,
                pred1,
                pred2,
                pred3,
                head,
                image_head,
            },
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.trainable_count()
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        let r = self.config.resolution;
        let expected = Shape::new(shape.batch, 3, r, r);
        if shape != expected || shape.batch == 0 {
            return Err(Error::shape("dcf_input", expected, shape));
        }
        Ok(())
    }

    pub fn encode(&mut self, tape: &mut Tape, image: Var, training: bool) -> Result<Encoded> {
        self.check_input(tape.shape(image))?;
        let mut s = Session::new(tape, &mut self.params, training);
        self.layers.encode(&mut s, image)
    }

    /// Normalized kernel field `(B, N², R/4, R/4)` from the masked image and
    /// the pooled encoder features.
    pub fn predict_kernels(&mut self, tape: &mut Tape, image: Var, f2_pooled: Var, training: bool) -> Result<Var> {
        self.check_input(tape.shape(image))?;
        let mut s = Session::new(tape, &mut self.params, training);
        let mut trace = Vec::new();
        self.layers
            .predict(&mut s, image, f2_pooled, &mut trace)
            .map(|(t, _)| t)
    }

    /// Full forward pass. `mask` is `(B, 1, R, R)` with 1 at known pixels.
    pub fn forward(&mut self, tape: &mut Tape, image: Var, mask: &Tensor, training: bool) -> Result<ForwardOutput> {
        let shape = tape.shape(image);
        self.check_input(shape)?;
        let mshape = Shape::new(shape.batch, 1, shape.height, shape.width);
        if mask.shape() != mshape {
            return Err(Error::shape("dcf_mask", mshape, mask.shape()));
        }
        let mut s = Session::new(tape, &mut self.params, training);
        let out = self.layers.forward(&mut s, image, mask)?;
        check_audit(&audit_trace(&self.config, &out.trace))?;
        Ok(out)
    }

    /// Forward pass reading parameters from `s.params`, which must be this
    /// network's store or a copy of it.
    pub fn forward_with(&self, s: &mut Session, image: Var, mask: &Tensor) -> Result<ForwardOutput> {
        let shape = s.tape.shape(image);
        self.check_input(shape)?;
        let mshape = Shape::new(shape.batch, 1, shape.height, shape.width);
        if mask.shape() != mshape {
            return Err(Error::shape("dcf_mask", mshape, mask.shape()));
        }
        if s.params.len() != self.params.len() {
            return Err(Error::invalid("session store does not belong to this network"));
        }
        self.layers.forward(s, image, mask)
    }

    /// Eval-mode forward on an inference tape; returns `(raw, composited)`.
    pub fn infer(&mut self, image: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::inference();
        let x = tape.constant(image.clone());
        let out = self.forward(&mut tape, x, mask, false)?;
        Ok((tape.value(out.raw).clone(), tape.value(out.composited).clone()))
    }
}

/// Broadcasts a `(B, 1, H, W)` mask over `channels`.
pub fn expand_mask(mask: &Tensor, channels: usize) -> Tensor {
    let m = mask.shape();
    Tensor::from_fn(m.with_channels(channels), |b, _, y, x| mask.at(b, 0, y, x))
}

impl Layers {
    fn encode(&self, s: &mut Session, image: Var) -> Result<Encoded> {
        let f1 = self.enc1.forward(s, image)?;
        let f2 = self.enc2.forward(s, f1)?;
        let f2_pooled = s.tape.avg_pool2(f2)?;
        let f3 = self.enc3.forward(s, f2_pooled)?;
        Ok(Encoded { f1, f2, f2_pooled, f3 })
    }

    /// Returns the normalized kernels and `e1`.
    fn predict(
        &self,
        s: &mut Session,
        image: Var,
        f2_pooled: Var,
        trace: &mut Vec<(&'static str, Shape)>,
    ) -> Result<(Var, Var)> {
        let e1 = self.pred1.forward(s, image)?;
        let e2 = self.pred2.forward(s, e1)?;
        let e2p = s.tape.avg_pool2(e2)?;
        let cat = s.tape.concat_channels(f2_pooled, e2p)?;
        let e3 = self.pred3.forward(s, cat)?;
        let logits = self.head.forward(s, e3)?;
        let t3 = s.tape.softmax_channels(logits)?;
        for (name, v) in [("e1", e1), ("e2", e2), ("e2'", e2p), ("e3", e3), ("T3", t3)] {
            trace.push((name, s.tape.shape(v)));
        }
        Ok((t3, e1))
    }

    fn forward(&self, s: &mut Session, image: Var, mask: &Tensor) -> Result<ForwardOutput> {
        let mut trace = Vec::new();
        let enc = self.encode(s, image)?;
        let (t3, e1) = self.predict(s, image, enc.f2_pooled, &mut trace)?;
        let f3f = s.tape.apply_filter(enc.f3, t3)?;
        let f4 = self.enc4.forward(s, f3f)?;
        let mut f5 = f4;
        for block in &self.blocks {
            f5 = block.forward(s, f5)?;
        }
        let f6 = self.dec1.forward(s, f5)?;
        let f7 = self.dec2.forward(s, f6)?;
        let f8 = self.dec3.forward(s, f7)?;
        let f9 = self.dec4.forward(s, f8)?;
        let mut raw = s.tape.tanh(f9)?;
        if let Some(head) = &self.image_head {
            let logits = head.forward(s, e1)?;
            let t = s.tape.softmax_channels(logits)?;
            raw = s.tape.apply_filter(raw, t)?;
        }
        for (name, v) in [
            ("f1", enc.f1),
            ("f2", enc.f2),
            ("f2'", enc.f2_pooled),
            ("f3", enc.f3),
            ("f3'", f3f),
            ("f4", f4),
            ("f5", f5),
            ("f6", f6),
            ("f7", f7),
            ("f8", f8),
            ("f9", f9),
        ] {
            trace.push((name, s.tape.shape(v)));
        }
        let composited = composite(s.tape, raw, image, mask)?;
        Ok(ForwardOutput {
            raw,
            composited,
            kernels: t3,
            trace,
        })
    }
}

/// `M ⊙ known + (1 − M) ⊙ raw`; exact at known pixels.
pub fn composite(tape: &mut Tape, raw: Var, known: Var, mask: &Tensor) -> Result<Var> {
    let c = tape.shape(raw).channels;
    let m = expand_mask(mask, c);
    let keep = m.map(|v| 1.0 - v);
    let known_part = m.zip_map(tape.value(known), |a, b| a * b)?;
    let hole = tape.mul_const(raw, keep)?;
    tape.add_const(hole, &known_part)
}
