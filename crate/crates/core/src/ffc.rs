//! Fast Fourier Convolution blocks: Fourier Unit, Spectral Transform, the
//! two-branch FFC layer and its residual block.

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Activation, BatchNorm, Conv, ConvBlock, Session};
use crate::ops::conv::ConvSpec;
use crate::params::ParamStore;

/// Channel split of an FFC stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FfcConfig {
    pub channels: usize,
    pub global_ratio: f64,
    pub enable_lfu: bool,
}

impl FfcConfig {
    pub fn new(channels: usize) -> Self {
        FfcConfig {
            channels,
            global_ratio: 0.5,
            enable_lfu: true,
        }
    }

    pub fn global_channels(&self) -> usize {
        (self.global_ratio * self.channels as f64).round() as usize
    }

    pub fn local_channels(&self) -> usize {
        self.channels - self.global_channels().min(self.channels)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.global_ratio > 0.0 && self.global_ratio < 1.0) {
            return Err(Error::invalid(format!(
                "global ratio must lie in (0, 1), got {}",
                self.global_ratio
            )));
        }
        let g = self.global_channels();
        if g < 1 || g >= self.channels {
            return Err(Error::invalid(format!(
                "{} channels at ratio {} leave an empty branch",
                self.channels, self.global_ratio
            )));
        }
        if !g.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "global branch needs an even channel count for the spectral transform, got {g}"
            )));
        }
        if self.enable_lfu && !(g / 2).is_multiple_of(4) {
            return Err(Error::invalid(format!(
                "local Fourier unit splits {} channels into quarters",
                g / 2
            )));
        }
        Ok(())
    }
}

/// Real FFT, pointwise convolution over stacked real/imaginary channels,
/// inverse FFT.
#[derive(Clone, Debug)]
pub struct FourierUnit {
    pub conv: Conv,
    pub norm: Option<BatchNorm>,
    pub act: Activation,
    pub channels: usize,
}

impl FourierUnit {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, channels: usize, rng: &mut R) -> Self {
        FourierUnit::with_options(store, name, channels, true, Activation::Relu, rng)
    }

    pub fn with_options<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        norm: bool,
        act: Activation,
        rng: &mut R,
    ) -> Self {
        let spec = ConvSpec::conv(1, 2 * channels, 2 * channels);
        let conv = Conv::new(store, &format!("{name}.conv"), spec, false, rng);
        let norm = norm.then(|| BatchNorm::new(store, &format!("{name}.bn"), 2 * channels));
        FourierUnit {
            conv,
            norm,
            act,
            channels,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x);
        let spec = s.tape.rfft2_stacked(x)?;
        let mut y = self.conv.forward(s, spec)?;
        if let Some(bn) = &self.norm {
            y = bn.forward(s, y)?;
        }
        let y = self.act.apply(s.tape, y)?;
        s.tape.irfft2_stacked(y, shape.height, shape.width)
    }
}

/// Channel-halving 1x1 conv, global Fourier Unit plus an optional local
/// Fourier Unit on a quarter of the channels, then a 1x1 conv back up.
#[derive(Clone, Debug)]
pub struct SpectralTransform {
    pub reduce: ConvBlock,
    pub fu: FourierUnit,
    pub lfu: Option<FourierUnit>,
    pub expand: Conv,
}

impl SpectralTransform {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        enable_lfu: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if out_channels < 2 || !out_channels.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "spectral transform needs an even output width, got {out_channels}"
            )));
        }
        let half = out_channels / 2;
        if enable_lfu && !half.is_multiple_of(4) {
            return Err(Error::invalid(format!(
                "local Fourier unit splits {half} channels into quarters"
            )));
        }
        let reduce = ConvBlock::standard(
            store,
            &format!("{name}.reduce"),
            ConvSpec::conv(1, in_channels, half),
            rng,
        );
        let fu = FourierUnit::new(store, &format!("{name}.fu"), half, rng);
        let lfu = enable_lfu.then(|| FourierUnit::new(store, &format!("{name}.lfu"), half, rng));
        let expand = Conv::new(
            store,
            &format!("{name}.expand"),
            ConvSpec::conv(1, half, out_channels),
            false,
            rng,
        );
        Ok(SpectralTransform {
            reduce,
            fu,
            lfu,
            expand,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let x = self.reduce.forward(s, x)?;
        let global = self.fu.forward(s, x)?;
        let mut sum = s.tape.add(x, global)?;
        if let Some(lfu) = &self.lfu {
            let quarter = s.tape.shape(x).channels / 4;
            let xs = s.tape.narrow_channels(x, 0, quarter)?;
            let xs = s.tape.quadrant_stack(xs)?;
            let xs = lfu.forward(s, xs)?;
            let xs = s.tape.tile2(xs)?;
            sum = s.tape.add(sum, xs)?;
        }
        self.expand.forward(s, sum)
    }
}

/// Two-branch layer: 3x3 convs for local->local, local->global and
/// global->local, a spectral transform for global->global.
#[derive(Clone, Debug)]
pub struct FfcLayer {
    pub config: FfcConfig,
    pub local_to_local: Conv,
    pub local_to_global: Conv,
    pub global_to_local: Conv,
    pub global_to_global: SpectralTransform,
    pub norm_local: BatchNorm,
    pub norm_global: BatchNorm,
}

impl FfcLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: FfcConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (l, g) = (config.local_channels(), config.global_channels());
        let conv3 = |i, o| ConvSpec::conv(3, i, o).pad(1);
        Ok(FfcLayer {
            config,
            local_to_local: Conv::new(store, &format!("{name}.l2l"), conv3(l, l), false, rng),
            local_to_global: Conv::new(store, &format!("{name}.l2g"), conv3(l, g), false, rng),
            global_to_local: Conv::new(store, &format!("{name}.g2l"), conv3(g, l), false, rng),
            global_to_global: SpectralTransform::new(store, &format!("{name}.g2g"), g, g, config.enable_lfu, rng)?,
            norm_local: BatchNorm::new(store, &format!("{name}.bn_l"), l),
            norm_global: BatchNorm::new(store, &format!("{name}.bn_g"), g),
        })
    }

    pub fn forward(&self, s: &mut Session, x_local: Var, x_global: Var) -> Result<(Var, Var)> {
        let ll = self.local_to_local.forward(s, x_local)?;
        let gl = self.global_to_local.forward(s, x_global)?;
        let lg = self.local_to_global.forward(s, x_local)?;
        let gg = self.global_to_global.forward(s, x_global)?;
        let y_local = s.tape.add(ll, gl)?;
        let y_local = self.norm_local.forward(s, y_local)?;
        let y_local = s.tape.relu(y_local)?;
        let y_global = s.tape.add(lg, gg)?;
        let y_global = self.norm_global.forward(s, y_global)?;
        let y_global = s.tape.relu(y_global)?;
        Ok((y_local, y_global))
    }
}

/// Split, two FFC layers, merge, residual add.
#[derive(Clone, Debug)]
pub struct FfcResBlock {
    pub config: FfcConfig,
    pub first: FfcLayer,
    pub second: FfcLayer,
}

impl FfcResBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: FfcConfig, rng: &mut R) -> Result<Self> {
        Ok(FfcResBlock {
            config,
            first: FfcLayer::new(store, &format!("{name}.ffc1"), config, rng)?,
            second: FfcLayer::new(store, &format!("{name}.ffc2"), config, rng)?,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let c = s.tape.shape(x).channels;
        if c != self.config.channels {
            return Err(Error::shape("ffc_res_block", self.config.channels, c));
        }
        let l = self.config.local_channels();
        let x_local = s.tape.narrow_channels(x, 0, l)?;
        let x_global = s.tape.narrow_channels(x, l, c - l)?;
        let (a, b) = self.first.forward(s, x_local, x_global)?;
        let (a, b) = self.second.forward(s, a, b)?;
        let merged = s.tape.concat_channels(a, b)?;
        s.tape.add(x, merged)
    }
}
