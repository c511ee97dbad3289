//! Training configuration and its flat `key=value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::DcfConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    Center,
    Irregular,
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(MaskMode::Center),
            "irregular" => Ok(MaskMode::Irregular),
            _ => Err(Error::invalid(format!(
                "mask mode must be center or irregular, got {s:?}"
            ))),
        }
    }
}

impl MaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskMode::Center => "center",
            MaskMode::Irregular => "irregular",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub resolution: usize,
    pub batch_size: usize,
    pub iterations: u64,
    pub learning_rate: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub mask_mode: MaskMode,
    pub adversarial: bool,
    /// Iterations between checkpoints; 0 disables them.
    pub checkpoint_interval: u64,
    /// Global gradient-norm clip for the generator.
    pub grad_clip: Option<f64>,
    pub image_level_filter: bool,
    pub enable_lfu: bool,
    pub ffc_blocks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

/// `(key, description)` for every accepted configuration key.
pub const CONFIG_KEYS: [(&str, &str); 15] = [
    ("preset", "desk | paper; applied before any other key"),
    ("resolution", "square training size, power of two (desk 64, paper 256)"),
    ("batch_size", "images per step (desk 4, paper 8)"),
    ("iterations", "optimizer steps (desk 2000, paper 500000)"),
    ("learning_rate", "Adam step size (1e-4)"),
    ("seed", "seed for initialization, batches and masks (0)"),
    ("lambda_l1", "L1 weight (1)"),
    ("lambda_adv", "adversarial weight (0.1)"),
    ("lambda_perceptual", "perceptual weight (0.1)"),
    ("lambda_style", "style weight (250)"),
    ("mask_mode", "center | irregular (irregular)"),
    ("adversarial", "train the patch discriminator: true | false (true)"),
    (
        "checkpoint_interval",
        "steps between checkpoints, 0 = only at the end (0)",
    ),
    ("grad_clip", "global gradient norm clip, or none (none)"),
    (
        "model",
        "comma list of model switches: image_filter, no_lfu, ffc_blocks=N",
    ),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(format!(
            "invalid value {value:?} for {key}, expected true or false"
        ))),
    }
}

impl TrainConfig {
    /// Desktop-sized defaults.
    pub fn desk() -> Self {
        TrainConfig {
            resolution: 64,
            batch_size: 4,
            iterations: 2000,
            learning_rate: 1e-4,
            seed: 0,
            weights: LossWeights::default(),
            mask_mode: MaskMode::Irregular,
            adversarial: true,
            checkpoint_interval: 0,
            grad_clip: None,
            image_level_filter: false,
            enable_lfu: true,
            ffc_blocks: 6,
        }
    }

    /// Full-size training schedule. Runs, but slowly.
    pub fn paper() -> Self {
        TrainConfig {
            resolution: 256,
            batch_size: 8,
            iterations: 500_000,
            ..TrainConfig::desk()
        }
    }

    pub fn model(&self) -> DcfConfig {
        DcfConfig {
            resolution: self.resolution,
            image_level_filter: self.image_level_filter,
            enable_lfu: self.enable_lfu,
            ffc_blocks: self.ffc_blocks,
            ..DcfConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid(format!("gradient clip must be positive, got {c}")));
            }
        }
        if self.adversarial && self.resolution < 16 {
            return Err(Error::invalid(
                "the patch discriminator needs a resolution of at least 16",
            ));
        }
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "preset" => {
                *self = match value {
                    "desk" => TrainConfig::desk(),
                    "paper" => TrainConfig::paper(),
                    _ => return Err(Error::invalid(format!("unknown preset {value:?}"))),
                }
            }
            "resolution" => self.resolution = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "lambda_l1" => self.weights.l1 = parse(key, value)?,
            "lambda_adv" => self.weights.adversarial = parse(key, value)?,
            "lambda_perceptual" => self.weights.perceptual = parse(key, value)?,
            "lambda_style" => self.weights.style = parse(key, value)?,
            "mask_mode" => self.mask_mode = value.parse()?,
            "adversarial" => self.adversarial = parse_bool(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, value)?,
            "grad_clip" => {
                self.grad_clip = match value {
                    "none" | "off" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "model" => {
                self.image_level_filter = false;
                self.enable_lfu = true;
                self.ffc_blocks = 6;
                for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    match item.split_once('=') {
                        None if item == "image_filter" => self.image_level_filter = true,
                        None if item == "no_lfu" => self.enable_lfu = false,
                        Some(("ffc_blocks", n)) => self.ffc_blocks = parse("ffc_blocks", n)?,
                        _ => return Err(Error::invalid(format!("unknown model switch {item:?}"))),
                    }
                }
            }
            _ => return Err(Error::invalid(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines over the desk defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = TrainConfig::desk();
        let mut lines: Vec<(usize, &str, &str)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key=value, got {raw:?}", n + 1)))?;
            lines.push((n + 1, k.trim(), v.trim()));
        }
        // A preset resets everything, so it goes first wherever it appears.
        lines.sort_by_key(|&(_, k, _)| k != "preset");
        for (n, k, v) in lines {
            config.set(k, v).map_err(|e| Error::invalid(format!("line {n}: {e}")))?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Round-trips through [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &self.weights;
        let mut model = Vec::new();
        if self.image_level_filter {
            model.push("image_filter".to_string());
        }
        if !self.enable_lfu {
            model.push("no_lfu".to_string());
        }
        model.push(format!("ffc_blocks={}", self.ffc_blocks));
        let clip = self.grad_clip.map_or("none".to_string(), |c| format!("{c:?}"));
        let _ = write!(
            s,
            "resolution={}\nbatch_size={}\niterations={}\nlearning_rate={:?}\nseed={}\n\
             lambda_l1={:?}\nlambda_adv={:?}\nlambda_perceptual={:?}\nlambda_style={:?}\n\
             mask_mode={}\nadversarial={}\ncheckpoint_interval={}\ngrad_clip={}\nmodel={}\n",
            self.resolution,
            self.batch_size,
            self.iterations,
            self.learning_rate,
            self.seed,
            w.l1,
            w.adversarial,
            w.perceptual,
            w.style,
            self.mask_mode.as_str(),
            self.adversarial,
            self.checkpoint_interval,
            clip,
            model.join(","),
        );
        s
    }
}
