//! Image quality metrics: PSNR, SSIM and a Fréchet feature distance over the
//! fixed extractor.
//!
//! The Fréchet score uses the randomly initialized extractor from
//! [`crate::losses`], not an Inception network. It is comparable between
//! runs of this crate only, never with published FID values.

use std::fmt;

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, Matrix};
use crate::losses::FeatureExtractor;
use crate::tensor::{Shape, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    /// Zero error.
    Identical,
}

impl Psnr {
    /// Decibels, with `Identical` mapped to `+inf`.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Db(v) => v,
            Psnr::Identical => f64::INFINITY,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.4}"),
            Psnr::Identical => f.write_str("identical"),
        }
    }
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> Psnr {
    if mse == 0.0 {
        Psnr::Identical
    } else {
        Psnr::Db(10.0 * (peak * peak / mse).log10())
    }
}

pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<Psnr> {
    a.expect_shape("psnr", b.shape())?;
    if a.numel() == 0 {
        return Err(Error::invalid("psnr of empty tensors"));
    }
    let se: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum();
    Ok(psnr_from_mse(se / a.numel() as f64, peak))
}

/// PSNR over the pixels where `mask` (`(B, 1, H, W)`) is zero, i.e. the holes.
pub fn psnr_holes(a: &Tensor, b: &Tensor, mask: &Tensor, peak: f64) -> Result<Psnr> {
    a.expect_shape("psnr_holes", b.shape())?;
    let s = a.shape();
    mask.expect_shape("psnr_holes mask", s.with_channels(1))?;
    let (mut se, mut n) = (0.0, 0usize);
    for bi in 0..s.batch {
        for c in 0..s.channels {
            for y in 0..s.height {
                for x in 0..s.width {
                    if mask.at(bi, 0, y, x) == 0.0 {
                        se += (a.at(bi, c, y, x) - b.at(bi, c, y, x)).powi(2);
                        n += 1;
                    }
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("mask has no holes"));
    }
    Ok(psnr_from_mse(se / n as f64, peak))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of one plane.
fn blur_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// SSIM map per `(batch, channel)` over every position where the window
/// fits. Returns maps of `(H-10) x (W-10)` in row-major order.
pub fn ssim_maps(a: &Tensor, b: &Tensor, peak: f64) -> Result<Vec<Vec<f64>>> {
    a.expect_shape("ssim", b.shape())?;
    let s = a.shape();
    if s.height < SSIM_WINDOW || s.width < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {}x{}",
            s.height, s.width
        )));
    }
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let plane = s.plane();
    let mut maps = Vec::with_capacity(s.batch * s.channels);
    for i in 0..s.batch * s.channels {
        let pa = &a.data()[i * plane..(i + 1) * plane];
        let pb = &b.data()[i * plane..(i + 1) * plane];
        let prod = |f: &dyn Fn(f64, f64) -> f64| pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
        let mu_a = blur_valid(pa, s.height, s.width, &g);
        let mu_b = blur_valid(pb, s.height, s.width, &g);
        let aa = blur_valid(&prod(&|x, _| x * x), s.height, s.width, &g);
        let bb = blur_valid(&prod(&|_, y| y * y), s.height, s.width, &g);
        let ab = blur_valid(&prod(&|x, y| x * y), s.height, s.width, &g);
        let map = (0..mu_a.len())
            .map(|j| {
                let (ma, mb) = (mu_a[j], mu_b[j]);
                let va = aa[j] - ma * ma;
                let vb = bb[j] - mb * mb;
                let cov = ab[j] - ma * mb;
                ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
            })
            .collect();
        maps.push(map);
    }
    Ok(maps)
}

/// Mean SSIM over batch, channels and window positions.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    let maps = ssim_maps(a, b, peak)?;
    let n: usize = maps.iter().map(Vec::len).sum();
    Ok(maps.iter().flatten().sum::<f64>() / n as f64)
}

/// Mean SSIM over window positions whose center pixel is a hole.
pub fn ssim_holes(a: &Tensor, b: &Tensor, mask: &Tensor, peak: f64) -> Result<f64> {
    let s = a.shape();
    mask.expect_shape("ssim_holes mask", s.with_channels(1))?;
    let maps = ssim_maps(a, b, peak)?;
    let half = SSIM_WINDOW / 2;
    let ow = s.width - SSIM_WINDOW + 1;
    let (mut total, mut n) = (0.0, 0usize);
    for (i, map) in maps.iter().enumerate() {
        let bi = i / s.channels;
        for (j, v) in map.iter().enumerate() {
            let (y, x) = (j / ow + half, j % ow + half);
            if mask.at(bi, 0, y, x) == 0.0 {
                total += v;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("no hole pixel lies at a full window position"));
    }
    Ok(total / n as f64)
}

/// Mean and covariance of a feature sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    pub n: usize,
}

impl GaussianStats {
    /// Sample mean and unbiased covariance of the rows of `samples`.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::invalid(format!("covariance needs at least 2 samples, got {n}")));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::invalid("feature samples differ in dimension"));
        }
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = Matrix::zeros(d);
        for s in samples {
            for i in 0..d {
                let di = s[i] - mean[i];
                for j in 0..d {
                    cov.set(i, j, cov.get(i, j) + di * (s[j] - mean[j]));
                }
            }
        }
        let cov = Matrix::from_vec(d, cov.data().iter().map(|v| v / (n - 1) as f64).collect())?;
        Ok(GaussianStats { mean, cov, n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.cov.n() != self.mean.len() {
            return Err(Error::shape("gaussian_stats", self.mean.len(), self.cov.n()));
        }
        let asym = self.cov.asymmetry();
        if asym > 1e-10 {
            return Err(Error::invalid(format!(
                "covariance of {name} is not symmetric (relative asymmetry {asym:e})"
            )));
        }
        Ok(())
    }
}

/// `|μa − μb|² + Tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`, clamped at zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    a.validate("first argument")?;
    b.validate("second argument")?;
    if a.dim() != b.dim() {
        return Err(Error::shape("frechet_distance", a.dim(), b.dim()));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let sa = psd_sqrt(&a.cov);
    let inner = sa.matmul(&b.cov).matmul(&sa);
    let cross = psd_sqrt(&inner).trace();
    let d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Spatially averaged deepest extractor features, one row per image.
pub fn pooled_features(images: &Tensor, extractor: &mut FeatureExtractor) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::inference();
    let x = tape.constant(images.clone());
    let feats = extractor.features(&mut tape, x)?;
    let deepest = tape.value(*feats.last().expect("extractor has stages"));
    let s: Shape = deepest.shape();
    let plane = s.plane();
    Ok((0..s.batch)
        .map(|b| {
            (0..s.channels)
                .map(|c| {
                    let start = (b * s.channels + c) * plane;
                    deepest.data()[start..start + plane].iter().sum::<f64>() / plane as f64
                })
                .collect()
        })
        .collect())
}

pub fn fit_feature_stats(images: &Tensor, extractor: &mut FeatureExtractor) -> Result<GaussianStats> {
    GaussianStats::fit(&pooled_features(images, extractor)?)
}
