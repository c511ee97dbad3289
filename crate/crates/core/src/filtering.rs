//! Per-pixel predictive filtering.
//!
//! Every output location `r` is a weighted sum of its `N x N` neighbours,
//! with a weight vector predicted for that location:
//! `out[b, c, r] = sum_s T[b, s - r, r] * f[b, c, s]`. One kernel is shared
//! by all channels at a location. Neighbours outside the map are clamped to
//! the nearest edge pixel, so normalized kernels preserve constants
//! everywhere.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Neighbourhood side used by the network's filtering site.
pub const DEFAULT_NEIGHBORHOOD: usize = 3;

/// Per-pixel kernels of shape `(batch, N*N, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelField {
    weights: Tensor,
    n: usize,
    normalized: bool,
}

impl KernelField {
    /// Wraps raw weights (or logits). `N` is inferred from the channel count.
    pub fn new(weights: Tensor) -> Result<Self> {
        let n = neighborhood_side(weights.shape().channels)?;
        Ok(KernelField {
            weights,
            n,
            normalized: false,
        })
    }

    /// A field that copies each pixel through unchanged.
    pub fn identity(batch: usize, n: usize, height: usize, width: usize) -> Result<Self> {
        if n.is_multiple_of(2) || n == 0 {
            return Err(Error::invalid(format!("neighborhood side must be odd, got {n}")));
        }
        let center = n * n / 2;
        let weights = Tensor::from_fn(Shape::new(batch, n * n, height, width), |_, k, _, _| {
            if k == center {
                1.0
            } else {
                0.0
            }
        });
        Ok(KernelField {
            weights,
            n,
            normalized: true,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn into_weights(self) -> Tensor {
        self.weights
    }

    /// Sum of the kernel at each location, as a `(batch, 1, h, w)` tensor.
    pub fn kernel_sums(&self) -> Tensor {
        let s = self.weights.shape();
        Tensor::from_fn(s.with_channels(1), |b, _, y, x| {
            (0..s.channels).map(|k| self.weights.at(b, k, y, x)).sum()
        })
    }
}

pub(crate) fn neighborhood_side(channels: usize) -> Result<usize> {
    let n = (channels as f64).sqrt().round() as usize;
    if n * n != channels || n.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "kernel field needs N*N channels with N odd, got {channels}"
        )));
    }
    Ok(n)
}

/// Softmax over the kernel axis at every location.
pub fn softmax_channels(x: &Tensor) -> Tensor {
    let s = x.shape();
    let mut out = x.clone();
    let plane = s.plane();
    for b in 0..s.batch {
        let item = out.item_mut(b);
        for p in 0..plane {
            let max = (0..s.channels)
                .map(|k| item[k * plane + p])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..s.channels {
                let e = (item[k * plane + p] - max).exp();
                item[k * plane + p] = e;
                total += e;
            }
            for k in 0..s.channels {
                item[k * plane + p] /= total;
            }
        }
    }
    out
}

/// Vector-Jacobian product of [`softmax_channels`] given its output.
pub fn softmax_channels_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let s = y.shape();
    let plane = s.plane();
    let mut g = grad_out.clone();
    for b in 0..s.batch {
        let yi = y.item(b);
        let gi = g.item_mut(b);
        for p in 0..plane {
            let dot: f64 = (0..s.channels).map(|k| yi[k * plane + p] * gi[k * plane + p]).sum();
            for k in 0..s.channels {
                gi[k * plane + p] = yi[k * plane + p] * (gi[k * plane + p] - dot);
            }
        }
    }
    g
}

/// Softmax-normalizes raw logits into a partition of unity per location.
pub fn normalize_kernels(raw: &KernelField) -> KernelField {
    KernelField {
        weights: softmax_channels(&raw.weights),
        n: raw.n,
        normalized: true,
    }
}

fn check_pair(op: &'static str, f: Shape, t: Shape) -> Result<usize> {
    let n = neighborhood_side(t.channels)?;
    if f.batch != t.batch || f.height != t.height || f.width != t.width {
        return Err(Error::shape(
            op,
            format!("features matching kernel field {t} in batch and space"),
            f,
        ));
    }
    Ok(n)
}

#[inline]
fn clamp(v: isize, hi: usize) -> usize {
    v.clamp(0, hi as isize - 1) as usize
}

/// Applies raw per-pixel weights `t` (shape `(B, N*N, h, w)`) to `f`.
pub(crate) fn filter_forward(f: &Tensor, t: &Tensor) -> Result<Tensor> {
    let (fs, ts) = (f.shape(), t.shape());
    let n = check_pair("apply_filter", fs, ts)?;
    let r = (n / 2) as isize;
    let (h, w) = (fs.height, fs.width);
    let mut out = Tensor::zeros(fs);
    for b in 0..fs.batch {
        let tb = t.item(b);
        let fb = f.item(b);
        let ob = out.item_mut(b);
        for k in 0..n * n {
            let dy = (k / n) as isize - r;
            let dx = (k % n) as isize - r;
            let tk = &tb[k * h * w..(k + 1) * h * w];
            for c in 0..fs.channels {
                let fp = &fb[c * h * w..(c + 1) * h * w];
                let op = &mut ob[c * h * w..(c + 1) * h * w];
                for y in 0..h {
                    let sy = clamp(y as isize + dy, h);
                    for x in 0..w {
                        let sx = clamp(x as isize + dx, w);
                        op[y * w + x] += tk[y * w + x] * fp[sy * w + sx];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_f, grad_t)` for [`filter_forward`].
pub(crate) fn filter_backward(grad_out: &Tensor, f: &Tensor, t: &Tensor) -> Result<(Tensor, Tensor)> {
    let (fs, ts) = (f.shape(), t.shape());
    let n = check_pair("apply_filter_backward", fs, ts)?;
    grad_out.expect_shape("apply_filter_backward", fs)?;
    let r = (n / 2) as isize;
    let (h, w) = (fs.height, fs.width);
    let mut gf = Tensor::zeros(fs);
    let mut gt = Tensor::zeros(ts);
    for b in 0..fs.batch {
        let tb = t.item(b);
        let fb = f.item(b);
        let gb = grad_out.item(b);
        let gfb = gf.item_mut(b);
        let gtb_all: Vec<f64> = {
            let mut acc = vec![0.0; n * n * h * w];
            for k in 0..n * n {
                let dy = (k / n) as isize - r;
                let dx = (k % n) as isize - r;
                let tk = &tb[k * h * w..(k + 1) * h * w];
                let gtk = &mut acc[k * h * w..(k + 1) * h * w];
                for c in 0..fs.channels {
                    let fp = &fb[c * h * w..(c + 1) * h * w];
                    let gp = &gb[c * h * w..(c + 1) * h * w];
                    let gfp = &mut gfb[c * h * w..(c + 1) * h * w];
                    for y in 0..h {
                        let sy = clamp(y as isize + dy, h);
                        for x in 0..w {
                            let sx = clamp(x as isize + dx, w);
                            let g = gp[y * w + x];
                            gtk[y * w + x] += g * fp[sy * w + sx];
                            gfp[sy * w + sx] += g * tk[y * w + x];
                        }
                    }
                }
            }
            acc
        };
        gt.item_mut(b).copy_from_slice(&gtb_all);
    }
    Ok((gf, gt))
}

/// Filters `f` with a normalized kernel field.
pub fn apply_filter(f: &Tensor, kernels: &KernelField) -> Result<Tensor> {
    if !kernels.normalized {
        return Err(Error::invalid("apply_filter needs a normalized kernel field"));
    }
    filter_forward(f, &kernels.weights)
}

/// Gradients of `<cotangent, apply_filter(f, T)>` with respect to `f` and `T`.
pub fn apply_filter_backward(cotangent: &Tensor, f: &Tensor, kernels: &KernelField) -> Result<(Tensor, Tensor)> {
    filter_backward(cotangent, f, &kernels.weights)
}
