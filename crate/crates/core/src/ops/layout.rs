//! Channel and spatial rearrangements used by the FFC blocks and losses.

use crate::error::{Error, Result};
use crate::ops::gemm;
use crate::tensor::{Shape, Tensor};

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.batch != sb.batch || sa.height != sb.height || sa.width != sb.width {
        return Err(Error::shape("concat_channels", sa, sb));
    }
    let out_shape = sa.with_channels(sa.channels + sb.channels);
    let mut data = Vec::with_capacity(out_shape.numel());
    for i in 0..sa.batch {
        data.extend_from_slice(a.item(i));
        data.extend_from_slice(b.item(i));
    }
    Tensor::from_vec(out_shape, data)
}

/// Channels `start .. start + len`.
pub fn narrow_channels(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let s = x.shape();
    if start + len > s.channels || len == 0 {
        return Err(Error::invalid(format!(
            "channel range {start}..{} out of {} channels",
            start + len,
            s.channels
        )));
    }
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.batch * len * plane);
    for i in 0..s.batch {
        data.extend_from_slice(&x.item(i)[start * plane..(start + len) * plane]);
    }
    Tensor::from_vec(s.with_channels(len), data)
}

/// Scatters a gradient for a channel slice back into the full shape.
pub fn narrow_channels_backward(full: Shape, start: usize, grad: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(full);
    let plane = full.plane();
    let len = grad.shape().channels;
    for i in 0..full.batch {
        out.item_mut(i)[start * plane..(start + len) * plane].copy_from_slice(grad.item(i));
    }
    out
}

/// Splits each map into its 2x2 quadrants and stacks them along channels in
/// the order top-left, bottom-left, top-right, bottom-right.
pub fn quadrant_stack(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if !s.height.is_multiple_of(2) || !s.width.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "quadrant split needs even spatial dims, got {}x{}",
            s.height, s.width
        )));
    }
    let (h, w) = (s.height / 2, s.width / 2);
    Ok(Tensor::from_fn(
        Shape::new(s.batch, 4 * s.channels, h, w),
        |b, c, y, q| {
            let quad = c / s.channels;
            let src = c % s.channels;
            let (oy, ox) = match quad {
                0 => (0, 0),
                1 => (h, 0),
                2 => (0, w),
                _ => (h, w),
            };
            x.at(b, src, y + oy, q + ox)
        },
    ))
}

pub fn quadrant_stack_backward(input: Shape, grad: &Tensor) -> Tensor {
    let (h, w) = (input.height / 2, input.width / 2);
    Tensor::from_fn(input, |b, c, y, q| {
        let quad = match (y >= h, q >= w) {
            (false, false) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (true, true) => 3,
        };
        grad.at(b, quad * input.channels + c, y % h, q % w)
    })
}

/// Repeats each map 2x2 times: `(B, C, h, w) -> (B, C, 2h, 2w)`.
pub fn tile2(x: &Tensor) -> Tensor {
    let s = x.shape();
    Tensor::from_fn(s.with_spatial(2 * s.height, 2 * s.width), |b, c, y, q| {
        x.at(b, c, y % s.height, q % s.width)
    })
}

pub fn tile2_backward(input: Shape, grad: &Tensor) -> Tensor {
    let (h, w) = (input.height, input.width);
    Tensor::from_fn(input, |b, c, y, q| {
        grad.at(b, c, y, q) + grad.at(b, c, y + h, q) + grad.at(b, c, y, q + w) + grad.at(b, c, y + h, q + w)
    })
}

/// Normalized Gram matrices `F F^T / (C H W)` per batch item, returned as
/// `(B, 1, C, C)`.
pub fn gram(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (c, n) = (s.channels, s.plane());
    let norm = 1.0 / (c * n) as f64;
    let mut out = Tensor::zeros(Shape::new(s.batch, 1, c, c));
    for b in 0..s.batch {
        gemm(c, n, c, x.item(b), false, x.item(b), true, 0.0, out.item_mut(b));
        out.item_mut(b).iter_mut().for_each(|v| *v *= norm);
    }
    out
}

/// `dF = (dG + dG^T) F / (C H W)`.
pub fn gram_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    let s = x.shape();
    let (c, n) = (s.channels, s.plane());
    let norm = 1.0 / (c * n) as f64;
    let mut out = Tensor::zeros(s);
    for b in 0..s.batch {
        let g = grad.item(b);
        let sym: Vec<f64> = (0..c * c)
            .map(|idx| (g[idx] + g[(idx % c) * c + idx / c]) * norm)
            .collect();
        gemm(c, c, n, &sym, false, x.item(b), false, 0.0, out.item_mut(b));
    }
    out
}
