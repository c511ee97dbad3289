//! Batch normalization over (batch, height, width) per channel.

use crate::error::Result;
use crate::tensor::{Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Values saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub training: bool,
}

/// Per-channel batch statistics `(mean, biased variance)`.
pub fn batch_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let count = (s.batch * s.plane()) as f64;
    let mut mean = vec![0.0; s.channels];
    let mut var = vec![0.0; s.channels];
    for (i, chunk) in x.data().chunks(s.plane()).enumerate() {
        mean[i % s.channels] += chunk.iter().sum::<f64>();
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for (i, chunk) in x.data().chunks(s.plane()).enumerate() {
        let m = mean[i % s.channels];
        var[i % s.channels] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

/// Normalizes `x` with either batch statistics (`training`) or the given
/// running statistics. In training mode the running statistics are updated
/// in place with the unbiased batch variance.
pub fn batch_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    training: bool,
) -> Result<(Tensor, BnCache)> {
    let s = x.shape();
    let param = Shape::new(1, s.channels, 1, 1);
    gamma.expect_shape("batch_norm gamma", param)?;
    beta.expect_shape("batch_norm beta", param)?;
    running_mean.expect_shape("batch_norm running_mean", param)?;
    running_var.expect_shape("batch_norm running_var", param)?;

    let (mean, inv_std) = if training {
        let (mean, var) = batch_stats(x);
        let count = (s.batch * s.plane()) as f64;
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        for c in 0..s.channels {
            let rm = &mut running_mean.data_mut()[c];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[c];
            let rv = &mut running_var.data_mut()[c];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var[c] * unbias;
        }
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        (mean, inv)
    } else {
        let mean = running_mean.data().to_vec();
        let inv = running_var.data().iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        (mean, inv)
    };

    let mut xhat = x.clone();
    let mut y = x.clone();
    let plane = s.plane();
    for (i, (xh, yy)) in xhat
        .data_mut()
        .chunks_mut(plane)
        .zip(y.data_mut().chunks_mut(plane))
        .enumerate()
    {
        let c = i % s.channels;
        let (m, is, g, b) = (mean[c], inv_std[c], gamma.data()[c], beta.data()[c]);
        for (h, o) in xh.iter_mut().zip(yy.iter_mut()) {
            *h = (*h - m) * is;
            *o = g * *h + b;
        }
    }
    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            training,
        },
    ))
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batch_norm_backward(cache: &BnCache, gamma: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let s = grad_out.shape();
    let plane = s.plane();
    let count = (s.batch * plane) as f64;
    let mut sum_dy = vec![0.0; s.channels];
    let mut sum_dy_xhat = vec![0.0; s.channels];
    for (i, (g, h)) in grad_out
        .data()
        .chunks(plane)
        .zip(cache.xhat.data().chunks(plane))
        .enumerate()
    {
        let c = i % s.channels;
        sum_dy[c] += g.iter().sum::<f64>();
        sum_dy_xhat[c] += g.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
    }
    let mut gx = grad_out.clone();
    for (i, (gxc, h)) in gx
        .data_mut()
        .chunks_mut(plane)
        .zip(cache.xhat.data().chunks(plane))
        .enumerate()
    {
        let c = i % s.channels;
        let scale = gamma.data()[c] * cache.inv_std[c];
        if cache.training {
            let (sd, sdh) = (sum_dy[c] / count, sum_dy_xhat[c] / count);
            for (g, hv) in gxc.iter_mut().zip(h) {
                *g = scale * (*g - sd - hv * sdh);
            }
        } else {
            gxc.iter_mut().for_each(|g| *g *= scale);
        }
    }
    let param = Shape::new(1, s.channels, 1, 1);
    (
        gx,
        Tensor::from_vec(param, sum_dy_xhat).expect("channel-sized"),
        Tensor::from_vec(param, sum_dy).expect("channel-sized"),
    )
}
