//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use dcf_core::ops::conv::ConvSpec;
use dcf_core::{Shape, Tensor};

/// Direct nested-loop cross-correlation with zero padding.
pub fn conv2d_naive(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Tensor {
    let xs = x.shape();
    let (kh, kw) = spec.kernel;
    let p = spec.padding;
    let oh = (xs.height + p.top + p.bottom - kh) / spec.stride + 1;
    let ow = (xs.width + p.left + p.right - kw) / spec.stride + 1;
    let mut out = Tensor::zeros(Shape::new(xs.batch, spec.out_channels, oh, ow));
    for n in 0..xs.batch {
        for o in 0..spec.out_channels {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for i in 0..spec.in_channels {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let sy = (y * spec.stride + ky) as isize - p.top as isize;
                                let sx = (xx * spec.stride + kx) as isize - p.left as isize;
                                if sy >= 0 && sx >= 0 && (sy as usize) < xs.height && (sx as usize) < xs.width {
                                    acc += w.at(o, i, ky, kx) * x.at(n, i, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    out.set(n, o, y, xx, acc);
                }
            }
        }
    }
    out
}

/// Scatter form of the transposed convolution; weight is `(in, out, kh, kw)`.
pub fn conv_transpose2d_naive(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Tensor {
    let xs = x.shape();
    let (kh, kw) = spec.kernel;
    let p = spec.padding;
    let oh = (xs.height - 1) * spec.stride + kh + spec.output_padding - p.top - p.bottom;
    let ow = (xs.width - 1) * spec.stride + kw + spec.output_padding - p.left - p.right;
    let mut out = Tensor::zeros(Shape::new(xs.batch, spec.out_channels, oh, ow));
    for n in 0..xs.batch {
        for o in 0..spec.out_channels {
            for y in 0..oh {
                for xx in 0..ow {
                    out.set(n, o, y, xx, b.map_or(0.0, |b| b.data()[o]));
                }
            }
        }
        for i in 0..spec.in_channels {
            for y in 0..xs.height {
                for xx in 0..xs.width {
                    let v = x.at(n, i, y, xx);
                    for o in 0..spec.out_channels {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let ty = (y * spec.stride + ky) as isize - p.top as isize;
                                let tx = (xx * spec.stride + kx) as isize - p.left as isize;
                                if ty >= 0 && tx >= 0 && (ty as usize) < oh && (tx as usize) < ow {
                                    let (ty, tx) = (ty as usize, tx as usize);
                                    let cur = out.at(n, o, ty, tx);
                                    out.set(n, o, ty, tx, cur + v * w.at(i, o, ky, kx));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn avg_pool2_naive(x: &Tensor) -> Tensor {
    let s = x.shape();
    Tensor::from_fn(s.with_spatial(s.height / 2, s.width / 2), |b, c, y, xx| {
        (x.at(b, c, 2 * y, 2 * xx)
            + x.at(b, c, 2 * y + 1, 2 * xx)
            + x.at(b, c, 2 * y, 2 * xx + 1)
            + x.at(b, c, 2 * y + 1, 2 * xx + 1))
            / 4.0
    })
}

/// `out[b,c,y,x] = Σ T[b, (dy+r)N + (dx+r), y, x] f[b, c, clamp(y+dy), clamp(x+dx)]`.
pub fn filter_naive(f: &Tensor, t: &Tensor) -> Tensor {
    let s = f.shape();
    let n = (t.shape().channels as f64).sqrt().round() as usize;
    let r = (n / 2) as isize;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    Tensor::from_fn(s, |b, c, y, x| {
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let k = ((dy + r) as usize) * n + (dx + r) as usize;
                acc += t.at(b, k, y, x) * f.at(b, c, clamp(y as isize + dy, s.height), clamp(x as isize + dx, s.width));
            }
        }
        acc
    })
}

/// Naive 2-D DFT of one real plane; returns `(re, im)` of the full spectrum.
pub fn dft2_naive(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for k in 0..h {
        for l in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let a = -2.0 * std::f64::consts::PI * ((k * y) as f64 / h as f64 + (l * x) as f64 / w as f64);
                    sr += plane[y * w + x] * a.cos();
                    si += plane[y * w + x] * a.sin();
                }
            }
            re[k * w + l] = sr;
            im[k * w + l] = si;
        }
    }
    (re, im)
}

/// Gram matrix `F Fᵀ / (C H W)` of one item, row-major `C x C`.
pub fn gram_naive(x: &Tensor, b: usize) -> Vec<f64> {
    let s = x.shape();
    let norm = (s.channels * s.height * s.width) as f64;
    let mut g = vec![0.0; s.channels * s.channels];
    for i in 0..s.channels {
        for j in 0..s.channels {
            let mut acc = 0.0;
            for y in 0..s.height {
                for xx in 0..s.width {
                    acc += x.at(b, i, y, xx) * x.at(b, j, y, xx);
                }
            }
            g[i * s.channels + j] = acc / norm;
        }
    }
    g
}

pub fn mean_abs_naive(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64
}

/// SSIM computed window by window, without separable filtering.
pub fn ssim_naive(a: &Tensor, b: &Tensor, peak: f64) -> f64 {
    let s = a.shape();
    let k = 11;
    let sigma: f64 = 1.5;
    let c = 5.0;
    let mut g2 = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            g2[i * k + j] = (-(((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * sigma * sigma))).exp();
        }
    }
    let z: f64 = g2.iter().sum();
    g2.iter_mut().for_each(|v| *v /= z);
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let (mut total, mut count) = (0.0, 0usize);
    for bi in 0..s.batch {
        for ch in 0..s.channels {
            for y in 0..=s.height - k {
                for x in 0..=s.width - k {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..k {
                        for j in 0..k {
                            let g = g2[i * k + j];
                            let (p, q) = (a.at(bi, ch, y + i, x + j), b.at(bi, ch, y + i, x + j));
                            ma += g * p;
                            mb += g * q;
                            saa += g * p * p;
                            sbb += g * q * q;
                            sab += g * p * q;
                        }
                    }
                    let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

/// Dense row-major helpers for the Fréchet oracle.
pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                c[i * n + j] += a[i * n + k] * b[k * n + j];
            }
        }
    }
    c
}

pub fn inverse(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap();
        for j in 0..n {
            m.swap(col * n + j, piv * n + j);
            inv.swap(col * n + j, piv * n + j);
        }
        let d = m[col * n + col];
        for j in 0..n {
            m[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = m[i * n + col];
                for j in 0..n {
                    m[i * n + j] -= f * m[col * n + j];
                    inv[i * n + j] -= f * inv[col * n + j];
                }
            }
        }
    }
    inv
}

/// Square root of a matrix with positive real spectrum by Denman-Beavers
/// iteration.
pub fn sqrtm_denman_beavers(a: &[f64], n: usize) -> Vec<f64> {
    let mut y = a.to_vec();
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i * n + i] = 1.0;
    }
    for _ in 0..100 {
        let yi = inverse(&y, n);
        let zi = inverse(&z, n);
        let ny: Vec<f64> = y.iter().zip(&zi).map(|(p, q)| 0.5 * (p + q)).collect();
        let nz: Vec<f64> = z.iter().zip(&yi).map(|(p, q)| 0.5 * (p + q)).collect();
        let delta = ny.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        y = ny;
        z = nz;
        if delta < 1e-15 {
            break;
        }
    }
    y
}

/// Fréchet distance via `Tr sqrt(Σa Σb)` computed without eigenvalues.
pub fn frechet_naive(mu_a: &[f64], cov_a: &[f64], mu_b: &[f64], cov_b: &[f64]) -> f64 {
    let n = mu_a.len();
    let prod = matmul(cov_a, cov_b, n);
    let s = sqrtm_denman_beavers(&prod, n);
    let tr = |m: &[f64]| (0..n).map(|i| m[i * n + i]).sum::<f64>();
    let d2: f64 = mu_a.iter().zip(mu_b).map(|(a, b)| (a - b).powi(2)).sum();
    d2 + tr(cov_a) + tr(cov_b) - 2.0 * tr(&s)
}

/// Random symmetric positive definite matrix `A Aᵀ + eps I`.
pub fn random_spd<R: rand::Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum::<f64>();
        }
        m[i * n + i] += 0.1;
    }
    m
}

pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
