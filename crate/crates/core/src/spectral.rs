//! Radix-2 real 2-D FFT over the two spatial axes, with exact adjoints.
//!
//! Convention: the forward transform is unnormalized and the inverse carries
//! the full `1/(H*W)` factor, so `irfft2(rfft2(x)) == x`. Only the
//! non-redundant half of the last axis is stored (`W/2 + 1` bins).

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Half spectrum of a batch of real planes; bins are interleaved `(re, im)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumTensor {
    batch: usize,
    channels: usize,
    height: usize,
    signal_width: usize,
    data: Vec<f64>,
}

impl SpectrumTensor {
    pub fn zeros(batch: usize, channels: usize, height: usize, signal_width: usize) -> Self {
        let wh = signal_width / 2 + 1;
        SpectrumTensor {
            batch,
            channels,
            height,
            signal_width,
            data: vec![0.0; 2 * batch * channels * height * wh],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Width of the real signal this spectrum describes.
    pub fn signal_width(&self) -> usize {
        self.signal_width
    }

    /// Number of stored bins along the last axis, `floor(W/2) + 1`.
    pub fn width_half(&self) -> usize {
        self.signal_width / 2 + 1
    }

    /// Interleaved `(re, im)` storage in `(batch, channels, height, width_half)` order.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn bin_index(&self, b: usize, c: usize, k: usize, l: usize) -> usize {
        2 * (((b * self.channels + c) * self.height + k) * self.width_half() + l)
    }

    pub fn get(&self, b: usize, c: usize, k: usize, l: usize) -> (f64, f64) {
        let i = self.bin_index(b, c, k, l);
        (self.data[i], self.data[i + 1])
    }

    pub fn set(&mut self, b: usize, c: usize, k: usize, l: usize, value: (f64, f64)) {
        let i = self.bin_index(b, c, k, l);
        self.data[i] = value.0;
        self.data[i + 1] = value.1;
    }

    /// Multiplicity of column `l` in the full spectrum: bins other than the
    /// DC and Nyquist columns stand for themselves and their mirror image.
    pub fn hermitian_weight(&self, l: usize) -> f64 {
        hermitian_weight(self.signal_width, l)
    }

    fn plane_len(&self) -> usize {
        2 * self.height * self.width_half()
    }
}

pub(crate) fn hermitian_weight(width: usize, l: usize) -> f64 {
    if l == 0 || (width.is_multiple_of(2) && l == width / 2) {
        1.0
    } else {
        2.0
    }
}

fn check_pow2(op: &'static str, height: usize, width: usize) -> Result<()> {
    if height.is_power_of_two() && width.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::NotPowerOfTwo { op, height, width })
    }
}

/// In-place iterative radix-2 FFT; `inverse` flips the exponent sign but
/// does not normalize.
fn fft(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = sign * 2.0 * PI / len as f64;
        for j in 0..half {
            let (ws, wc) = (step * j as f64).sin_cos();
            let mut start = j;
            while start < n {
                let k = start + half;
                let tr = wc * re[k] - ws * im[k];
                let ti = wc * im[k] + ws * re[k];
                re[k] = re[start] - tr;
                im[k] = im[start] - ti;
                re[start] += tr;
                im[start] += ti;
                start += len;
            }
        }
        len <<= 1;
    }
}

/// Transforms every stored column (length `h`) of a half-spectrum plane.
fn columns(plane: &mut [f64], h: usize, wh: usize, inverse: bool) {
    let mut re = vec![0.0; h];
    let mut im = vec![0.0; h];
    for l in 0..wh {
        for k in 0..h {
            re[k] = plane[2 * (k * wh + l)];
            im[k] = plane[2 * (k * wh + l) + 1];
        }
        fft(&mut re, &mut im, inverse);
        for k in 0..h {
            plane[2 * (k * wh + l)] = re[k];
            plane[2 * (k * wh + l) + 1] = im[k];
        }
    }
}

fn rfft2_plane(x: &[f64], h: usize, w: usize, out: &mut [f64]) {
    let wh = w / 2 + 1;
    let mut re = vec![0.0; w];
    let mut im = vec![0.0; w];
    for y in 0..h {
        re.copy_from_slice(&x[y * w..(y + 1) * w]);
        im.iter_mut().for_each(|v| *v = 0.0);
        fft(&mut re, &mut im, false);
        for l in 0..wh {
            out[2 * (y * wh + l)] = re[l];
            out[2 * (y * wh + l) + 1] = im[l];
        }
    }
    columns(out, h, wh, false);
}

/// Unnormalized inverse along rows, reading only the stored half.
/// `hermitian` extends with mirrored conjugates (true inverse); otherwise
/// the missing bins are taken as zero (the adjoint of the forward).
fn row_synthesis(plane: &[f64], h: usize, w: usize, hermitian: bool, out: &mut [f64]) {
    let wh = w / 2 + 1;
    let mut re = vec![0.0; w];
    let mut im = vec![0.0; w];
    for y in 0..h {
        re.iter_mut().for_each(|v| *v = 0.0);
        im.iter_mut().for_each(|v| *v = 0.0);
        for l in 0..wh.min(w) {
            re[l] = plane[2 * (y * wh + l)];
            im[l] = plane[2 * (y * wh + l) + 1];
        }
        if hermitian {
            im[0] = 0.0;
            if w.is_multiple_of(2) && w > 1 {
                im[w / 2] = 0.0;
            }
            for l in wh..w {
                re[l] = re[w - l];
                im[l] = -im[w - l];
            }
        }
        fft(&mut re, &mut im, true);
        out[y * w..(y + 1) * w].copy_from_slice(&re);
    }
}

/// Unnormalized forward real 2-D transform of every `(b, c)` plane.
pub fn rfft2(x: &Tensor) -> Result<SpectrumTensor> {
    let s = x.shape();
    check_pow2("rfft2", s.height, s.width)?;
    let mut spec = SpectrumTensor::zeros(s.batch, s.channels, s.height, s.width);
    let pl = spec.plane_len();
    for (src, dst) in x.data().chunks(s.plane()).zip(spec.data.chunks_mut(pl)) {
        rfft2_plane(src, s.height, s.width, dst);
    }
    Ok(spec)
}

/// Normalized inverse of [`rfft2`]. Imaginary parts of the self-conjugate
/// DC/Nyquist columns are ignored after the column transform.
pub fn irfft2(spec: &SpectrumTensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    check_pow2("irfft2", out_h, out_w)?;
    if out_h != spec.height || out_w / 2 + 1 != spec.width_half() {
        return Err(Error::shape(
            "irfft2",
            format!("spectrum for {}x{}", spec.height, spec.signal_width),
            format!("requested {out_h}x{out_w}"),
        ));
    }
    let shape = Shape::new(spec.batch, spec.channels, out_h, out_w);
    let mut out = Tensor::zeros(shape);
    let norm = 1.0 / (out_h * out_w) as f64;
    let wh = spec.width_half();
    let mut plane = vec![0.0; spec.plane_len()];
    for (src, dst) in spec
        .data
        .chunks(spec.plane_len())
        .zip(out.data_mut().chunks_mut(out_h * out_w))
    {
        plane.copy_from_slice(src);
        columns(&mut plane, out_h, wh, true);
        row_synthesis(&plane, out_h, out_w, true, dst);
        dst.iter_mut().for_each(|v| *v *= norm);
    }
    Ok(out)
}

/// Adjoint of [`rfft2`] under the real inner product on `(re, im)` pairs:
/// `<rfft2(x), y> == <x, rfft2_backward(y)>`.
pub fn rfft2_backward(cotangent: &SpectrumTensor) -> Result<Tensor> {
    let (h, w) = (cotangent.height, cotangent.signal_width);
    check_pow2("rfft2_backward", h, w)?;
    let shape = Shape::new(cotangent.batch, cotangent.channels, h, w);
    let mut out = Tensor::zeros(shape);
    let mut plane = vec![0.0; cotangent.plane_len()];
    for (src, dst) in cotangent
        .data
        .chunks(cotangent.plane_len())
        .zip(out.data_mut().chunks_mut(h * w))
    {
        plane.copy_from_slice(src);
        columns(&mut plane, h, cotangent.width_half(), true);
        row_synthesis(&plane, h, w, false, dst);
    }
    Ok(out)
}

/// Adjoint of [`irfft2`]: a forward transform scaled by the Hermitian
/// multiplicity of each column and the `1/(H*W)` normalization.
pub fn irfft2_backward(cotangent: &Tensor) -> Result<SpectrumTensor> {
    let s = cotangent.shape();
    check_pow2("irfft2_backward", s.height, s.width)?;
    let mut spec = rfft2(cotangent)?;
    let norm = 1.0 / (s.height * s.width) as f64;
    let wh = spec.width_half();
    let weights: Vec<f64> = (0..wh).map(|l| spec.hermitian_weight(l) * norm).collect();
    for (i, v) in spec.data.iter_mut().enumerate() {
        *v *= weights[(i / 2) % wh];
    }
    Ok(spec)
}
