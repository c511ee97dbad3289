//! Strided 2-D cross-correlation and its transpose via im2col + GEMM.
//!
//! Weight layouts follow the usual convention: `(out, in, kh, kw)` for a
//! forward convolution and `(in, out, kh, kw)` for a transposed one, so the
//! same weight tensor drives a convolution and its adjoint.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::ops::{gemm, map_items};
use crate::tensor::{Shape, Tensor};

/// Zero padding per side. Asymmetric padding is needed for even kernels
/// that must keep the spatial size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    pub const fn new(top: usize, bottom: usize, left: usize, right: usize) -> Self {
        Padding {
            top,
            bottom,
            left,
            right,
        }
    }

    pub const fn vertical(&self) -> usize {
        self.top + self.bottom
    }

    pub const fn horizontal(&self) -> usize {
        self.left + self.right
    }
}

/// Static description of a convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: Padding,
    pub transpose: bool,
    pub output_padding: usize,
}

impl ConvSpec {
    /// Square-kernel convolution, stride 1, no padding.
    pub const fn conv(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel: (kernel, kernel),
            in_channels,
            out_channels,
            stride: 1,
            padding: Padding::uniform(0),
            transpose: false,
            output_padding: 0,
        }
    }

    /// Square-kernel transposed convolution, stride 1, no cropping.
    pub const fn transposed(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            transpose: true,
            ..ConvSpec::conv(kernel, in_channels, out_channels)
        }
    }

    pub const fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub const fn pad(mut self, p: usize) -> Self {
        self.padding = Padding::uniform(p);
        self
    }

    pub const fn padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub const fn output_padding(mut self, op: usize) -> Self {
        self.output_padding = op;
        self
    }

    pub fn weight_shape(&self) -> Shape {
        let (kh, kw) = self.kernel;
        if self.transpose {
            Shape::new(self.in_channels, self.out_channels, kh, kw)
        } else {
            Shape::new(self.out_channels, self.in_channels, kh, kw)
        }
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    /// Output spatial size for an input of `height x width`.
    pub fn output_hw(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        if self.stride == 0 || kh == 0 || kw == 0 {
            return Err(Error::invalid(format!("degenerate conv spec {self:?}")));
        }
        if self.transpose {
            if self.output_padding >= self.stride {
                return Err(Error::invalid(format!(
                    "output_padding {} must be smaller than stride {}",
                    self.output_padding, self.stride
                )));
            }
            let full_h = (height.max(1) - 1) * self.stride + kh + self.output_padding;
            let full_w = (width.max(1) - 1) * self.stride + kw + self.output_padding;
            if height == 0 || width == 0 || full_h <= self.padding.vertical() || full_w <= self.padding.horizontal() {
                return Err(Error::invalid(format!(
                    "transposed conv crops {:?} away an input of {height}x{width}",
                    self.padding
                )));
            }
            Ok((full_h - self.padding.vertical(), full_w - self.padding.horizontal()))
        } else {
            let ph = height + self.padding.vertical();
            let pw = width + self.padding.horizontal();
            if ph < kh || pw < kw {
                return Err(Error::invalid(format!(
                    "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
                )));
            }
            Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.channels != self.in_channels {
            return Err(Error::shape("conv input channels", self.in_channels, input.channels));
        }
        let (h, w) = self.output_hw(input.height, input.width)?;
        Ok(Shape::new(input.batch, self.out_channels, h, w))
    }

    /// Sliding-window geometry of the underlying forward correlation.
    fn window(&self, input: Shape, output: Shape) -> Window {
        let (kh, kw) = self.kernel;
        // For the transpose the correlation runs from the (larger) output
        // grid back onto the input grid.
        let (image, grid) = if self.transpose {
            (output, input)
        } else {
            (input, output)
        };
        Window {
            channels: image.channels,
            in_h: image.height,
            in_w: image.width,
            kh,
            kw,
            stride: self.stride,
            pad_top: self.padding.top,
            pad_left: self.padding.left,
            out_h: grid.height,
            out_w: grid.width,
        }
    }

    fn check(&self, op: &'static str, x: Shape, weight: &Tensor, bias: Option<&Tensor>) -> Result<Shape> {
        if x.channels != self.in_channels {
            return Err(Error::shape(
                op,
                format!("{} input channels", self.in_channels),
                format!("{} channels in {x}", x.channels),
            ));
        }
        if weight.shape() != self.weight_shape() {
            return Err(Error::shape(
                op,
                format!("weight {}", self.weight_shape()),
                format!("weight {}", weight.shape()),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != self.bias_shape() {
                return Err(Error::shape(
                    op,
                    format!("bias {}", self.bias_shape()),
                    format!("bias {}", b.shape()),
                ));
            }
        }
        self.output_shape(x)
    }
}

#[derive(Clone, Copy, Debug)]
struct Window {
    channels: usize,
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    out_h: usize,
    out_w: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// A 1x1 window with unit stride and no padding: the column matrix is
    /// the image itself.
    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.stride == 1
            && self.pad_top == 0
            && self.pad_left == 0
            && self.out_h == self.in_h
            && self.out_w == self.in_w
    }

    fn unfold<'a>(&self, image: &'a [f64]) -> Cow<'a, [f64]> {
        if self.is_pointwise() {
            Cow::Borrowed(image)
        } else {
            Cow::Owned(self.im2col(image))
        }
    }

    /// `col2im` into a fresh zero image.
    fn fold(&self, cols: Vec<f64>) -> Vec<f64> {
        if self.is_pointwise() {
            return cols;
        }
        let mut image = vec![0.0; self.channels * self.in_h * self.in_w];
        self.col2im(&cols, &mut image);
        image
    }

    /// Unfolds one image into a `(channels*kh*kw) x (out_h*out_w)` matrix.
    fn im2col(&self, image: &[f64]) -> Vec<f64> {
        let n = self.cols();
        let mut cols = vec![0.0; self.rows() * n];
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &image[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        let dst_row = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad_left as isize;
                            if ix >= 0 && ix < self.in_w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
        cols
    }

    /// Adjoint of `im2col`: scatters columns back, accumulating into `image`.
    fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let n = self.cols();
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &mut image[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let dst_row = &mut plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        let src_row = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        for (ox, s) in src_row.iter().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad_left as isize;
                            if ix >= 0 && ix < self.in_w as isize {
                                dst_row[ix as usize] += s;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn add_bias(out: &mut Tensor, bias: Option<&Tensor>) {
    let Some(bias) = bias else { return };
    let s = out.shape();
    let plane = s.plane();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let b = bias.data()[i % s.channels];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad(grad_out: &Tensor) -> Tensor {
    let s = grad_out.shape();
    let mut g = Tensor::zeros(Shape::new(1, s.channels, 1, 1));
    for (i, chunk) in grad_out.data().chunks(s.plane()).enumerate() {
        g.data_mut()[i % s.channels] += chunk.iter().sum::<f64>();
    }
    g
}

/// Sums per-item partial results in item order.
fn sum_partials(shape: Shape, parts: Vec<Vec<f64>>) -> Tensor {
    let mut acc = Tensor::zeros(shape);
    for p in parts {
        for (a, v) in acc.data_mut().iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

fn stitch(shape: Shape, items: Vec<Vec<f64>>) -> Tensor {
    let data: Vec<f64> = items.into_iter().flatten().collect();
    Tensor::from_vec(shape, data).expect("per-item buffers cover the output")
}

/// Gradients returned by the backward kernels.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Cross-correlation with asymmetric zero padding.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    if spec.transpose {
        return Err(Error::invalid("conv2d called with a transposed spec"));
    }
    let out_shape = spec.check("conv2d", x.shape(), weight, bias)?;
    let win = spec.window(x.shape(), out_shape);
    let (m, k, n) = (spec.out_channels, win.rows(), win.cols());
    let items = map_items(x.shape().batch, |b| {
        let cols = win.unfold(x.item(b));
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, weight.data(), false, &cols, false, 0.0, &mut out);
        out
    });
    let mut out = stitch(out_shape, items);
    add_bias(&mut out, bias);
    Ok(out)
}

/// Vector-Jacobian product of [`conv2d`].
pub fn conv2d_backward(x: &Tensor, weight: &Tensor, spec: &ConvSpec, grad_out: &Tensor) -> Result<ConvGrads> {
    let out_shape = spec.check("conv2d_backward", x.shape(), weight, None)?;
    grad_out.expect_shape("conv2d_backward", out_shape)?;
    let win = spec.window(x.shape(), out_shape);
    let (m, k, n) = (spec.out_channels, win.rows(), win.cols());
    let parts = map_items(x.shape().batch, |b| {
        let cols = win.unfold(x.item(b));
        let g = grad_out.item(b);
        let mut gw = vec![0.0; m * k];
        gemm(m, n, k, g, false, &cols, true, 0.0, &mut gw);
        let mut gcols = vec![0.0; k * n];
        gemm(k, m, n, weight.data(), true, g, false, 0.0, &mut gcols);
        (win.fold(gcols), gw)
    });
    let (gx, gw): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok(ConvGrads {
        input: stitch(x.shape(), gx),
        weight: sum_partials(weight.shape(), gw),
        bias: bias_grad(grad_out),
    })
}

/// Fractionally-strided convolution: the adjoint of [`conv2d`] with the same
/// kernel, stride and padding, plus `output_padding` extra rows/columns at
/// the bottom/right.
pub fn conv_transpose2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    if !spec.transpose {
        return Err(Error::invalid("conv_transpose2d called with a forward spec"));
    }
    let out_shape = spec.check("conv_transpose2d", x.shape(), weight, bias)?;
    let win = spec.window(x.shape(), out_shape);
    let (ci, rows, n) = (spec.in_channels, win.rows(), win.cols());
    let items = map_items(x.shape().batch, |b| {
        let mut cols = vec![0.0; rows * n];
        gemm(rows, ci, n, weight.data(), true, x.item(b), false, 0.0, &mut cols);
        win.fold(cols)
    });
    let mut out = stitch(out_shape, items);
    add_bias(&mut out, bias);
    Ok(out)
}

/// Vector-Jacobian product of [`conv_transpose2d`].
pub fn conv_transpose2d_backward(x: &Tensor, weight: &Tensor, spec: &ConvSpec, grad_out: &Tensor) -> Result<ConvGrads> {
    let out_shape = spec.check("conv_transpose2d_backward", x.shape(), weight, None)?;
    grad_out.expect_shape("conv_transpose2d_backward", out_shape)?;
    let win = spec.window(x.shape(), out_shape);
    let (ci, rows, n) = (spec.in_channels, win.rows(), win.cols());
    let parts = map_items(x.shape().batch, |b| {
        let cols = win.unfold(grad_out.item(b));
        let mut gx = vec![0.0; ci * n];
        gemm(ci, rows, n, weight.data(), false, &cols, false, 0.0, &mut gx);
        let mut gw = vec![0.0; ci * rows];
        gemm(ci, n, rows, x.item(b), false, &cols, true, 0.0, &mut gw);
        (gx, gw)
    });
    let (gx, gw): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok(ConvGrads {
        input: stitch(x.shape(), gx),
        weight: sum_partials(weight.shape(), gw),
        bias: bias_grad(grad_out),
    })
}
