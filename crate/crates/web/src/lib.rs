//! Browser bindings: hole masks, edge-aware per-pixel filtering and
//! log-magnitude spectra, all on RGBA byte buffers that go straight into a
//! canvas `ImageData`.

use dcf_core::filtering::{apply_filter, normalize_kernels, KernelField};
use dcf_core::masks::{apply_mask, center_mask, irregular_mask, MaskGrid, DEFAULT_COVERAGE};
use dcf_core::pipeline::data::{byte_to_unit, synthetic_textures, unit_to_byte};
use dcf_core::spectral::rfft2;
use dcf_core::{Error, Result, Shape, Tensor};
use wasm_bindgen::prelude::*;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn check_rgba(rgba: &[u8], size: usize) -> Result<()> {
    if size == 0 || rgba.len() != size * size * 4 {
        return Err(Error::InvalidArgument(format!(
            "expected {size}x{size} RGBA ({} bytes), got {} bytes",
            size * size * 4,
            rgba.len()
        )));
    }
    Ok(())
}

/// RGBA bytes to a `(1, 3, size, size)` tensor in `[-1, 1]`. Alpha is ignored.
pub fn rgba_to_tensor(rgba: &[u8], size: usize) -> Result<Tensor> {
    check_rgba(rgba, size)?;
    Ok(Tensor::from_fn(Shape::new(1, 3, size, size), |_, c, y, x| {
        byte_to_unit(rgba[(y * size + x) * 4 + c])
    }))
}

pub fn tensor_to_rgba(t: &Tensor) -> Vec<u8> {
    let s = t.shape();
    let mut out = Vec::with_capacity(s.height * s.width * 4);
    for y in 0..s.height {
        for x in 0..s.width {
            for c in 0..3 {
                out.push(unit_to_byte(t.at(0, c.min(s.channels - 1), y, x)));
            }
            out.push(255);
        }
    }
    out
}

/// Known pixels are bright (alpha > 0 and red >= 128); everything else is a hole.
pub fn rgba_to_mask(rgba: &[u8], size: usize) -> Result<MaskGrid> {
    check_rgba(rgba, size)?;
    let data = rgba
        .chunks_exact(4)
        .map(|p| u8::from(p[0] >= 128 && p[3] > 0))
        .collect();
    MaskGrid::from_vec(size, size, data)
}

pub fn mask_to_rgba(m: &MaskGrid) -> Vec<u8> {
    m.data()
        .iter()
        .flat_map(|&v| {
            let g = if v == 1 { 255 } else { 0 };
            [g, g, g, 255]
        })
        .collect()
}

/// A procedural test texture.
#[wasm_bindgen]
pub fn texture(size: usize, seed: u64) -> Result<Vec<u8>, JsError> {
    let data = synthetic_textures(1, size, seed).map_err(js)?;
    Ok(tensor_to_rgba(&data.images[0]))
}

/// `mode` is `"center"` or `"irregular"`. White is known, black is a hole.
pub fn make_mask(size: usize, mode: &str, seed: u64) -> Result<MaskGrid> {
    match mode {
        "center" => center_mask(size, size),
        "irregular" => irregular_mask(size, size, seed, DEFAULT_COVERAGE),
        other => Err(Error::InvalidArgument(format!("unknown mask mode {other:?}"))),
    }
}

#[wasm_bindgen]
pub fn mask(size: usize, mode: &str, seed: u64) -> Result<Vec<u8>, JsError> {
    make_mask(size, mode, seed).map(|m| mask_to_rgba(&m)).map_err(js)
}

/// Fraction of hole pixels in an RGBA mask.
#[wasm_bindgen]
pub fn coverage(mask_rgba: &[u8], size: usize) -> Result<f64, JsError> {
    rgba_to_mask(mask_rgba, size).map(|m| m.coverage()).map_err(js)
}

/// The image with its holes set to mid-gray, as the network sees it.
#[wasm_bindgen]
pub fn apply(image_rgba: &[u8], mask_rgba: &[u8], size: usize) -> Result<Vec<u8>, JsError> {
    let image = rgba_to_tensor(image_rgba, size).map_err(js)?;
    let m = rgba_to_mask(mask_rgba, size).map_err(js)?;
    apply_mask(&image, &m).map(|t| tensor_to_rgba(&t)).map_err(js)
}

/// Kernels that weight each neighbour by its colour similarity to the
/// centre pixel: `softmax(-sharpness * |I(q) - I(p)|^2)` over the `n x n`
/// window. Sharpness 0 gives a box filter.
pub fn edge_aware_kernels(image: &Tensor, n: usize, sharpness: f64) -> Result<KernelField> {
    if n.is_multiple_of(2) || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "neighborhood side must be odd, got {n}"
        )));
    }
    let s = image.shape();
    let r = (n / 2) as isize;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let logits = Tensor::from_fn(Shape::new(s.batch, n * n, s.height, s.width), |b, k, y, x| {
        let dy = (k / n) as isize - r;
        let dx = (k % n) as isize - r;
        let (qy, qx) = (clamp(y as isize + dy, s.height), clamp(x as isize + dx, s.width));
        let d2: f64 = (0..s.channels)
            .map(|c| (image.at(b, c, qy, qx) - image.at(b, c, y, x)).powi(2))
            .sum();
        -sharpness * d2
    });
    Ok(normalize_kernels(&KernelField::new(logits)?))
}

/// Runs `passes` rounds of edge-aware filtering.
pub fn smooth(image: &Tensor, n: usize, sharpness: f64, passes: usize) -> Result<Tensor> {
    let mut out = image.clone();
    for _ in 0..passes {
        let field = edge_aware_kernels(&out, n, sharpness)?;
        out = apply_filter(&out, &field)?;
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn filter(image_rgba: &[u8], size: usize, n: usize, sharpness: f64, passes: usize) -> Result<Vec<u8>, JsError> {
    let image = rgba_to_tensor(image_rgba, size).map_err(js)?;
    smooth(&image, n, sharpness, passes)
        .map(|t| tensor_to_rgba(&t))
        .map_err(js)
}

/// Log-magnitude spectrum of the luminance, zero frequency centred,
/// stretched to `[-1, 1]`. The side must be a power of two.
pub fn log_spectrum(image: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    let luma = Tensor::from_fn(Shape::new(1, 1, s.height, s.width), |_, _, y, x| {
        0.299 * image.at(0, 0, y, x) + 0.587 * image.at(0, 1, y, x) + 0.114 * image.at(0, 2, y, x)
    });
    let spec = rfft2(&luma)?;
    let (h, w) = (s.height, s.width);
    let mag = |k: usize, l: usize| {
        // The half spectrum holds l <= w/2; the rest mirrors through the origin.
        let (re, im) = if l <= w / 2 {
            spec.get(0, 0, k, l)
        } else {
            spec.get(0, 0, (h - k) % h, w - l)
        };
        (re * re + im * im).sqrt().ln_1p()
    };
    let full = Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
        mag((y + h / 2) % h, (x + w / 2) % w)
    });
    let peak = full.data().iter().copied().fold(0.0, f64::max);
    Ok(full.map(|v| if peak > 0.0 { 2.0 * v / peak - 1.0 } else { -1.0 }))
}

#[wasm_bindgen]
pub fn spectrum(image_rgba: &[u8], size: usize) -> Result<Vec<u8>, JsError> {
    let image = rgba_to_tensor(image_rgba, size).map_err(js)?;
    log_spectrum(&image).map(|t| tensor_to_rgba(&t)).map_err(js)
}
