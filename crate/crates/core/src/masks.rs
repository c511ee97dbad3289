//! Hole masks: centered squares and irregular brush strokes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_COVERAGE: (f64, f64) = (0.2, 0.4);

/// Binary validity map, 1 = known pixel, 0 = hole.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskGrid {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MaskGrid {
    pub fn ones(height: usize, width: usize) -> Self {
        MaskGrid {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        MaskGrid {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    /// Values must be 0 or 1.
    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("mask", height * width, data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(MaskGrid { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn hole_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 0).count()
    }

    /// Fraction of hole pixels.
    pub fn coverage(&self) -> f64 {
        self.hole_count() as f64 / (self.height * self.width) as f64
    }

    /// `(1, 1, H, W)` tensor of 0.0/1.0.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&v| v as f64).collect();
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), data).expect("mask size")
    }

    /// Reads a `(1, 1, H, W)` tensor, thresholding at 0.5.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.batch != 1 || s.channels != 1 {
            return Err(Error::shape("mask_from_tensor", "(1, 1, H, W)", s));
        }
        let data = t.data().iter().map(|&v| u8::from(v >= 0.5)).collect();
        Ok(MaskGrid {
            height: s.height,
            width: s.width,
            data,
        })
    }
}

/// Stacks masks into a `(B, 1, H, W)` tensor.
pub fn stack_masks(masks: &[MaskGrid]) -> Result<Tensor> {
    let first = masks.first().ok_or_else(|| Error::invalid("no masks to stack"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if (m.height, m.width) != (h, w) {
            return Err(Error::shape(
                "stack_masks",
                format!("{h}x{w}"),
                format!("{}x{}", m.height, m.width),
            ));
        }
        data.extend(m.data.iter().map(|&v| v as f64));
    }
    Tensor::from_vec(Shape::new(masks.len(), 1, h, w), data)
}

fn check_pow2(op: &'static str, height: usize, width: usize) -> Result<()> {
    if height < 2 || width < 2 || !height.is_power_of_two() || !width.is_power_of_two() {
        return Err(Error::NotPowerOfTwo { op, height, width });
    }
    Ok(())
}

/// Centered `(H/2) x (W/2)` hole.
pub fn center_mask(height: usize, width: usize) -> Result<MaskGrid> {
    check_pow2("center_mask", height, width)?;
    let mut m = MaskGrid::ones(height, width);
    for y in height / 4..height / 4 + height / 2 {
        for x in width / 4..width / 4 + width / 2 {
            m.data[y * width + x] = 0;
        }
    }
    Ok(m)
}

struct Canvas<'a> {
    mask: &'a mut MaskGrid,
    holes: usize,
}

impl Canvas<'_> {
    fn stamp(&mut self, cy: f64, cx: f64, radius: f64) {
        let (h, w) = (self.mask.height as isize, self.mask.width as isize);
        let r2 = radius * radius;
        let y0 = (cy - radius).floor().max(0.0) as isize;
        let y1 = ((cy + radius).ceil() as isize).min(h - 1);
        let x0 = (cx - radius).floor().max(0.0) as isize;
        let x1 = ((cx + radius).ceil() as isize).min(w - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                if dy * dy + dx * dx <= r2 {
                    let idx = (y * w + x) as usize;
                    if self.mask.data[idx] == 1 {
                        self.mask.data[idx] = 0;
                        self.holes += 1;
                    }
                }
            }
        }
    }

    /// Thick polyline.
    fn segment(&mut self, from: (f64, f64), to: (f64, f64), radius: f64) {
        let len = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
        let steps = (len / 0.5).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            self.stamp(from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1), radius);
        }
    }
}

/// Stroke geometry at a given resolution scale.
#[derive(Clone, Copy)]
struct Brush {
    thickness: (f64, f64),
    segment: (f64, f64),
    vertices: (usize, usize),
}

fn draw_stroke<R: Rng>(canvas: &mut Canvas, brush: Brush, rng: &mut R) {
    let (h, w) = (canvas.mask.height as f64, canvas.mask.width as f64);
    let mut p = (rng.random_range(0.0..h), rng.random_range(0.0..w));
    let mut angle = rng.random_range(0.0..std::f64::consts::TAU);
    let radius = rng.random_range(brush.thickness.0..=brush.thickness.1) / 2.0;
    let vertices = rng.random_range(brush.vertices.0..=brush.vertices.1);
    for _ in 0..vertices {
        angle += rng.random_range(-std::f64::consts::FRAC_PI_4..=std::f64::consts::FRAC_PI_4);
        let len = rng.random_range(brush.segment.0..=brush.segment.1);
        let mut q = (p.0 + len * angle.sin(), p.1 + len * angle.cos());
        // Reflect off the borders so strokes stay on the canvas.
        if q.0 < 0.0 || q.0 >= h {
            angle = -angle;
            q.0 = q.0.clamp(0.0, h - 1.0);
        }
        if q.1 < 0.0 || q.1 >= w {
            angle = std::f64::consts::PI - angle;
            q.1 = q.1.clamp(0.0, w - 1.0);
        }
        canvas.segment(p, q, radius);
        p = q;
    }
}

/// Union of random brush strokes with hole coverage inside `range`.
///
/// Strokes are drawn until the coverage reaches the lower bound. A stroke
/// that would push it past the upper bound is discarded and redrawn, with
/// the brush shrinking after repeated failures; a final single-pixel pass
/// guarantees termination.
pub fn irregular_mask(height: usize, width: usize, seed: u64, range: (f64, f64)) -> Result<MaskGrid> {
    let (lo, hi) = range;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(Error::invalid(format!(
            "coverage range [{lo}, {hi}] is not inside [0, 1]"
        )));
    }
    let total = height * width;
    if total < 25 {
        return Err(Error::invalid(format!(
            "{height}x{width} is too small for irregular masks (at least 25 pixels)"
        )));
    }
    let min_holes = (lo * total as f64).ceil() as usize;
    let max_holes = (hi * total as f64).floor() as usize;
    if min_holes > max_holes {
        return Err(Error::invalid(format!(
            "no hole count in {height}x{width} gives coverage within [{lo}, {hi}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = width.max(height) as f64 / 256.0;
    let base = Brush {
        thickness: ((4.0 * scale).max(1.0), (16.0 * scale).max(1.0)),
        segment: ((16.0 * scale).max(1.0), (64.0 * scale).max(2.0)),
        vertices: (4, 12),
    };
    let mut mask = MaskGrid::ones(height, width);
    let mut holes = 0;
    let mut rejects = 0;
    while holes < min_holes {
        let brush = match rejects {
            0..=15 => base,
            16..=63 => Brush {
                thickness: (1.0, base.thickness.0),
                segment: (1.0, base.segment.0),
                vertices: (1, 4),
            },
            _ => break,
        };
        let mut trial = mask.clone();
        let mut canvas = Canvas {
            mask: &mut trial,
            holes,
        };
        draw_stroke(&mut canvas, brush, &mut rng);
        if canvas.holes <= max_holes {
            holes = canvas.holes;
            mask = trial;
        } else {
            rejects += 1;
        }
    }
    // Single pixels always land inside the band.
    while holes < min_holes {
        let idx = rng.random_range(0..total);
        if mask.data[idx] == 1 {
            mask.data[idx] = 0;
            holes += 1;
        }
    }
    Ok(mask)
}

/// Zeroes the holes of every item in `(B, C, H, W)` with one mask each.
pub fn apply_masks(image: &Tensor, masks: &[MaskGrid]) -> Result<Tensor> {
    let s = image.shape();
    if masks.len() != s.batch {
        return Err(Error::shape(
            "apply_mask",
            format!("{} masks", s.batch),
            format!("{} masks", masks.len()),
        ));
    }
    for m in masks {
        if (m.height, m.width) != (s.height, s.width) {
            return Err(Error::shape(
                "apply_mask",
                format!("{}x{}", s.height, s.width),
                format!("{}x{}", m.height, m.width),
            ));
        }
    }
    Ok(Tensor::from_fn(s, |b, c, y, x| {
        if masks[b].get(y, x) == 1 {
            image.at(b, c, y, x)
        } else {
            0.0
        }
    }))
}

/// Applies the same mask to every item.
pub fn apply_mask(image: &Tensor, mask: &MaskGrid) -> Result<Tensor> {
    let masks = vec![mask.clone(); image.shape().batch];
    apply_masks(image, &masks)
}
