//! Image collections: directory loading and synthetic textures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Same-size RGB images in `[-1, 1]`, each stored as `(1, 3, H, W)`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub names: Vec<String>,
    pub images: Vec<Tensor>,
}

impl Dataset {
    pub fn new(names: Vec<String>, images: Vec<Tensor>) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Data("dataset is empty".into()))?;
        let shape = first.shape();
        if shape.batch != 1 || shape.channels != 3 {
            return Err(Error::Data(format!("images must be (1, 3, H, W), got {shape}")));
        }
        for (name, img) in names.iter().zip(&images) {
            if img.shape() != shape {
                return Err(Error::Data(format!(
                    "{name}: size {} differs from {}",
                    img.shape(),
                    shape
                )));
            }
        }
        if names.len() != images.len() {
            return Err(Error::Data("name and image counts differ".into()));
        }
        Ok(Dataset { names, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.images[0].shape()
    }

    pub fn resolution(&self) -> (usize, usize) {
        let s = self.shape();
        (s.height, s.width)
    }

    /// Stacks the selected images into one batch.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let s = self.shape();
        let mut data = Vec::with_capacity(indices.len() * s.numel());
        for &i in indices {
            data.extend_from_slice(self.images[i].data());
        }
        Tensor::from_vec(
            Shape {
                batch: indices.len(),
                ..s
            },
            data,
        )
        .expect("batch size")
    }

    /// Splits off the last `count` images.
    pub fn split_tail(mut self, count: usize) -> Result<(Dataset, Dataset)> {
        if count == 0 || count >= self.len() {
            return Err(Error::Data(format!("cannot hold out {count} of {} images", self.len())));
        }
        let at = self.len() - count;
        let tail_names = self.names.split_off(at);
        let tail_images = self.images.split_off(at);
        Ok((
            Dataset::new(self.names, self.images)?,
            Dataset::new(tail_names, tail_images)?,
        ))
    }
}

/// Maps a byte to `[-1, 1]`.
pub fn byte_to_unit(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// Inverse of [`byte_to_unit`], clamped and rounded.
pub fn unit_to_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Procedural textures: oriented sinusoid mixtures over a colour gradient,
/// quantized to 8 bits so they survive a PNG round trip.
pub fn synthetic_textures(count: usize, resolution: usize, seed: u64) -> Result<Dataset> {
    if count == 0 || resolution == 0 {
        return Err(Error::Data(
            "synthetic corpus needs at least one non-empty image".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = resolution as f64;
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.4..0.4));
        let tilt: [f64; 2] = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
        let waves: Vec<([f64; 2], f64, [f64; 3])> = (0..rng.random_range(2..=3))
            .map(|_| {
                let cycles = rng.random_range(2..=6) as f64;
                let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.35..0.35));
                ([cycles * theta.cos(), cycles * theta.sin()], phase, amp)
            })
            .collect();
        let img = Tensor::from_fn(Shape::new(1, 3, resolution, resolution), |_, c, y, x| {
            let (u, v) = (x as f64 / r, y as f64 / r);
            let mut val = base[c] + tilt[0] * (u - 0.5) + tilt[1] * (v - 0.5);
            for (k, phase, amp) in &waves {
                val += amp[c] * (std::f64::consts::TAU * (k[0] * u + k[1] * v) + phase).sin();
            }
            byte_to_unit(unit_to_byte(val.clamp(-1.0, 1.0)))
        });
        images.push(img);
    }
    let names = (0..count).map(|i| format!("texture_{i:04}")).collect();
    Dataset::new(names, images)
}

#[cfg(feature = "io")]
pub use self::io::*;

#[cfg(feature = "io")]
mod io {
    use std::path::Path;

    use super::*;
    use crate::masks::MaskGrid;

    fn data_err(path: &Path, e: impl std::fmt::Display) -> Error {
        Error::Data(format!("{}: {e}", path.display()))
    }

    /// Reads an 8-bit image as `(1, 3, H, W)` in `[-1, 1]`.
    pub fn read_image(path: &Path) -> Result<Tensor> {
        let img = image::open(path).map_err(|e| data_err(path, e))?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
            byte_to_unit(img.get_pixel(x as u32, y as u32)[c])
        }))
    }

    /// Writes the first item of `(B, 3, H, W)` as an 8-bit PNG.
    pub fn write_image(path: &Path, t: &Tensor) -> Result<()> {
        let s = t.shape();
        if s.channels != 3 || s.batch == 0 {
            return Err(Error::shape("write_image", "(1, 3, H, W)", s));
        }
        let img = image::RgbImage::from_fn(s.width as u32, s.height as u32, |x, y| {
            image::Rgb(std::array::from_fn(|c| {
                unit_to_byte(t.at(0, c, y as usize, x as usize))
            }))
        });
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| data_err(path, e))
    }

    /// Reads a one-channel mask; pixels at or above 128 are known.
    pub fn read_mask(path: &Path) -> Result<MaskGrid> {
        let img = image::open(path).map_err(|e| data_err(path, e))?.to_luma8();
        let data = img.pixels().map(|p| u8::from(p[0] >= 128)).collect();
        MaskGrid::from_vec(img.height() as usize, img.width() as usize, data)
    }

    /// Writes a mask as a one-channel PNG, 255 = known, 0 = hole.
    pub fn write_mask(path: &Path, mask: &MaskGrid) -> Result<()> {
        let data = mask.data().iter().map(|&v| v * 255).collect();
        let img =
            image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data).expect("mask buffer size");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| data_err(path, e))
    }

    fn is_image(path: &Path) -> bool {
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pnm"))
            .unwrap_or(false)
    }

    /// Loads every PNG/PPM in `dir`, ordered by file name.
    pub fn load_dataset(dir: &Path) -> Result<Dataset> {
        let entries = std::fs::read_dir(dir).map_err(|e| data_err(dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| data_err(dir, e))?.path();
            if path.is_file() && is_image(&path) {
                paths.push(path);
            }
        }
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Data(format!("{}: no PNG or PPM images found", dir.display())));
        }
        let mut names = Vec::with_capacity(paths.len());
        let mut images = Vec::with_capacity(paths.len());
        for p in &paths {
            images.push(read_image(p)?);
            names.push(p.file_name().unwrap_or_default().to_string_lossy().into_owned());
        }
        Dataset::new(names, images)
    }

    /// Writes every image as `<stem>.png` into `dir`.
    pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, img) in data.names.iter().zip(&data.images) {
            let stem = Path::new(name).file_stem().unwrap_or_default().to_string_lossy();
            write_image(&dir.join(format!("{stem}.png")), img)?;
        }
        Ok(())
    }
}
