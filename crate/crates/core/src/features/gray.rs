use std::path::Path;

use image::{DynamicImage, GrayImage as Luma8Image};

use crate::error::{Error, Result};

/// Single-channel image with real intensities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::Precondition(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width as usize * height as usize,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Pixel with coordinates clamped into the image (replicated border).
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> f64 {
        let x = x.clamp(0, self.width as i64 - 1) as u32;
        let y = y.clamp(0, self.height as i64 - 1) as u32;
        self.get(x, y)
    }

    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = v;
    }

    pub fn mirror_horizontal(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }

    /// Bilinear resampling with pixel-center alignment and clamped borders.
    pub fn resize_bilinear(&self, new_width: u32, new_height: u32) -> GrayImage {
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        GrayImage::from_fn(new_width, new_height, |x, y| {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let x0 = fx.floor() as u32;
            let y0 = fy.floor() as u32;
            let x1 = (x0 + 1).min(self.width - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            let tx = fx - x0 as f64;
            let ty = fy - y0 as f64;
            let top = lerp(self.get(x0, y0), self.get(x1, y0), tx);
            let bottom = lerp(self.get(x0, y1), self.get(x1, y1), tx);
            lerp(top, bottom, ty)
        })
    }

    /// Loads PNG or PNM. Color images are converted with
    /// luma = 0.299 R + 0.587 G + 0.114 B.
    pub fn load(path: impl AsRef<Path>) -> Result<GrayImage> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &DynamicImage) -> GrayImage {
        match img {
            DynamicImage::ImageLuma8(g) => {
                GrayImage::from_fn(g.width(), g.height(), |x, y| g.get_pixel(x, y).0[0] as f64)
            }
            other => {
                let rgb = other.to_rgb8();
                GrayImage::from_fn(rgb.width(), rgb.height(), |x, y| {
                    let [r, g, b] = rgb.get_pixel(x, y).0;
                    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
                })
            }
        }
    }

    /// Writes an 8-bit grayscale PNG, rounding and clamping intensities.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let buf: Vec<u8> = self
            .pixels
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = Luma8Image::from_raw(self.width, self.height, buf)
            .expect("buffer length matches dimensions");
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    #[test]
    fn resize_preserves_constant() {
        let img = GrayImage::filled(37, 23, 117.0);
        let small = img.resize_bilinear(29, 18);
        assert!(small.pixels().iter().all(|&v| v == 117.0));
        let big = img.resize_bilinear(74, 46);
        assert!(big.pixels().iter().all(|&v| v == 117.0));
    }

    #[test]
    fn mirror_is_involution() {
        let img = GrayImage::from_fn(7, 5, |x, y| (x * 13 + y * 7) as f64);
        assert_eq!(img.mirror_horizontal().mirror_horizontal(), img);
        assert_eq!(img.mirror_horizontal().get(0, 2), img.get(6, 2));
    }

    #[test]
    fn luma_conversion_constants() {
        let mut rgb = RgbImage::new(2, 1);
        rgb.put_pixel(0, 0, Rgb([255, 0, 0]));
        rgb.put_pixel(1, 0, Rgb([10, 20, 30]));
        let g = GrayImage::from_dynamic(&DynamicImage::ImageRgb8(rgb));
        assert_eq!(g.get(0, 0), 0.299 * 255.0);
        assert_eq!(g.get(1, 0), 0.299 * 10.0 + 0.587 * 20.0 + 0.114 * 30.0);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = GrayImage::from_fn(9, 4, |x, y| (x * 20 + y) as f64);
        img.save_png(&path).unwrap();
        assert_eq!(GrayImage::load(&path).unwrap(), img);
        assert!(GrayImage::load(dir.path().join("missing.png")).is_err());
    }
}
