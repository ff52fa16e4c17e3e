use super::{FeatureMapConfig, GrayImage};

#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub image: GrayImage,
    /// Size of this level relative to level 0: `(num/den)^k`.
    pub scale: f64,
    /// Factor mapping level coordinates back to the original image.
    pub to_original: f64,
}

#[derive(Debug, Clone)]
pub struct ImagePyramid {
    pub levels: Vec<PyramidLevel>,
}

impl ImagePyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Level 0 is `img` upsampled by the configured factor. Each further level
/// shrinks the previous one by `num/den` (dimensions floored) and is kept
/// while it still has at least `min_pyramid_pixels` pixels and can hold one
/// detection window.
pub fn build_pyramid(img: &GrayImage, cfg: &FeatureMapConfig) -> ImagePyramid {
    let up = cfg.upsample_factor;
    let base = if up == 1 {
        img.clone()
    } else {
        img.resize_bilinear(img.width() * up, img.height() * up)
    };
    let (num, den) = cfg.pyramid_downsample;
    let (ww, wh) = (cfg.window_width, cfg.window_height);

    let mut levels = vec![PyramidLevel {
        image: base,
        scale: 1.0,
        to_original: 1.0 / up as f64,
    }];
    loop {
        let k = levels.len() as i32;
        let prev = &levels.last().unwrap().image;
        let w = (prev.width() as u64 * num as u64 / den as u64) as u32;
        let h = (prev.height() as u64 * num as u64 / den as u64) as u32;
        if w == 0 || h == 0 || w < ww || h < wh {
            break;
        }
        if (w as u64 * h as u64) < cfg.min_pyramid_pixels {
            break;
        }
        let image = prev.resize_bilinear(w, h);
        let scale = (num as f64 / den as f64).powi(k);
        levels.push(PyramidLevel {
            image,
            scale,
            to_original: (den as f64 / num as f64).powi(k) / up as f64,
        });
    }
    ImagePyramid { levels }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(min_pixels: u64, up: u32) -> FeatureMapConfig {
        let mut c = FeatureMapConfig::hog_filter(20, 20, 10);
        c.min_pyramid_pixels = min_pixels;
        c.upsample_factor = up;
        c
    }

    #[test]
    fn four_fifths_downsampling() {
        let img = GrayImage::filled(100, 100, 3.0);
        let p = build_pyramid(&img, &cfg(0, 1));
        assert_eq!(p.levels[1].image.width(), 80);
        assert_eq!(p.levels[1].image.height(), 80);
        assert_eq!(p.levels[2].image.width(), 64);
        // 100, 80, 64, 51, 40, 32, 25, 20 -- the next (16) cannot hold a window
        let widths: Vec<u32> = p.levels.iter().map(|l| l.image.width()).collect();
        assert_eq!(widths, vec![100, 80, 64, 51, 40, 32, 25, 20]);
        for l in &p.levels {
            assert!(l.image.pixels().iter().all(|&v| v == 3.0));
        }
        assert!((p.levels[3].to_original - 1.25f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn min_pixels_stops_pyramid() {
        let img = GrayImage::filled(500, 400, 0.0);
        let p = build_pyramid(&img, &cfg(17_000, 1));
        let last = p.levels.last().unwrap();
        assert!(last.image.pixel_count() >= 17_000);
        let next = (last.image.width() * 4 / 5) as u64 * (last.image.height() * 4 / 5) as u64;
        assert!(next < 17_000);
    }

    #[test]
    fn upsampling_doubles_level_zero() {
        let img = GrayImage::filled(30, 25, 1.0);
        let p = build_pyramid(&img, &cfg(0, 2));
        assert_eq!(p.levels[0].image.width(), 60);
        assert_eq!(p.levels[0].to_original, 0.5);
    }

    #[test]
    fn tiny_image_keeps_single_level() {
        let img = GrayImage::filled(5, 5, 1.0);
        let p = build_pyramid(&img, &cfg(0, 1));
        assert_eq!(p.len(), 1);
    }
}
