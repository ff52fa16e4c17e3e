//! Generated corpus of bright squares on a textured background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::LabeledImage;
use crate::features::GrayImage;
use crate::geom::{Labeling, OverlapRule, Rect};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaresConfig {
    pub width: u32,
    pub height: u32,
    pub min_side: u32,
    pub max_side: u32,
    pub max_squares: usize,
    pub brightness: f64,
}

impl Default for SquaresConfig {
    fn default() -> Self {
        Self {
            width: 200,
            height: 200,
            min_side: 32,
            max_side: 48,
            max_squares: 3,
            brightness: 230.0,
        }
    }
}

/// Truth box for a square: the square plus a quarter side of margin.
pub fn square_box(left: i64, top: i64, side: i64) -> Rect {
    let m = side / 4;
    Rect::new(left - m, top - m, side + 2 * m, side + 2 * m)
}

fn background(rng: &mut ChaCha8Rng, w: u32, h: u32) -> GrayImage {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.02..0.15),
                rng.random_range(0.02..0.15),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(8.0..20.0),
            )
        })
        .collect();
    let noise: Vec<f64> = (0..w as usize * h as usize)
        .map(|_| rng.random_range(-12.0..12.0))
        .collect();
    GrayImage::from_fn(w, h, |x, y| {
        let base: f64 = waves
            .iter()
            .map(|(fx, fy, ph, amp)| amp * (fx * x as f64 + fy * y as f64 + ph).sin())
            .sum();
        60.0 + base + noise[(y * w + x) as usize]
    })
}

/// One image with between 1 and `max_squares` squares whose truth boxes do
/// not overlap.
pub fn square_image(cfg: &SquaresConfig, rng: &mut ChaCha8Rng, name: &str) -> LabeledImage {
    let mut image = background(rng, cfg.width, cfg.height);
    let want = rng.random_range(1..=cfg.max_squares);
    let mut boxes: Vec<Rect> = Vec::new();
    let mut attempts = 0;
    while boxes.len() < want && attempts < 1000 {
        attempts += 1;
        let side = rng.random_range(cfg.min_side..=cfg.max_side) as i64;
        let m = side / 4;
        let lo = m + 1;
        let hi_x = cfg.width as i64 - side - m - 1;
        let hi_y = cfg.height as i64 - side - m - 1;
        if hi_x < lo || hi_y < lo {
            break;
        }
        let left = rng.random_range(lo..=hi_x);
        let top = rng.random_range(lo..=hi_y);
        let b = square_box(left, top, side);
        if boxes.iter().any(|o| o.intersection_area(&b) > 0) {
            continue;
        }
        for y in top..top + side {
            for x in left..left + side {
                let v = cfg.brightness + rng.random_range(-5.0..5.0);
                image.set(x as u32, y as u32, v);
            }
        }
        boxes.push(b);
    }
    let truth = Labeling::new(boxes, &OverlapRule::default()).expect("boxes are disjoint");
    LabeledImage {
        path: name.to_string(),
        image,
        truth,
    }
}

/// `count` images from a fixed seed.
pub fn square_corpus(cfg: &SquaresConfig, count: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| square_image(cfg, &mut rng, &format!("square_{i:03}.png")))
        .collect()
}
