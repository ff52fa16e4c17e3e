//! Gradient orientation voting and 2x2-cell HOG blocks.

use std::f64::consts::PI;

use super::GrayImage;
use crate::error::{Error, Result};

pub const ORIENTATION_BINS: usize = 9;
/// Four cells of nine bins.
pub const BLOCK_LEN: usize = 4 * ORIENTATION_BINS;
/// Cell side used for the per-pixel descriptors (10x10 blocks).
pub const DESCRIPTOR_CELL: u32 = 5;
pub const NORM_EPS: f64 = 1e-4;

pub type Block = [f64; BLOCK_LEN];

/// Each pixel's magnitude-weighted vote, split between two neighbouring
/// unsigned orientation bins.
#[derive(Debug, Clone, Copy, Default)]
struct Vote {
    bin: u8,
    lo: f64,
    hi: f64,
}

#[derive(Debug, Clone)]
pub struct GradientVotes {
    width: u32,
    height: u32,
    votes: Vec<Vote>,
}

impl GradientVotes {
    /// Centered differences with replicated borders; orientation in
    /// `[0, 180)` degrees, bin centers at 10, 30, ..., 170 with wraparound.
    pub fn new(img: &GrayImage) -> Self {
        let bin_width = PI / ORIENTATION_BINS as f64;
        let mut votes = Vec::with_capacity(img.pixels().len());
        for y in 0..img.height() as i64 {
            for x in 0..img.width() as i64 {
                let gx = img.get_clamped(x + 1, y) - img.get_clamped(x - 1, y);
                let gy = img.get_clamped(x, y + 1) - img.get_clamped(x, y - 1);
                let mag = (gx * gx + gy * gy).sqrt();
                if mag == 0.0 {
                    votes.push(Vote::default());
                    continue;
                }
                let mut angle = gy.atan2(gx);
                if angle < 0.0 {
                    angle += PI;
                }
                if angle >= PI {
                    angle -= PI;
                }
                let pos = angle / bin_width - 0.5;
                let base = pos.floor();
                let frac = pos - base;
                let bin = (base as i64).rem_euclid(ORIENTATION_BINS as i64) as u8;
                votes.push(Vote {
                    bin,
                    lo: mag * (1.0 - frac),
                    hi: mag * frac,
                });
            }
        }
        Self {
            width: img.width(),
            height: img.height(),
            votes,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Orientation histogram of the `side`x`side` cell at (left, top).
    pub fn cell_histogram(&self, left: u32, top: u32, side: u32) -> [f64; ORIENTATION_BINS] {
        let mut hist = [0.0; ORIENTATION_BINS];
        let w = self.width as usize;
        for y in top..top + side {
            let row = &self.votes[y as usize * w..(y as usize + 1) * w];
            for v in &row[left as usize..(left + side) as usize] {
                let b = v.bin as usize;
                hist[b] += v.lo;
                hist[(b + 1) % ORIENTATION_BINS] += v.hi;
            }
        }
        hist
    }

    /// L2-normalized block of 2x2 cells of side `cell` whose top-left
    /// corner is (left, top). Cells are ordered top-left, top-right,
    /// bottom-left, bottom-right. Caller guarantees bounds.
    pub fn block(&self, left: u32, top: u32, cell: u32) -> Block {
        let mut out = [0.0; BLOCK_LEN];
        let origins = [
            (left, top),
            (left + cell, top),
            (left, top + cell),
            (left + cell, top + cell),
        ];
        for (k, (cx, cy)) in origins.into_iter().enumerate() {
            let h = self.cell_histogram(cx, cy, cell);
            out[k * ORIENTATION_BINS..(k + 1) * ORIENTATION_BINS].copy_from_slice(&h);
        }
        normalize_block(&mut out);
        out
    }

    pub fn block_fits(&self, left: u32, top: u32, cell: u32) -> bool {
        left as u64 + 2 * cell as u64 <= self.width as u64
            && top as u64 + 2 * cell as u64 <= self.height as u64
    }
}

fn normalize_block(v: &mut Block) {
    let norm = (v.iter().map(|x| x * x).sum::<f64>() + NORM_EPS).sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

/// 36-dim descriptor of the 10x10 block at (block_left, block_top).
pub fn hog_descriptor(img: &GrayImage, block_left: u32, block_top: u32) -> Result<Block> {
    let votes = GradientVotes::new(img);
    if !votes.block_fits(block_left, block_top, DESCRIPTOR_CELL) {
        return Err(Error::Precondition(format!(
            "10x10 block at ({block_left}, {block_top}) exceeds {}x{} image",
            img.width(),
            img.height()
        )));
    }
    Ok(votes.block(block_left, block_top, DESCRIPTOR_CELL))
}
