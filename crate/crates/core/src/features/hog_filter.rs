use super::hog::{GradientVotes, BLOCK_LEN, ORIENTATION_BINS};
use super::{FeatureMap, FeatureMapConfig, FeatureVector, GrayImage, LevelFeatures, WindowGrid};
use crate::error::{Error, Result};
use crate::geom::Rect;

/// Whole-window HOG: the window is tiled into `cell_size` cells, each
/// described by one normalized 2x2 block of `cell_size / 2` sub-cells, plus a
/// constant bias entry.
pub struct HogFilterMap {
    cfg: FeatureMapConfig,
}

impl HogFilterMap {
    pub fn new(cfg: FeatureMapConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }
}

impl FeatureMap for HogFilterMap {
    fn name(&self) -> &'static str {
        "hog-filter"
    }

    fn config(&self) -> &FeatureMapConfig {
        &self.cfg
    }

    fn prepare(&self, level: &GrayImage) -> Box<dyn LevelFeatures> {
        Box::new(HogFilterLevel::new(level, &self.cfg))
    }
}

struct HogFilterLevel {
    votes: GradientVotes,
    cells_x: u32,
    cells_y: u32,
    cell: u32,
    dim: usize,
}

impl HogFilterLevel {
    fn new(img: &GrayImage, cfg: &FeatureMapConfig) -> Self {
        Self {
            votes: GradientVotes::new(img),
            cells_x: cfg.window_width / cfg.cell_size,
            cells_y: cfg.window_height / cfg.cell_size,
            cell: cfg.cell_size,
            dim: cfg.dim(),
        }
    }
}

impl LevelFeatures for HogFilterLevel {
    fn width(&self) -> u32 {
        self.votes.width()
    }

    fn height(&self) -> u32 {
        self.votes.height()
    }

    fn extract(&self, x: u32, y: u32) -> FeatureVector {
        let mut entries = Vec::new();
        for j in 0..self.cells_y {
            for i in 0..self.cells_x {
                let block = self
                    .votes
                    .block(x + i * self.cell, y + j * self.cell, self.cell / 2);
                let base = ((j * self.cells_x + i) as usize * BLOCK_LEN) as u32;
                for (k, &v) in block.iter().enumerate() {
                    if v != 0.0 {
                        entries.push((base + k as u32, v));
                    }
                }
            }
        }
        entries.push(((self.dim - 1) as u32, 1.0));
        FeatureVector::from_sorted(self.dim, entries)
    }

    fn score_grid(&self, w: &[f64], grid: &WindowGrid) -> Vec<f64> {
        // Blocks are shared between overlapping windows; compute each needed
        // block origin once. Accumulation order matches FeatureVector::dot.
        let needed = |starts: &[u32], cells: u32, len: u32| -> Vec<Option<usize>> {
            let mut slot = vec![None; len as usize];
            for &s in starts {
                for c in 0..cells {
                    slot[(s + c * self.cell) as usize] = Some(0);
                }
            }
            for (next, v) in slot.iter_mut().flatten().enumerate() {
                *v = next;
            }
            slot
        };
        let col = needed(&grid.xs, self.cells_x, self.width());
        let row = needed(&grid.ys, self.cells_y, self.height());
        let ncols = col.iter().flatten().count();
        let nrows = row.iter().flatten().count();
        let mut blocks = vec![[0.0; BLOCK_LEN]; ncols * nrows];
        for (by, r) in row.iter().enumerate() {
            let Some(r) = r else { continue };
            for (bx, c) in col.iter().enumerate() {
                let Some(c) = c else { continue };
                blocks[r * ncols + c] = self.votes.block(bx as u32, by as u32, self.cell / 2);
            }
        }

        let bias = w[self.dim - 1];
        grid.positions()
            .map(|(x, y)| {
                let mut acc = 0.0;
                for j in 0..self.cells_y {
                    let r = row[(y + j * self.cell) as usize].unwrap();
                    for i in 0..self.cells_x {
                        let c = col[(x + i * self.cell) as usize].unwrap();
                        let block = &blocks[r * ncols + c];
                        let base = (j * self.cells_x + i) as usize * BLOCK_LEN;
                        let wb = &w[base..base + BLOCK_LEN];
                        for k in 0..BLOCK_LEN {
                            if block[k] != 0.0 {
                                acc += wb[k] * block[k];
                            }
                        }
                    }
                }
                acc + bias * 1.0
            })
            .collect()
    }
}

/// Whole-window HOG features of `window` on one pyramid level.
pub fn extract_hog_filter(
    level: &GrayImage,
    window: Rect,
    cfg: &FeatureMapConfig,
) -> Result<FeatureVector> {
    cfg.validate()?;
    if window.width != cfg.window_width as i64 || window.height != cfg.window_height as i64 {
        return Err(Error::Precondition(format!(
            "window {}x{} does not match configured {}x{}",
            window.width, window.height, cfg.window_width, cfg.window_height
        )));
    }
    let bounds = Rect::new(0, 0, level.width() as i64, level.height() as i64);
    if !bounds.contains_rect(&window) {
        return Err(Error::Precondition(format!(
            "window {window:?} outside {}x{} image",
            level.width(),
            level.height()
        )));
    }
    Ok(HogFilterLevel::new(level, cfg).extract(window.left as u32, window.top as u32))
}

/// Permutation `p` such that mirroring the image and the window maps feature
/// index `i` to index `p[i]`.
pub fn mirror_permutation(cfg: &FeatureMapConfig) -> Vec<usize> {
    let cells_x = (cfg.window_width / cfg.cell_size) as usize;
    let cells_y = (cfg.window_height / cfg.cell_size) as usize;
    let mut perm = vec![0; cfg.dim()];
    for j in 0..cells_y {
        for i in 0..cells_x {
            let src_cell = j * cells_x + i;
            let dst_cell = j * cells_x + (cells_x - 1 - i);
            for sub in 0..4 {
                // sub-cells: 0 TL, 1 TR, 2 BL, 3 BR
                let dst_sub = sub ^ 1;
                for b in 0..ORIENTATION_BINS {
                    let src = src_cell * BLOCK_LEN + sub * ORIENTATION_BINS + b;
                    let dst = dst_cell * BLOCK_LEN
                        + dst_sub * ORIENTATION_BINS
                        + (ORIENTATION_BINS - 1 - b);
                    perm[src] = dst;
                }
            }
        }
    }
    let last = perm.len() - 1;
    perm[last] = last;
    perm
}
