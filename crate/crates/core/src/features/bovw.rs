//! Spatial-pyramid bag of visual words over per-pixel HOG descriptors.

use std::collections::BTreeMap;

use super::hog::{GradientVotes, DESCRIPTOR_CELL};
use super::lsh::{lsh_hash, Plane, LSH_BINS};
use super::{FeatureMap, FeatureMapConfig, FeatureVector, GrayImage, LevelFeatures, WindowGrid};
use crate::error::{Error, Result};
use crate::geom::Rect;

pub const BOVW_GRID: u32 = 6;
pub const NO_WORD: u16 = u16::MAX;

/// Visual word of every pixel whose centered 10x10 block fits in the image;
/// [`NO_WORD`] elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct WordMap {
    width: u32,
    height: u32,
    words: Vec<u16>,
}

impl WordMap {
    pub fn compute(img: &GrayImage, planes: &[Plane]) -> Self {
        let votes = GradientVotes::new(img);
        let (w, h) = (img.width(), img.height());
        let half = DESCRIPTOR_CELL;
        let mut words = vec![NO_WORD; w as usize * h as usize];
        if w >= 2 * half && h >= 2 * half {
            for y in half..=h - half {
                for x in half..=w - half {
                    let block = votes.block(x - half, y - half, half);
                    words[(y * w + x) as usize] = lsh_hash(&block, planes) as u16;
                }
            }
        }
        Self {
            width: w,
            height: h,
            words,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.words[(y * self.width + x) as usize]
    }

    /// Number of pixels carrying a word inside `r`.
    pub fn described_pixels(&self, r: &Rect) -> usize {
        let mut n = 0;
        for y in r.top..r.bottom() {
            for x in r.left..r.right() {
                if self.get(x as u32, y as u32) != NO_WORD {
                    n += 1;
                }
            }
        }
        n
    }
}

/// Summed-area tables of word occurrences, one per word present in the map.
pub struct BinIntegrals {
    stride: usize,
    tables: BTreeMap<u16, Vec<u32>>,
}

impl BinIntegrals {
    pub fn new(words: &WordMap) -> Self {
        let (w, h) = (words.width as usize, words.height as usize);
        let stride = w + 1;
        let mut tables: BTreeMap<u16, Vec<u32>> = BTreeMap::new();
        for &word in &words.words {
            if word != NO_WORD {
                tables.entry(word).or_default();
            }
        }
        for (&word, table) in tables.iter_mut() {
            table.resize(stride * (h + 1), 0);
            for y in 0..h {
                let mut row = 0u32;
                for x in 0..w {
                    row += (words.words[y * w + x] == word) as u32;
                    table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
                }
            }
        }
        Self { stride, tables }
    }

    fn count(table: &[u32], stride: usize, r: &Rect) -> u32 {
        let (l, t, rt, b) = (
            r.left as usize,
            r.top as usize,
            r.right() as usize,
            r.bottom() as usize,
        );
        table[b * stride + rt] + table[t * stride + l]
            - table[t * stride + rt]
            - table[b * stride + l]
    }
}

/// Grid cell rectangles of a window, row-major.
fn grid_cells(window: &Rect) -> Vec<Rect> {
    let g = BOVW_GRID as i64;
    let edge = |start: i64, len: i64, k: i64| start + k * len / g;
    let mut cells = Vec::with_capacity((g * g) as usize);
    for cy in 0..g {
        for cx in 0..g {
            let l = edge(window.left, window.width, cx);
            let r = edge(window.left, window.width, cx + 1);
            let t = edge(window.top, window.height, cy);
            let b = edge(window.top, window.height, cy + 1);
            cells.push(Rect::new(l, t, r - l, b - t));
        }
    }
    cells
}

fn check_window(words: &WordMap, window: &Rect, cfg: &FeatureMapConfig) -> Result<()> {
    if window.width != cfg.window_width as i64 || window.height != cfg.window_height as i64 {
        return Err(Error::Precondition(format!(
            "window {}x{} does not match configured {}x{}",
            window.width, window.height, cfg.window_width, cfg.window_height
        )));
    }
    let bounds = Rect::new(0, 0, words.width as i64, words.height as i64);
    if !bounds.contains_rect(window) {
        return Err(Error::Precondition(format!(
            "window {window:?} outside {}x{} image",
            words.width, words.height
        )));
    }
    Ok(())
}

fn naive_vector(words: &WordMap, window: &Rect, dim: usize) -> FeatureVector {
    let mut entries = Vec::new();
    let mut counts = vec![0u32; LSH_BINS];
    let mut touched = Vec::new();
    for (c, cell) in grid_cells(window).iter().enumerate() {
        for y in cell.top..cell.bottom() {
            for x in cell.left..cell.right() {
                let word = words.get(x as u32, y as u32);
                if word != NO_WORD {
                    if counts[word as usize] == 0 {
                        touched.push(word);
                    }
                    counts[word as usize] += 1;
                }
            }
        }
        touched.sort_unstable();
        let base = (c * LSH_BINS) as u32;
        for &word in &touched {
            entries.push((base + word as u32, counts[word as usize] as f64));
            counts[word as usize] = 0;
        }
        touched.clear();
    }
    entries.push(((dim - 1) as u32, 1.0));
    FeatureVector::from_sorted(dim, entries)
}

/// Bag-of-words features by direct per-pixel accumulation.
pub fn extract_bovw_naive(
    words: &WordMap,
    window: Rect,
    cfg: &FeatureMapConfig,
) -> Result<FeatureVector> {
    check_window(words, &window, cfg)?;
    Ok(naive_vector(words, &window, cfg.dim()))
}

/// Bag-of-words features from summed-area tables: four lookups per grid
/// cell and word.
pub fn extract_bovw(
    words: &WordMap,
    window: Rect,
    cfg: &FeatureMapConfig,
    integrals: &BinIntegrals,
) -> Result<FeatureVector> {
    check_window(words, &window, cfg)?;
    let dim = cfg.dim();
    let mut entries = Vec::new();
    for (c, cell) in grid_cells(&window).iter().enumerate() {
        let base = (c * LSH_BINS) as u32;
        for (&word, table) in &integrals.tables {
            let n = BinIntegrals::count(table, integrals.stride, cell);
            if n > 0 {
                entries.push((base + word as u32, n as f64));
            }
        }
    }
    entries.push(((dim - 1) as u32, 1.0));
    Ok(FeatureVector::from_sorted(dim, entries))
}

pub struct BovwMap {
    cfg: FeatureMapConfig,
}

impl BovwMap {
    pub fn new(cfg: FeatureMapConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }
}

impl FeatureMap for BovwMap {
    fn name(&self) -> &'static str {
        "bovw"
    }

    fn config(&self) -> &FeatureMapConfig {
        &self.cfg
    }

    fn prepare(&self, level: &GrayImage) -> Box<dyn LevelFeatures> {
        Box::new(BovwLevel {
            words: WordMap::compute(level, &self.cfg.lsh_planes),
            window_width: self.cfg.window_width,
            window_height: self.cfg.window_height,
            dim: self.cfg.dim(),
        })
    }
}

struct BovwLevel {
    words: WordMap,
    window_width: u32,
    window_height: u32,
    dim: usize,
}

impl LevelFeatures for BovwLevel {
    fn width(&self) -> u32 {
        self.words.width
    }

    fn height(&self) -> u32 {
        self.words.height
    }

    fn extract(&self, x: u32, y: u32) -> FeatureVector {
        let window = Rect::new(
            x as i64,
            y as i64,
            self.window_width as i64,
            self.window_height as i64,
        );
        naive_vector(&self.words, &window, self.dim)
    }

    /// One summed-area table of per-pixel weights for each grid cell, so a
    /// window costs four lookups per cell regardless of its size.
    fn score_grid(&self, w: &[f64], grid: &WindowGrid) -> Vec<f64> {
        if grid.is_empty() {
            return Vec::new();
        }
        let (iw, ih) = (self.words.width as usize, self.words.height as usize);
        let stride = iw + 1;
        let cells = (BOVW_GRID * BOVW_GRID) as usize;
        let mut tables = vec![vec![0.0f64; stride * (ih + 1)]; cells];
        for (c, table) in tables.iter_mut().enumerate() {
            let wc = &w[c * LSH_BINS..(c + 1) * LSH_BINS];
            for y in 0..ih {
                let mut row = 0.0;
                for x in 0..iw {
                    let word = self.words.words[y * iw + x];
                    if word != NO_WORD {
                        row += wc[word as usize];
                    }
                    table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
                }
            }
        }
        let template = grid_cells(&Rect::new(
            0,
            0,
            self.window_width as i64,
            self.window_height as i64,
        ));
        let bias = w[self.dim - 1];
        grid.positions()
            .map(|(x, y)| {
                let mut acc = 0.0;
                for (c, cell) in template.iter().enumerate() {
                    let l = x as usize + cell.left as usize;
                    let t = y as usize + cell.top as usize;
                    let r = l + cell.width as usize;
                    let b = t + cell.height as usize;
                    let tb = &tables[c];
                    acc += tb[b * stride + r] - tb[t * stride + r] - tb[b * stride + l]
                        + tb[t * stride + l];
                }
                acc + bias
            })
            .collect()
    }
}
