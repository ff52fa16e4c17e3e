//! Linear window feature maps and the registry that selects them by name.
//!
//! A [`FeatureMap`] turns one pyramid level into a [`LevelFeatures`], which
//! can both extract the feature vector of a single window and score every
//! window position on a grid against a weight vector. The two paths agree:
//! scoring is an accelerated form of `<w, extract(window)>`.

mod bovw;
mod gray;
mod hog;
mod hog_filter;
mod lsh;
mod pyramid;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bovw::{
    extract_bovw, extract_bovw_naive, BinIntegrals, BovwMap, WordMap, BOVW_GRID, NO_WORD,
};
pub use gray::GrayImage;
pub use hog::{
    hog_descriptor, Block, GradientVotes, BLOCK_LEN, DESCRIPTOR_CELL, NORM_EPS, ORIENTATION_BINS,
};
pub use hog_filter::{extract_hog_filter, mirror_permutation, HogFilterMap};
pub use lsh::{lsh_hash, sample_planes, Plane, LSH_BINS, LSH_PLANES};
pub use pyramid::{build_pyramid, ImagePyramid, PyramidLevel};

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn new(dim: usize, entries: Vec<(u32, f64)>) -> Result<Self> {
        for pair in entries.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(Error::Precondition(
                    "feature indices must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&(last, _)) = entries.last() {
            if last as usize >= dim {
                return Err(Error::Precondition(format!(
                    "feature index {last} out of range for dim {dim}"
                )));
            }
        }
        Ok(Self { dim, entries })
    }

    pub(crate) fn from_sorted(dim: usize, entries: Vec<(u32, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|p| p[0].0 < p[1].0));
        Self { dim, entries }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .collect();
        Self {
            dim: values.len(),
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }

    /// `out += scale * self`
    pub fn add_scaled_to(&self, out: &mut [f64], scale: f64) {
        debug_assert_eq!(out.len(), self.dim);
        for &(i, v) in &self.entries {
            out[i as usize] += scale * v;
        }
    }

    pub fn dot(&self, w: &[f64]) -> Result<f64> {
        if w.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: w.len(),
            });
        }
        Ok(self.dot_unchecked(w))
    }

    pub(crate) fn dot_unchecked(&self, w: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &(i, v) in &self.entries {
            acc += w[i as usize] * v;
        }
        acc
    }
}

/// Window score `<w, phi(x, r)>`.
pub fn score_window(w: &[f64], fv: &FeatureVector) -> Result<f64> {
    fv.dot(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    BovwSpatialPyramid,
    HogFilter,
}

impl FeatureKind {
    /// Registry name.
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::BovwSpatialPyramid => "bovw",
            FeatureKind::HogFilter => "hog-filter",
        }
    }

    pub fn tag(self) -> u64 {
        match self {
            FeatureKind::BovwSpatialPyramid => 1,
            FeatureKind::HogFilter => 2,
        }
    }

    pub fn from_tag(tag: u64) -> Option<Self> {
        match tag {
            1 => Some(FeatureKind::BovwSpatialPyramid),
            2 => Some(FeatureKind::HogFilter),
            _ => None,
        }
    }
}

/// Everything that fixes the feature map and the scan geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapConfig {
    pub kind: FeatureKind,
    pub window_width: u32,
    pub window_height: u32,
    /// Spatial grid of the bag-of-words map.
    pub grid: (u32, u32),
    pub lsh_planes: Vec<Plane>,
    pub hash_seed: u64,
    /// Cell side of the whole-window HOG map; each cell carries one 2x2 block
    /// of `cell_size / 2` pixel sub-cells.
    pub cell_size: u32,
    /// Per-level shrink factor as `(num, den)`.
    pub pyramid_downsample: (u32, u32),
    pub min_pyramid_pixels: u64,
    pub upsample_factor: u32,
    /// Window step in level pixels.
    pub stride: u32,
}

impl FeatureMapConfig {
    pub fn bovw(window_width: u32, window_height: u32, hash_seed: u64) -> Self {
        Self {
            kind: FeatureKind::BovwSpatialPyramid,
            window_width,
            window_height,
            grid: (BOVW_GRID, BOVW_GRID),
            lsh_planes: sample_planes(hash_seed, LSH_PLANES),
            hash_seed,
            cell_size: 2 * DESCRIPTOR_CELL,
            pyramid_downsample: (4, 5),
            min_pyramid_pixels: window_width as u64 * window_height as u64,
            upsample_factor: 1,
            stride: 1,
        }
    }

    pub fn hog_filter(window_width: u32, window_height: u32, cell_size: u32) -> Self {
        Self {
            kind: FeatureKind::HogFilter,
            window_width,
            window_height,
            grid: (1, 1),
            lsh_planes: Vec::new(),
            hash_seed: 0,
            cell_size,
            pyramid_downsample: (4, 5),
            min_pyramid_pixels: window_width as u64 * window_height as u64,
            upsample_factor: 1,
            stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.window_width == 0 || self.window_height == 0 {
            return bad("window dimensions must be positive".into());
        }
        if self.stride == 0 {
            return bad("stride must be positive".into());
        }
        if !matches!(self.upsample_factor, 1 | 2) {
            return bad(format!(
                "upsample factor must be 1 or 2, got {}",
                self.upsample_factor
            ));
        }
        let (num, den) = self.pyramid_downsample;
        if num == 0 || num >= den {
            return bad(format!("pyramid downsample {num}/{den} must lie in (0, 1)"));
        }
        match self.kind {
            FeatureKind::BovwSpatialPyramid => {
                if self.lsh_planes.len() != LSH_PLANES {
                    return bad(format!(
                        "bag-of-words map needs {LSH_PLANES} hash planes, got {}",
                        self.lsh_planes.len()
                    ));
                }
                if self.grid != (BOVW_GRID, BOVW_GRID) {
                    return bad(format!("bag-of-words grid must be {BOVW_GRID}x{BOVW_GRID}"));
                }
                if self.window_width < BOVW_GRID || self.window_height < BOVW_GRID {
                    return bad("window smaller than the spatial grid".into());
                }
            }
            FeatureKind::HogFilter => {
                let c = self.cell_size;
                if c == 0 || !c.is_multiple_of(2) {
                    return bad(format!("cell size must be even and positive, got {c}"));
                }
                if !self.window_width.is_multiple_of(c) || !self.window_height.is_multiple_of(c) {
                    return bad(format!(
                        "window {}x{} is not divisible by cell size {c}",
                        self.window_width, self.window_height
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            FeatureKind::BovwSpatialPyramid => (self.grid.0 * self.grid.1) as usize * LSH_BINS + 1,
            FeatureKind::HogFilter => {
                let cells = (self.window_width / self.cell_size.max(1)) as usize
                    * (self.window_height / self.cell_size.max(1)) as usize;
                cells * BLOCK_LEN + 1
            }
        }
    }
}

/// Window positions scanned on one level: every `stride` pixels such that the
/// window stays inside the level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowGrid {
    pub xs: Vec<u32>,
    pub ys: Vec<u32>,
}

impl WindowGrid {
    pub fn new(level_w: u32, level_h: u32, win_w: u32, win_h: u32, stride: u32) -> Self {
        let axis = |len: u32, win: u32| -> Vec<u32> {
            if len < win {
                Vec::new()
            } else {
                (0..=len - win).step_by(stride as usize).collect()
            }
        };
        Self {
            xs: axis(level_w, win_w),
            ys: axis(level_h, win_h),
        }
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Positions in scan order (row, then column).
    pub fn positions(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.ys
            .iter()
            .flat_map(move |&y| self.xs.iter().map(move |&x| (x, y)))
    }
}

/// One pyramid level prepared for a particular feature map.
pub trait LevelFeatures: Send + Sync {
    fn width(&self) -> u32;
    fn height(&self) -> u32;

    /// Features of the window whose top-left corner is (x, y).
    fn extract(&self, x: u32, y: u32) -> FeatureVector;

    /// Scores of every grid position, in [`WindowGrid::positions`] order.
    fn score_grid(&self, w: &[f64], grid: &WindowGrid) -> Vec<f64> {
        grid.positions()
            .map(|(x, y)| self.extract(x, y).dot_unchecked(w))
            .collect()
    }
}

/// A linear window feature map `phi(x, r)`.
pub trait FeatureMap: Send + Sync {
    fn name(&self) -> &'static str;
    fn config(&self) -> &FeatureMapConfig;

    fn dim(&self) -> usize {
        self.config().dim()
    }

    fn window_size(&self) -> (u32, u32) {
        let c = self.config();
        (c.window_width, c.window_height)
    }

    fn prepare(&self, level: &GrayImage) -> Box<dyn LevelFeatures>;
}

type Builder = fn(&FeatureMapConfig) -> Result<Box<dyn FeatureMap>>;
type Defaults = fn(u32, u32, u64) -> FeatureMapConfig;

pub struct RegistryEntry {
    pub name: &'static str,
    pub kind: FeatureKind,
    pub description: &'static str,
    /// Default configuration for a window size and hash seed.
    pub defaults: Defaults,
    pub build: Builder,
}

/// Feature maps available by name.
pub struct FeatureMapRegistry {
    entries: Vec<RegistryEntry>,
}

impl Default for FeatureMapRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: Vec::new(),
        };
        r.register(RegistryEntry {
            name: FeatureKind::BovwSpatialPyramid.name(),
            kind: FeatureKind::BovwSpatialPyramid,
            description: "6x6 spatial pyramid of 2048-word LSH-hashed HOG histograms",
            defaults: FeatureMapConfig::bovw,
            build: |cfg| Ok(Box::new(BovwMap::new(cfg.clone())?)),
        });
        r.register(RegistryEntry {
            name: FeatureKind::HogFilter.name(),
            kind: FeatureKind::HogFilter,
            description: "whole-window HOG filter, one 36-dim block per cell",
            defaults: |w, h, _| FeatureMapConfig::hog_filter(w, h, 2 * DESCRIPTOR_CELL),
            build: |cfg| Ok(Box::new(HogFilterMap::new(cfg.clone())?)),
        });
        r
    }
}

impl FeatureMapRegistry {
    pub fn register(&mut self, entry: RegistryEntry) {
        self.entries.retain(|e| e.name != entry.name);
        self.entries.push(entry);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name).collect()
    }

    pub fn get(&self, name: &str) -> Option<&RegistryEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn default_config(
        &self,
        name: &str,
        w: u32,
        h: u32,
        seed: u64,
    ) -> Result<FeatureMapConfig> {
        let entry = self.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown feature map '{name}' (available: {})",
                self.names().join(", ")
            ))
        })?;
        Ok((entry.defaults)(w, h, seed))
    }

    pub fn build(&self, cfg: &FeatureMapConfig) -> Result<Box<dyn FeatureMap>> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.kind == cfg.kind)
            .ok_or_else(|| {
                Error::Config(format!("no feature map registered for {:?}", cfg.kind))
            })?;
        (entry.build)(cfg)
    }
}

/// Builds the feature map for `cfg` from the default registry.
pub fn build_feature_map(cfg: &FeatureMapConfig) -> Result<Box<dyn FeatureMap>> {
    FeatureMapRegistry::default().build(cfg)
}
