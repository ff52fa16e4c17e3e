//! Sliding-window scanning and greedy non-max suppression.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledImage;
use crate::error::{Error, Result};
use crate::features::{
    build_feature_map, build_pyramid, FeatureMap, FeatureMapConfig, FeatureVector, GrayImage,
    LevelFeatures, WindowGrid,
};
use crate::geom::{detection_loss, overlap_ratio, LossWeights, OverlapRule, Rect};

pub const DEFAULT_MAX_CANDIDATES: usize = 100_000;

/// Runtime knobs shared by detection and training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub overlap: OverlapRule,
    /// Per-image cap on scored candidates; the highest-scoring are kept.
    pub max_candidates: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            overlap: OverlapRule::default(),
            max_candidates: DEFAULT_MAX_CANDIDATES,
        }
    }
}

/// Window position in pyramid coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowLoc {
    pub level: u32,
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Window in original-image coordinates.
    pub rect: Rect,
    pub score: f64,
    pub loc: WindowLoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub rect: Rect,
    pub score: f64,
    pub level: u32,
}

/// The scannable windows of one image.
pub trait ImageWindows: Send + Sync {
    fn dim(&self) -> usize;

    /// Every window scoring strictly above `threshold`, in scan order
    /// (level, row, column).
    fn scan(&self, w: &[f64], threshold: f64) -> Vec<Candidate>;

    fn features(&self, loc: WindowLoc) -> FeatureVector;

    fn rect_of(&self, loc: WindowLoc) -> Rect;

    fn window_count(&self) -> usize;

    /// The scan window that best covers `target`, with its overlap ratio.
    fn snap(&self, target: &Rect) -> Option<(WindowLoc, f64)>;
}

struct PreparedLevel {
    features: Box<dyn LevelFeatures>,
    grid: WindowGrid,
    to_original: f64,
}

/// An image pyramid with every level prepared for one feature map.
pub struct PreparedImage {
    levels: Vec<PreparedLevel>,
    dim: usize,
    window: (u32, u32),
    stride: u32,
}

impl PreparedImage {
    pub fn new(img: &GrayImage, map: &dyn FeatureMap) -> Self {
        let cfg = map.config();
        let pyramid = build_pyramid(img, cfg);
        let (ww, wh) = map.window_size();
        let levels = pyramid
            .levels
            .iter()
            .map(|l| PreparedLevel {
                features: map.prepare(&l.image),
                grid: WindowGrid::new(l.image.width(), l.image.height(), ww, wh, cfg.stride),
                to_original: l.to_original,
            })
            .collect();
        Self {
            levels,
            dim: map.dim(),
            window: (ww, wh),
            stride: cfg.stride,
        }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Maps a level-space window back to the original image.
fn map_to_original(x: u32, y: u32, window: (u32, u32), f: f64) -> Rect {
    let round = |v: f64| v.round() as i64;
    Rect::new(
        round(x as f64 * f),
        round(y as f64 * f),
        round(window.0 as f64 * f).max(1),
        round(window.1 as f64 * f).max(1),
    )
}

impl ImageWindows for PreparedImage {
    fn dim(&self) -> usize {
        self.dim
    }

    fn scan(&self, w: &[f64], threshold: f64) -> Vec<Candidate> {
        let per_level: Vec<Vec<Candidate>> = self
            .levels
            .par_iter()
            .enumerate()
            .map(|(li, level)| {
                let scores = level.features.score_grid(w, &level.grid);
                level
                    .grid
                    .positions()
                    .zip(scores)
                    .filter(|(_, s)| *s > threshold)
                    .map(|((x, y), score)| Candidate {
                        rect: map_to_original(x, y, self.window, level.to_original),
                        score,
                        loc: WindowLoc {
                            level: li as u32,
                            x,
                            y,
                        },
                    })
                    .collect()
            })
            .collect();
        per_level.into_iter().flatten().collect()
    }

    fn features(&self, loc: WindowLoc) -> FeatureVector {
        self.levels[loc.level as usize]
            .features
            .extract(loc.x, loc.y)
    }

    fn rect_of(&self, loc: WindowLoc) -> Rect {
        map_to_original(
            loc.x,
            loc.y,
            self.window,
            self.levels[loc.level as usize].to_original,
        )
    }

    fn window_count(&self) -> usize {
        self.levels.iter().map(|l| l.grid.len()).sum()
    }

    fn snap(&self, target: &Rect) -> Option<(WindowLoc, f64)> {
        let mut best: Option<(WindowLoc, f64)> = None;
        for (li, level) in self.levels.iter().enumerate() {
            if level.grid.is_empty() {
                continue;
            }
            let f = level.to_original;
            let near = |axis: &[u32], origin: i64| -> Vec<u32> {
                let ideal = origin as f64 / f / self.stride as f64;
                let i = ideal.floor() as i64;
                (i - 1..=i + 2)
                    .filter(|&k| k >= 0 && (k as usize) < axis.len())
                    .map(|k| axis[k as usize])
                    .collect()
            };
            for &y in &near(&level.grid.ys, target.top) {
                for &x in &near(&level.grid.xs, target.left) {
                    let ratio = overlap_ratio(&map_to_original(x, y, self.window, f), target);
                    if best.is_none_or(|(_, b)| ratio > b) {
                        best = Some((
                            WindowLoc {
                                level: li as u32,
                                x,
                                y,
                            },
                            ratio,
                        ));
                    }
                }
            }
        }
        best
    }
}

/// Stable sort by descending score; equal scores keep scan order.
pub fn sort_candidates(cands: &mut [Candidate]) {
    cands.sort_by(|a, b| b.score.total_cmp(&a.score));
}

/// Sorts and keeps at most `max` candidates.
pub fn rank_candidates(mut cands: Vec<Candidate>, max: usize) -> Vec<Candidate> {
    sort_candidates(&mut cands);
    cands.truncate(max);
    cands
}

/// Greedy suppression over rects already in descending score order: a rect
/// is accepted iff it overlaps no previously accepted rect. Returns the
/// accepted indices.
pub fn greedy_suppress(rects: &[Rect], rule: &OverlapRule) -> Vec<usize> {
    let mut accepted: Vec<usize> = Vec::new();
    for (i, r) in rects.iter().enumerate() {
        if accepted.iter().all(|&a| !rule.overlaps(&rects[a], r)) {
            accepted.push(i);
        }
    }
    accepted
}

/// Greedy detection over scored rects in any order; returns (rect, score)
/// pairs in acceptance order. Only scores above `threshold` are considered.
pub fn greedy_detect(
    scored: &[(Rect, f64)],
    threshold: f64,
    rule: &OverlapRule,
) -> Vec<(Rect, f64)> {
    let mut kept: Vec<(Rect, f64)> = scored
        .iter()
        .copied()
        .filter(|(_, s)| *s > threshold)
        .collect();
    kept.sort_by(|a, b| b.1.total_cmp(&a.1));
    let rects: Vec<Rect> = kept.iter().map(|c| c.0).collect();
    greedy_suppress(&rects, rule)
        .into_iter()
        .map(|i| kept[i])
        .collect()
}

/// Runs detection on prepared windows.
pub fn detect_windows(
    windows: &dyn ImageWindows,
    w: &[f64],
    threshold: f64,
    opts: &ScanOptions,
) -> Vec<Detection> {
    let ranked = rank_candidates(windows.scan(w, threshold), opts.max_candidates);
    suppress_candidates(&ranked, opts)
}

pub(crate) fn suppress_candidates(ranked: &[Candidate], opts: &ScanOptions) -> Vec<Detection> {
    let rects: Vec<Rect> = ranked.iter().map(|c| c.rect).collect();
    greedy_suppress(&rects, &opts.overlap)
        .into_iter()
        .map(|i| Detection {
            rect: ranked[i].rect,
            score: ranked[i].score,
            level: ranked[i].loc.level,
        })
        .collect()
}

/// Feature configuration plus learned weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub feature_cfg: FeatureMapConfig,
    pub w: Vec<f64>,
    pub threshold_offset: f64,
}

impl Model {
    pub fn new(feature_cfg: FeatureMapConfig, w: Vec<f64>) -> Result<Self> {
        feature_cfg.validate()?;
        if w.len() != feature_cfg.dim() {
            return Err(Error::DimensionMismatch {
                expected: feature_cfg.dim(),
                actual: w.len(),
            });
        }
        Ok(Self {
            feature_cfg,
            w,
            threshold_offset: 0.0,
        })
    }

    pub fn feature_map(&self) -> Result<Box<dyn FeatureMap>> {
        build_feature_map(&self.feature_cfg)
    }

    pub fn prepare(&self, img: &GrayImage) -> Result<PreparedImage> {
        Ok(PreparedImage::new(img, self.feature_map()?.as_ref()))
    }
}

/// Every window scoring above `threshold`, in original coordinates.
pub fn scan_candidates(img: &GrayImage, model: &Model, threshold: f64) -> Result<Vec<(Rect, f64)>> {
    let prepared = model.prepare(img)?;
    Ok(prepared
        .scan(&model.w, threshold + model.threshold_offset)
        .into_iter()
        .map(|c| (c.rect, c.score))
        .collect())
}

pub fn detect(
    img: &GrayImage,
    model: &Model,
    threshold: f64,
    opts: &ScanOptions,
) -> Result<Vec<Detection>> {
    let prepared = model.prepare(img)?;
    Ok(detect_windows(
        &prepared,
        &model.w,
        threshold + model.threshold_offset,
        opts,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRow {
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub missed: usize,
    pub recall: f64,
    /// False positives per scanned window.
    pub fppw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocTable {
    pub total_windows: usize,
    pub total_truth: usize,
    pub rows: Vec<RocRow>,
}

/// Detection counts at each threshold, accumulated over a labeled set.
pub fn sweep_thresholds(
    imgs: &[LabeledImage],
    model: &Model,
    thresholds: &[f64],
    opts: &ScanOptions,
) -> Result<RocTable> {
    if thresholds.is_empty() {
        return Err(Error::Config("empty threshold list".into()));
    }
    if thresholds.windows(2).any(|p| p[0] > p[1]) {
        return Err(Error::Config("thresholds must be sorted ascending".into()));
    }
    let map = model.feature_map()?;
    let lowest = thresholds[0] + model.threshold_offset;
    let per_image: Vec<(usize, Vec<(usize, usize)>)> = imgs
        .par_iter()
        .map(|li| {
            let prepared = PreparedImage::new(&li.image, map.as_ref());
            let ranked = rank_candidates(prepared.scan(&model.w, lowest), opts.max_candidates);
            let counts = thresholds
                .iter()
                .map(|&t| {
                    let t = t + model.threshold_offset;
                    let above: Vec<Candidate> =
                        ranked.iter().copied().filter(|c| c.score > t).collect();
                    let dets: Vec<Rect> = suppress_candidates(&above, opts)
                        .iter()
                        .map(|d| d.rect)
                        .collect();
                    let l = detection_loss(
                        &dets,
                        li.truth.rects(),
                        &LossWeights::default(),
                        &opts.overlap,
                    );
                    (l.missed, l.false_alarms)
                })
                .collect();
            (prepared.window_count(), counts)
        })
        .collect();

    let total_windows: usize = per_image.iter().map(|p| p.0).sum();
    let total_truth: usize = imgs.iter().map(|i| i.truth.len()).sum();
    let rows = thresholds
        .iter()
        .enumerate()
        .map(|(k, &threshold)| {
            let missed: usize = per_image.iter().map(|p| p.1[k].0).sum();
            let fp: usize = per_image.iter().map(|p| p.1[k].1).sum();
            let tp = total_truth - missed;
            RocRow {
                threshold,
                true_positives: tp,
                false_positives: fp,
                missed,
                recall: if total_truth == 0 {
                    1.0
                } else {
                    tp as f64 / total_truth as f64
                },
                fppw: if total_windows == 0 {
                    0.0
                } else {
                    fp as f64 / total_windows as f64
                },
            }
        })
        .collect();
    Ok(RocTable {
        total_windows,
        total_truth,
        rows,
    })
}
