//! Loss-augmented detection: the separation oracle that yields the empirical
//! risk and one of its subgradients.

use rayon::prelude::*;

use crate::dataset::LabeledImage;
use crate::detector::{
    rank_candidates, suppress_candidates, Candidate, ImageWindows, PreparedImage, ScanOptions,
    WindowLoc,
};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, FeatureVector};
use crate::geom::{
    detection_loss, match_to_truth, DetectionLoss, Labeling, LossWeights, OverlapRule, Rect,
};

/// One training image with its truth boxes tied to scan windows.
pub struct TrainingSample {
    pub name: String,
    pub windows: Box<dyn ImageWindows>,
    /// Annotated boxes, used for matching and loss.
    pub truth: Vec<Rect>,
    /// Best scan window for each truth box; its features define `F(x, y)`.
    pub truth_locs: Vec<WindowLoc>,
    pub truth_features: Vec<FeatureVector>,
}

impl TrainingSample {
    /// Ties each truth box to its closest scan window. Boxes no window
    /// overlaps at the match threshold are reported as problems.
    pub fn new(
        name: impl Into<String>,
        windows: Box<dyn ImageWindows>,
        truth: &Labeling,
        rule: &OverlapRule,
    ) -> std::result::Result<Self, Vec<String>> {
        let name = name.into();
        let mut problems = Vec::new();
        let mut truth_locs = Vec::new();
        for r in truth.rects() {
            match windows.snap(r) {
                Some((loc, ratio)) if ratio >= rule.threshold => truth_locs.push(loc),
                Some((_, ratio)) => problems.push(format!(
                    "{name}: box {r:?} best window overlap {ratio:.3} < {}",
                    rule.threshold
                )),
                None => problems.push(format!("{name}: box {r:?} has no scan window")),
            }
        }
        if !problems.is_empty() {
            return Err(problems);
        }
        let truth_features = truth_locs.iter().map(|&l| windows.features(l)).collect();
        Ok(Self {
            name,
            windows,
            truth: truth.rects().to_vec(),
            truth_locs,
            truth_features,
        })
    }
}

/// Prepares every image for training; unlearnable truth boxes across the
/// whole dataset are reported together.
pub fn prepare_samples(
    dataset: &[LabeledImage],
    map: &dyn FeatureMap,
    rule: &OverlapRule,
) -> Result<Vec<TrainingSample>> {
    let results: Vec<std::result::Result<TrainingSample, Vec<String>>> = dataset
        .par_iter()
        .map(|li| {
            let windows = Box::new(PreparedImage::new(&li.image, map));
            TrainingSample::new(li.path.clone(), windows, &li.truth, rule)
        })
        .collect();
    let mut samples = Vec::new();
    let mut problems = Vec::new();
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(p) => problems.extend(p),
        }
    }
    if problems.is_empty() {
        Ok(samples)
    } else {
        Err(Error::UnlearnableTruth(problems))
    }
}

/// Greedy maximizer of `score(y) + loss(y, truth)` over labelings built from
/// `ranked`, which must be in descending score order and contain only rects
/// whose score plus `l_fa` is positive. Returns accepted indices.
///
/// The first pass runs plain suppression and, for each truth box, totals the
/// score of accepting it: the first matching window's score plus score and
/// false-alarm loss of every later matching survivor. The second pass
/// accepts a truth-matching window only when that total beats the miss loss;
/// windows matching no truth are always accepted as false alarms.
pub fn loss_augmented_select(
    ranked: &[(Rect, f64)],
    truth: &[Rect],
    lw: &LossWeights,
    rule: &OverlapRule,
) -> Vec<usize> {
    let matches: Vec<Option<usize>> = ranked
        .iter()
        .map(|(r, _)| match_to_truth(r, truth, rule).map(|m| m.0))
        .collect();

    let mut accept_score = vec![0.0; truth.len()];
    let mut hit = vec![false; truth.len()];
    let mut survivors: Vec<usize> = Vec::new();
    for (i, (r, score)) in ranked.iter().enumerate() {
        if survivors.iter().any(|&s| rule.overlaps(&ranked[s].0, r)) {
            continue;
        }
        survivors.push(i);
        if let Some(t) = matches[i] {
            if hit[t] {
                accept_score[t] += score + lw.l_fa;
            } else {
                accept_score[t] = *score;
                hit[t] = true;
            }
        }
    }

    let mut selected: Vec<usize> = Vec::new();
    for (i, (r, _)) in ranked.iter().enumerate() {
        if selected.iter().any(|&s| rule.overlaps(&ranked[s].0, r)) {
            continue;
        }
        match matches[i] {
            Some(t) if accept_score[t] > lw.l_miss => selected.push(i),
            Some(_) => {}
            None => selected.push(i),
        }
    }
    selected
}

/// Loss-augmented labeling of one image, in descending score order.
pub fn loss_augmented_detect(
    windows: &dyn ImageWindows,
    truth: &[Rect],
    w: &[f64],
    lw: &LossWeights,
    opts: &ScanOptions,
) -> Vec<Candidate> {
    let ranked = rank_candidates(windows.scan(w, -lw.l_fa), opts.max_candidates);
    let pairs: Vec<(Rect, f64)> = ranked.iter().map(|c| (c.rect, c.score)).collect();
    loss_augmented_select(&pairs, truth, lw, &opts.overlap)
        .into_iter()
        .map(|i| ranked[i])
        .collect()
}

/// Per-image separation result.
#[derive(Debug, Clone)]
pub struct ImageSeparation {
    pub y_star: Vec<Candidate>,
    pub y_star_features: Vec<FeatureVector>,
    /// `F(x, y*)` by exact dot products.
    pub score: f64,
    pub loss: DetectionLoss,
    /// `F(x, y)` of the truth windows.
    pub truth_score: f64,
    /// Loss of plain detection at threshold 0.
    pub detect_loss: DetectionLoss,
}

impl ImageSeparation {
    /// `F(x, y*) + loss(y*, y) - F(x, y)`
    pub fn margin_violation(&self) -> f64 {
        self.score + self.loss.loss - self.truth_score
    }
}

pub fn separate_image(
    sample: &TrainingSample,
    w: &[f64],
    lw: &LossWeights,
    opts: &ScanOptions,
) -> ImageSeparation {
    let ranked = rank_candidates(sample.windows.scan(w, -lw.l_fa), opts.max_candidates);
    let pairs: Vec<(Rect, f64)> = ranked.iter().map(|c| (c.rect, c.score)).collect();
    let selected = loss_augmented_select(&pairs, &sample.truth, lw, &opts.overlap);
    let y_star: Vec<Candidate> = selected.into_iter().map(|i| ranked[i]).collect();
    let y_star_features: Vec<FeatureVector> = y_star
        .iter()
        .map(|c| sample.windows.features(c.loc))
        .collect();
    let score = y_star_features.iter().map(|f| f.dot_unchecked(w)).sum();
    let rects: Vec<Rect> = y_star.iter().map(|c| c.rect).collect();
    let loss = detection_loss(&rects, &sample.truth, lw, &opts.overlap);
    let truth_score = sample
        .truth_features
        .iter()
        .map(|f| f.dot_unchecked(w))
        .sum();

    // Plain detection keeps only positive scores; `ranked` holds every
    // window above -l_fa, a superset, in the same order.
    let positive: Vec<Candidate> = ranked.iter().copied().filter(|c| c.score > 0.0).collect();
    let detections: Vec<Rect> = suppress_candidates(&positive, opts)
        .into_iter()
        .map(|d| d.rect)
        .collect();
    let detect_loss = detection_loss(&detections, &sample.truth, lw, &opts.overlap);

    ImageSeparation {
        y_star,
        y_star_features,
        score,
        loss,
        truth_score,
        detect_loss,
    }
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub y_star: Vec<Labeling>,
    pub remp_value: f64,
    pub subgradient: Vec<f64>,
    /// `(C/n) * sum(loss(detect(x_i), y_i))`, which `remp_value` should bound.
    pub detection_loss_bound: f64,
    pub missed: usize,
    pub false_alarms: usize,
}

/// Empirical risk at `w` and one subgradient. Images are separated in
/// parallel and reduced in index order.
pub fn compute_remp_and_subgradient(
    samples: &[TrainingSample],
    dim: usize,
    w: &[f64],
    c: f64,
    lw: &LossWeights,
    opts: &ScanOptions,
) -> Result<SeparationResult> {
    if samples.is_empty() {
        return Err(Error::Precondition("empty training set".into()));
    }
    if w.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: w.len(),
        });
    }
    let per_image: Vec<ImageSeparation> = samples
        .par_iter()
        .map(|s| separate_image(s, w, lw, opts))
        .collect();

    let scale = c / samples.len() as f64;
    let mut subgradient = vec![0.0; dim];
    let mut remp = 0.0;
    let mut detect_total = 0.0;
    let mut missed = 0;
    let mut false_alarms = 0;
    for (sample, sep) in samples.iter().zip(&per_image) {
        remp += sep.margin_violation();
        detect_total += sep.detect_loss.loss;
        missed += sep.detect_loss.missed;
        false_alarms += sep.detect_loss.false_alarms;
        for f in &sep.y_star_features {
            f.add_scaled_to(&mut subgradient, 1.0);
        }
        for f in &sample.truth_features {
            f.add_scaled_to(&mut subgradient, -1.0);
        }
    }
    for g in subgradient.iter_mut() {
        *g *= scale;
    }
    Ok(SeparationResult {
        y_star: per_image
            .iter()
            .map(|s| Labeling::from_rects_unchecked(s.y_star.iter().map(|c| c.rect).collect()))
            .collect(),
        remp_value: scale * remp,
        subgradient,
        detection_loss_bound: scale * detect_total,
        missed,
        false_alarms,
    })
}
