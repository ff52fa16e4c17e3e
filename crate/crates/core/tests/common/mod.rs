//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use mmod::detector::{Candidate, ImageWindows, WindowLoc};
use mmod::features::FeatureVector;
use mmod::geom::Rect;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Intersection over union computed in floating point from corners.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let (ax0, ay0, ax1, ay1) = (
        a.left as f64,
        a.top as f64,
        (a.left + a.width) as f64,
        (a.top + a.height) as f64,
    );
    let (bx0, by0, bx1, by1) = (
        b.left as f64,
        b.top as f64,
        (b.left + b.width) as f64,
        (b.top + b.height) as f64,
    );
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter)
}

/// True when no two rects overlap at `thr`.
pub fn is_valid_labeling(rects: &[Rect], thr: f64) -> bool {
    for i in 0..rects.len() {
        for j in i + 1..rects.len() {
            if iou(&rects[i], &rects[j]) >= thr {
                return false;
            }
        }
    }
    true
}

/// Misses and false alarms: each prediction claims the truth box it overlaps
/// most (lowest index on ties) if that overlap reaches `thr`; only the first
/// claim on a box counts as a hit.
pub fn oracle_loss(pred: &[Rect], truth: &[Rect], thr: f64) -> (usize, usize) {
    let mut claimed = vec![false; truth.len()];
    let mut fa = 0;
    for p in pred {
        let mut best: Option<(usize, f64)> = None;
        for (i, t) in truth.iter().enumerate() {
            let o = iou(p, t);
            if o >= thr && best.is_none_or(|(_, b)| o > b) {
                best = Some((i, o));
            }
        }
        match best {
            Some((i, _)) if !claimed[i] => claimed[i] = true,
            _ => fa += 1,
        }
    }
    (claimed.iter().filter(|c| !**c).count(), fa)
}

pub fn weighted_loss(pred: &[Rect], truth: &[Rect], l_miss: f64, l_fa: f64, thr: f64) -> f64 {
    let (m, f) = oracle_loss(pred, truth, thr);
    l_miss * m as f64 + l_fa * f as f64
}

/// Every valid labeling drawn from `rects`, as index sets. Exponential.
pub fn valid_subsets(rects: &[Rect], thr: f64) -> Vec<Vec<usize>> {
    assert!(rects.len() <= 16);
    let mut out = Vec::new();
    for mask in 0u32..(1 << rects.len()) {
        let idx: Vec<usize> = (0..rects.len()).filter(|i| mask >> i & 1 == 1).collect();
        let sel: Vec<Rect> = idx.iter().map(|&i| rects[i]).collect();
        if is_valid_labeling(&sel, thr) {
            out.push(idx);
        }
    }
    out
}

/// Maximum total score over valid labelings.
pub fn exhaustive_best_score(rects: &[Rect], scores: &[f64], thr: f64) -> f64 {
    valid_subsets(rects, thr)
        .iter()
        .map(|s| s.iter().map(|&i| scores[i]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Maximum of `score(y) + loss(y, truth)` over valid labelings.
pub fn exhaustive_augmented(
    rects: &[Rect],
    scores: &[f64],
    truth: &[Rect],
    l_miss: f64,
    l_fa: f64,
    thr: f64,
) -> f64 {
    valid_subsets(rects, thr)
        .iter()
        .map(|s| {
            let sel: Vec<Rect> = s.iter().map(|&i| rects[i]).collect();
            s.iter().map(|&i| scores[i]).sum::<f64>()
                + weighted_loss(&sel, truth, l_miss, l_fa, thr)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn random_rect(rng: &mut ChaCha8Rng, extent: i64, max_side: i64) -> Rect {
    let w = rng.random_range(2..=max_side);
    let h = rng.random_range(2..=max_side);
    Rect::new(
        rng.random_range(0..extent),
        rng.random_range(0..extent),
        w,
        h,
    )
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `l'b - 1/2 l'Ql`
pub fn dual_value(q: &[Vec<f64>], b: &[f64], l: &[f64]) -> f64 {
    let ql: Vec<f64> = q.iter().map(|row| dot(row, l)).collect();
    dot(l, b) - 0.5 * dot(l, &ql)
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        css += x;
        let t = (css - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Maximizes the simplex dual by scanning a grid of resolution `1/steps`
/// and polishing the best point with accelerated projected gradient.
pub fn simplex_qp_oracle(q: &[Vec<f64>], b: &[f64], steps: usize) -> (f64, Vec<f64>) {
    let n = b.len();
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    let mut counts = vec![0usize; n];
    fn visit(
        k: usize,
        left: usize,
        steps: usize,
        counts: &mut Vec<usize>,
        q: &[Vec<f64>],
        b: &[f64],
        best: &mut (f64, Vec<f64>),
    ) {
        let n = counts.len();
        if k == n - 1 {
            counts[k] = left;
            let l: Vec<f64> = counts.iter().map(|&c| c as f64 / steps as f64).collect();
            let v = dual_value(q, b, &l);
            if v > best.0 {
                *best = (v, l);
            }
            return;
        }
        for c in 0..=left {
            counts[k] = c;
            visit(k + 1, left - c, steps, counts, q, b, best);
        }
    }
    visit(0, steps, steps, &mut counts, q, b, &mut best);

    // Lipschitz constant of the gradient: trace bound on the largest eigenvalue.
    let lip = (0..n).map(|i| q[i][i]).sum::<f64>().max(1e-12);
    let mut x = best.1.clone();
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let grad: Vec<f64> = (0..n).map(|i| b[i] - dot(&q[i], &y)).collect();
        let step: Vec<f64> = (0..n).map(|i| y[i] + grad[i] / lip).collect();
        let x_next = project_simplex(&step);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = (0..n)
            .map(|i| x_next[i] + (t - 1.0) / t_next * (x_next[i] - x[i]))
            .collect();
        x = x_next;
        t = t_next;
    }
    let v = dual_value(q, b, &x);
    if v > best.0 {
        (v, x)
    } else {
        best
    }
}

/// A fixed list of windows with explicit feature vectors.
pub struct ListWindows {
    pub rects: Vec<Rect>,
    pub features: Vec<Vec<f64>>,
}

impl ListWindows {
    pub fn score(&self, w: &[f64], i: usize) -> f64 {
        dot(w, &self.features[i])
    }
}

impl ImageWindows for ListWindows {
    fn dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }

    fn scan(&self, w: &[f64], threshold: f64) -> Vec<Candidate> {
        (0..self.rects.len())
            .filter_map(|i| {
                let s = self.score(w, i);
                (s > threshold).then_some(Candidate {
                    rect: self.rects[i],
                    score: s,
                    loc: WindowLoc {
                        level: 0,
                        x: i as u32,
                        y: 0,
                    },
                })
            })
            .collect()
    }

    fn features(&self, loc: WindowLoc) -> FeatureVector {
        FeatureVector::from_dense(&self.features[loc.x as usize])
    }

    fn rect_of(&self, loc: WindowLoc) -> Rect {
        self.rects[loc.x as usize]
    }

    fn window_count(&self) -> usize {
        self.rects.len()
    }

    fn snap(&self, target: &Rect) -> Option<(WindowLoc, f64)> {
        let mut best: Option<(WindowLoc, f64)> = None;
        for (i, r) in self.rects.iter().enumerate() {
            let o = iou(r, target);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((
                    WindowLoc {
                        level: 0,
                        x: i as u32,
                        y: 0,
                    },
                    o,
                ));
            }
        }
        best
    }
}

/// Exact per-image hinge term `max_y [F(y) + loss(y)] - F(truth)` by
/// enumeration, with the truth scored through its best-overlapping window.
pub fn exact_margin(
    win: &ListWindows,
    truth: &[Rect],
    w: &[f64],
    l_miss: f64,
    l_fa: f64,
    thr: f64,
) -> f64 {
    let scores: Vec<f64> = (0..win.rects.len()).map(|i| win.score(w, i)).collect();
    let best = exhaustive_augmented(&win.rects, &scores, truth, l_miss, l_fa, thr);
    let truth_score: f64 = truth
        .iter()
        .map(|t| {
            let (loc, _) = win.snap(t).unwrap();
            scores[loc.x as usize]
        })
        .sum();
    best - truth_score
}
