//! Rectangle arithmetic, the overlap predicate, truth matching and the
//! detection loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Overlap ratio at or above which two rectangles are considered to cover
/// the same object.
pub const DEFAULT_OVERLAP: f64 = 0.5;

/// Axis-aligned rectangle in integer pixels. Covers the closed pixel range
/// `left..=left+width-1` horizontally and likewise vertically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub left: i64,
    pub top: i64,
    pub width: i64,
    pub height: i64,
}

impl Rect {
    /// Panics on nonpositive dimensions; use [`Rect::try_new`] for input data.
    pub fn new(left: i64, top: i64, width: i64, height: i64) -> Self {
        Self::try_new(left, top, width, height).expect("rect dimensions must be positive")
    }

    pub fn try_new(left: i64, top: i64, width: i64, height: i64) -> Result<Self> {
        if width <= 0 || height <= 0 {
            return Err(Error::Precondition(format!(
                "rect ({left}, {top}, {width}, {height}) has nonpositive dimensions"
            )));
        }
        Ok(Self {
            left,
            top,
            width,
            height,
        })
    }

    /// One past the last covered column.
    pub fn right(&self) -> i64 {
        self.left + self.width
    }

    /// One past the last covered row.
    pub fn bottom(&self) -> i64 {
        self.top + self.height
    }

    pub fn area(&self) -> i64 {
        self.width * self.height
    }

    pub fn intersection_area(&self, other: &Rect) -> i64 {
        let w = (self.right().min(other.right()) - self.left.max(other.left)).max(0);
        let h = (self.bottom().min(other.bottom()) - self.top.max(other.top)).max(0);
        w * h
    }

    /// Intersection with `other`, if nonempty.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let left = self.left.max(other.left);
        let top = self.top.max(other.top);
        let right = self.right().min(other.right());
        let bottom = self.bottom().min(other.bottom());
        (right > left && bottom > top).then(|| Rect::new(left, top, right - left, bottom - top))
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.left >= self.left
            && other.top >= self.top
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Rect {
        Rect::new(self.left + dx, self.top + dy, self.width, self.height)
    }
}

/// Intersection over union of two rectangles.
pub fn overlap_ratio(r1: &Rect, r2: &Rect) -> f64 {
    let inter = r1.intersection_area(r2);
    if inter == 0 {
        return 0.0;
    }
    let union = r1.area() + r2.area() - inter;
    inter as f64 / union as f64
}

/// The overlap predicate shared by non-max suppression and truth matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapRule {
    pub threshold: f64,
}

impl Default for OverlapRule {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_OVERLAP,
        }
    }
}

impl OverlapRule {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::Config(format!(
                "overlap threshold must lie in (0, 1], got {threshold}"
            )));
        }
        Ok(Self { threshold })
    }

    /// Suppresses any pair sharing at least one pixel.
    pub fn any_touch() -> Self {
        Self {
            threshold: f64::MIN_POSITIVE,
        }
    }

    pub fn overlaps(&self, r1: &Rect, r2: &Rect) -> bool {
        overlap_ratio(r1, r2) >= self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l_miss: f64,
    pub l_fa: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l_miss: 2.0,
            l_fa: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(l_miss: f64, l_fa: f64) -> Result<Self> {
        for (name, v) in [("l_miss", l_miss), ("l_fa", l_fa)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(Self { l_miss, l_fa })
    }
}

/// An ordered set of rectangles, no two of which overlap.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Labeling {
    rects: Vec<Rect>,
}

impl Labeling {
    pub fn new(rects: Vec<Rect>, rule: &OverlapRule) -> Result<Self> {
        if let Some((i, j)) = first_overlapping_pair(&rects, rule) {
            return Err(Error::Precondition(format!(
                "rects {i} {:?} and {j} {:?} overlap (ratio {:.3})",
                rects[i],
                rects[j],
                overlap_ratio(&rects[i], &rects[j])
            )));
        }
        Ok(Self { rects })
    }

    /// Wraps rects without checking validity. Callers guarantee the invariant
    /// (e.g. outputs of greedy suppression).
    pub fn from_rects_unchecked(rects: Vec<Rect>) -> Self {
        Self { rects }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn rects(&self) -> &[Rect] {
        &self.rects
    }

    pub fn len(&self) -> usize {
        self.rects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    pub fn is_valid(&self, rule: &OverlapRule) -> bool {
        first_overlapping_pair(&self.rects, rule).is_none()
    }

    pub fn into_rects(self) -> Vec<Rect> {
        self.rects
    }
}

fn first_overlapping_pair(rects: &[Rect], rule: &OverlapRule) -> Option<(usize, usize)> {
    for i in 0..rects.len() {
        for j in i + 1..rects.len() {
            if rule.overlaps(&rects[i], &rects[j]) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Best-overlapping truth rect for `d`, if it reaches the match threshold.
/// Ties go to the lowest truth index.
pub fn match_to_truth(d: &Rect, truth: &[Rect], rule: &OverlapRule) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in truth.iter().enumerate() {
        let ratio = overlap_ratio(d, t);
        if ratio >= rule.threshold && best.is_none_or(|(_, b)| ratio > b) {
            best = Some((i, ratio));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionLoss {
    pub loss: f64,
    pub missed: usize,
    pub false_alarms: usize,
}

impl DetectionLoss {
    pub fn hits(&self, truth_count: usize) -> usize {
        truth_count - self.missed
    }
}

/// Loss of predicting `predicted` when the truth is `truth`.
///
/// Predictions are visited in the given order. The first prediction matching
/// a truth rect is a hit; every later one matching the same truth rect, and
/// every prediction matching nothing, is a false alarm. Truth rects left
/// without a hit are misses.
pub fn detection_loss(
    predicted: &[Rect],
    truth: &[Rect],
    lw: &LossWeights,
    rule: &OverlapRule,
) -> DetectionLoss {
    let mut hit = vec![false; truth.len()];
    let mut false_alarms = 0;
    for p in predicted {
        match match_to_truth(p, truth, rule) {
            Some((i, _)) if !hit[i] => hit[i] = true,
            _ => false_alarms += 1,
        }
    }
    let missed = hit.iter().filter(|h| !**h).count();
    DetectionLoss {
        loss: lw.l_miss * missed as f64 + lw.l_fa * false_alarms as f64,
        missed,
        false_alarms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rule() -> OverlapRule {
        OverlapRule::default()
    }

    #[test]
    fn overlap_examples() {
        let r = Rect::new(3, 4, 10, 7);
        assert_eq!(overlap_ratio(&r, &r), 1.0);
        assert_eq!(overlap_ratio(&r, &Rect::new(100, 100, 5, 5)), 0.0);
        let half = overlap_ratio(&Rect::new(0, 0, 10, 10), &Rect::new(0, 0, 10, 5));
        assert_eq!(half, 0.5);
        assert!(rule().overlaps(&Rect::new(0, 0, 10, 10), &Rect::new(0, 0, 10, 5)));
        // Adjacent boxes share no pixel.
        assert_eq!(
            Rect::new(0, 0, 10, 10).intersection_area(&Rect::new(10, 0, 10, 10)),
            0
        );
    }

    #[test]
    fn invalid_rects_rejected() {
        assert!(Rect::try_new(0, 0, 0, 5).is_err());
        assert!(Rect::try_new(0, 0, 5, -1).is_err());
    }

    #[test]
    fn match_examples() {
        let truth = [Rect::new(0, 0, 10, 10), Rect::new(50, 50, 10, 10)];
        assert_eq!(match_to_truth(&truth[0], &truth, &rule()), Some((0, 1.0)));
        assert_eq!(
            match_to_truth(&Rect::new(200, 200, 5, 5), &truth, &rule()),
            None
        );

        // d = (0,0,20,10), area 200.
        // t0 = (0,0,12,10): inter 120, union 200 -> 0.6
        // t1 = (4,0,16,10): inter 160, union 200 -> 0.8
        // t0/t1 overlap 80/200 = 0.4, a valid labeling.
        let d = Rect::new(0, 0, 20, 10);
        let truth = [Rect::new(0, 0, 12, 10), Rect::new(4, 0, 16, 10)];
        assert!(Labeling::new(truth.to_vec(), &rule()).is_ok());
        assert_eq!(overlap_ratio(&d, &truth[0]), 0.6);
        assert_eq!(overlap_ratio(&d, &truth[1]), 0.8);
        assert_eq!(match_to_truth(&d, &truth, &rule()), Some((1, 0.8)));
    }

    #[test]
    fn match_ties_prefer_lowest_index() {
        // Both halves overlap d by exactly 0.5 and each other not at all.
        let d = Rect::new(0, 0, 4, 10);
        let t = [Rect::new(0, 0, 4, 5), Rect::new(0, 5, 4, 5)];
        assert_eq!(overlap_ratio(&d, &t[0]), 0.5);
        assert_eq!(overlap_ratio(&d, &t[1]), 0.5);
        assert_eq!(match_to_truth(&d, &t, &rule()), Some((0, 0.5)));
        assert_eq!(match_to_truth(&d, &[], &rule()), None);
    }

    #[test]
    fn loss_examples() {
        let lw = LossWeights::new(2.0, 1.0).unwrap();
        let truth = [
            Rect::new(0, 0, 10, 10),
            Rect::new(20, 0, 10, 10),
            Rect::new(40, 0, 10, 10),
        ];
        let same = detection_loss(&truth, &truth, &lw, &rule());
        assert_eq!((same.loss, same.missed, same.false_alarms), (0.0, 0, 0));

        let none = detection_loss(&[], &truth, &lw, &rule());
        assert_eq!((none.loss, none.missed, none.false_alarms), (6.0, 3, 0));

        // Two predictions hit the same single truth: one hit, one duplicate.
        let t = [Rect::new(0, 0, 10, 10)];
        let p = [Rect::new(0, 0, 10, 10), Rect::new(1, 0, 10, 10)];
        let dup = detection_loss(&p, &t, &lw, &rule());
        assert_eq!((dup.loss, dup.missed, dup.false_alarms), (1.0, 0, 1));
    }

    #[test]
    fn labeling_rejects_overlaps() {
        let r = Rect::new(0, 0, 10, 10);
        assert!(Labeling::new(vec![r, r.translate(1, 0)], &rule()).is_err());
        assert!(Labeling::new(vec![r, r.translate(10, 0)], &rule()).is_ok());
        assert!(OverlapRule::new(0.0).is_err());
        assert!(LossWeights::new(-1.0, 0.0).is_err());
        assert!(LossWeights::new(f64::INFINITY, 0.0).is_err());
    }

    fn arb_rect() -> impl Strategy<Value = Rect> {
        (-20i64..20, -20i64..20, 1i64..25, 1i64..25).prop_map(|(l, t, w, h)| Rect::new(l, t, w, h))
    }

    proptest! {
        #[test]
        fn overlap_symmetric_and_bounded(a in arb_rect(), b in arb_rect()) {
            let ab = overlap_ratio(&a, &b);
            prop_assert_eq!(ab, overlap_ratio(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab == 1.0, a == b);
        }

        #[test]
        fn loss_zero_on_self(rects in proptest::collection::vec(arb_rect(), 0..6),
                             lm in 0.0f64..5.0, lf in 0.0f64..5.0) {
            let mut valid: Vec<Rect> = Vec::new();
            for r in rects {
                if valid.iter().all(|v| !rule().overlaps(v, &r)) {
                    valid.push(r);
                }
            }
            let lw = LossWeights::new(lm, lf).unwrap();
            prop_assert_eq!(detection_loss(&valid, &valid, &lw, &rule()).loss, 0.0);
        }

        #[test]
        fn loss_monotone_in_weights(pred in proptest::collection::vec(arb_rect(), 0..6),
                                    truth in proptest::collection::vec(arb_rect(), 0..4),
                                    lm in 0.0f64..5.0, lf in 0.0f64..5.0,
                                    dm in 0.0f64..3.0, df in 0.0f64..3.0) {
            let base = detection_loss(&pred, &truth, &LossWeights::new(lm, lf).unwrap(), &rule());
            let more = detection_loss(&pred, &truth, &LossWeights::new(lm + dm, lf + df).unwrap(), &rule());
            prop_assert_eq!((base.missed, base.false_alarms), (more.missed, more.false_alarms));
            prop_assert!(more.loss >= base.loss);
        }
    }
}
