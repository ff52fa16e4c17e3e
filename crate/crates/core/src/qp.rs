//! SMO-style solver for the simplex-constrained dual of the cutting-plane
//! subproblem:
//!
//! ```text
//! max_l  l'b - 1/2 l'Ql   s.t.  l >= 0, sum(l) = 1,   Q_ij = <a_i, a_j>
//! ```

use crate::error::{Error, Result};

/// Lower clamp on the pair curvature.
pub const TAU: f64 = 1e-10;
pub const DEFAULT_MAX_QP_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DualState {
    pub lambdas: Vec<f64>,
    /// Row-major Gram matrix of the plane normals.
    pub gram: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Certified bound on dual suboptimality of the returned multipliers.
    pub gap: f64,
}

impl DualState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Adds a plane with offset `b`. `dots[i] = <a_new, a_i>` for existing
    /// planes, followed by `<a_new, a_new>`. The new multiplier starts at 0,
    /// or 1 if it is the only plane.
    pub fn push_plane(&mut self, dots: &[f64], b: f64) {
        let n = self.len();
        assert_eq!(
            dots.len(),
            n + 1,
            "need one dot product per plane plus self"
        );
        for (row, &d) in self.gram.iter_mut().zip(dots) {
            row.push(d);
        }
        self.gram.push(dots.to_vec());
        self.offsets.push(b);
        self.lambdas = warm_start(&self.lambdas);
    }

    /// Drops the planes whose `keep` flag is false.
    pub fn retain(&mut self, keep: &[bool]) {
        let pick = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(x, _)| *x)
                .collect()
        };
        self.gram = self
            .gram
            .iter()
            .zip(keep)
            .filter(|(_, k)| **k)
            .map(|(row, _)| pick(row))
            .collect();
        self.offsets = pick(&self.offsets);
        self.lambdas = pick(&self.lambdas);
    }

    /// Rescales the multipliers to sum to one.
    pub fn renormalize(&mut self) {
        let s: f64 = self.lambdas.iter().sum();
        if s > 0.0 {
            for l in self.lambdas.iter_mut() {
                *l /= s;
            }
        }
    }

    /// `Q lambda - b`
    pub fn gradient(&self) -> Vec<f64> {
        self.gram
            .iter()
            .zip(&self.offsets)
            .map(|(row, b)| dot(row, &self.lambdas) - b)
            .collect()
    }

    /// `lambda'b - 1/2 lambda'Q lambda`
    pub fn objective(&self) -> f64 {
        let q: f64 = self
            .gram
            .iter()
            .zip(&self.lambdas)
            .map(|(row, l)| l * dot(row, &self.lambdas))
            .sum();
        dot(&self.lambdas, &self.offsets) - 0.5 * q
    }

    /// `lambda'grad - min(grad)`, an upper bound on dual suboptimality.
    pub fn duality_gap(&self) -> f64 {
        let g = self.gradient();
        let little = g.iter().copied().fold(f64::INFINITY, f64::min);
        dot(&self.lambdas, &g) - little
    }

    fn check(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Qp("no planes".into()));
        }
        let finite = self.offsets.iter().all(|v| v.is_finite())
            && self.gram.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Qp("non-finite gram or offset entry".into()));
        }
        if self.lambdas.iter().any(|&l| l < 0.0 || !l.is_finite()) {
            return Err(Error::Qp("infeasible starting multipliers".into()));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Appends a zero multiplier for a new plane; the first plane gets 1.
pub fn warm_start(previous: &[f64]) -> Vec<f64> {
    let mut out = previous.to_vec();
    out.push(if previous.is_empty() { 1.0 } else { 0.0 });
    out
}

/// Solves the dual in place until the duality gap is at most `eps_qp`.
///
/// Each step moves mass from the supported multiplier with the largest
/// gradient to the multiplier with the smallest gradient, by the exact line
/// search step clipped at zero.
pub fn solve(state: &mut DualState, eps_qp: f64, max_iters: usize) -> Result<SolveStats> {
    if !(eps_qp > 0.0) {
        return Err(Error::Qp(format!("eps_qp must be positive, got {eps_qp}")));
    }
    state.check()?;
    let mut grad = state.gradient();
    let mut iterations = 0;
    loop {
        let mut big = f64::NEG_INFINITY;
        let mut little = f64::INFINITY;
        let mut max_idx = None;
        let mut min_idx = 0;
        for (i, (&g, &l)) in grad.iter().zip(&state.lambdas).enumerate() {
            if g > big && l > 0.0 {
                big = g;
                max_idx = Some(i);
            }
            if g < little {
                little = g;
                min_idx = i;
            }
        }
        let Some(max_idx) = max_idx else {
            return Err(Error::Qp("no multiplier is positive".into()));
        };
        let gap = dot(&state.lambdas, &grad) - little;
        if gap <= eps_qp {
            // Incremental updates drift; confirm against a fresh gradient.
            let fresh = state.gradient();
            let little = fresh.iter().copied().fold(f64::INFINITY, f64::min);
            let fresh_gap = dot(&state.lambdas, &fresh) - little;
            if fresh_gap <= eps_qp {
                return Ok(SolveStats {
                    iterations,
                    gap: fresh_gap,
                });
            }
            grad = fresh;
            continue;
        }
        if big <= little {
            // Every supported gradient is already minimal; the remaining gap
            // is rounding in the dot product.
            return Ok(SolveStats { iterations, gap });
        }
        if iterations >= max_iters {
            return Err(Error::Qp(format!(
                "no convergence after {max_iters} iterations (gap {gap})"
            )));
        }
        iterations += 1;

        let q = &state.gram;
        let curvature =
            (q[max_idx][max_idx] + q[min_idx][min_idx] - 2.0 * q[max_idx][min_idx]).max(TAU);
        let pair_sum = state.lambdas[max_idx] + state.lambdas[min_idx];
        let old_big = state.lambdas[max_idx];
        let old_little = state.lambdas[min_idx];
        let step = (big - little) / curvature;
        let mut new_big = old_big - step;
        let mut new_little = old_little + step;
        if new_big < 0.0 {
            new_big = 0.0;
            new_little = pair_sum;
        }
        state.lambdas[max_idx] = new_big;
        state.lambdas[min_idx] = new_little;
        let d_big = new_big - old_big;
        let d_little = new_little - old_little;
        for (i, g) in grad.iter_mut().enumerate() {
            *g += q[i][max_idx] * d_big + q[i][min_idx] * d_little;
        }
    }
}

/// `w = -sum(lambda_i a_i)`
pub fn recover_primal(lambdas: &[f64], planes: &[&[f64]]) -> Result<Vec<f64>> {
    if lambdas.len() != planes.len() {
        return Err(Error::DimensionMismatch {
            expected: lambdas.len(),
            actual: planes.len(),
        });
    }
    let dim = planes.first().map_or(0, |a| a.len());
    let mut w = vec![0.0; dim];
    for (&l, a) in lambdas.iter().zip(planes) {
        if a.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: a.len(),
            });
        }
        if l != 0.0 {
            for (wi, ai) in w.iter_mut().zip(a.iter()) {
                *wi -= l * ai;
            }
        }
    }
    Ok(w)
}

/// Minimum of the cutting-plane model, `lambda'b - 1/2 |w|^2`.
pub fn lower_bound_value(state: &DualState, w: &[f64]) -> f64 {
    dot(&state.lambdas, &state.offsets) - 0.5 * dot(w, w)
}

/// Primal value of the cutting-plane model at `w`:
/// `1/2 |w|^2 + max_i(<w, a_i> + b_i)`.
pub fn model_value(w: &[f64], planes: &[&[f64]], offsets: &[f64]) -> f64 {
    let max = planes
        .iter()
        .zip(offsets)
        .map(|(a, b)| dot(w, a) + b)
        .fold(f64::NEG_INFINITY, f64::max);
    0.5 * dot(w, w) + max
}
