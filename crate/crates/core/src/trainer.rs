//! Cutting-plane minimization of `J(w) = 1/2 |w|^2 + R_emp(w)`.

use std::io::Write;
use std::time::Instant;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledImage;
use crate::detector::{Model, ScanOptions};
use crate::error::{Error, Result};
use crate::features::{build_feature_map, FeatureMapConfig};
use crate::geom::LossWeights;
use crate::loss_aug::{compute_remp_and_subgradient, prepare_samples, TrainingSample};
use crate::qp::{self, DualState, DEFAULT_MAX_QP_ITERS};

/// Slack allowed on the lower bound's monotonicity.
pub const MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub c: f64,
    /// Absolute stopping gap on `J`.
    pub eps: f64,
    pub loss: LossWeights,
    pub eps_qp_floor: f64,
    pub eps_qp_frac: f64,
    pub max_iters: usize,
    pub plane_eviction_age: usize,
    pub max_qp_iters: usize,
    pub scan: ScanOptions,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            c: 25.0,
            eps: 0.15 * 25.0,
            loss: LossWeights::default(),
            eps_qp_floor: 0.01,
            eps_qp_frac: 0.1,
            max_iters: 10_000,
            plane_eviction_age: 20,
            max_qp_iters: DEFAULT_MAX_QP_ITERS,
            scan: ScanOptions::default(),
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("C must be positive, got {}", self.c));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.eps_qp_floor > 0.0 && self.eps_qp_frac > 0.0) {
            return bad("QP tolerances must be positive".into());
        }
        if self.max_iters == 0 || self.plane_eviction_age == 0 {
            return bad("iteration limits must be positive".into());
        }
        LossWeights::new(self.loss.l_miss, self.loss.l_fa)?;
        Ok(())
    }
}

/// A tangent plane `<w, a> + b` of the empirical risk.
#[derive(Debug, Clone, PartialEq)]
pub struct CuttingPlane {
    pub a: Vec<f64>,
    pub b: f64,
    pub inactive_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Index of the evaluated iterate `w_iter`.
    pub iter: usize,
    pub j: f64,
    /// Lower bound `K` at this iterate; `-inf` before the first plane.
    pub k: f64,
    pub gap: f64,
    pub remp: f64,
    pub misses: usize,
    pub false_alarms: usize,
    pub wall_ms: u128,
    /// `(C/n) * sum(loss(detect(x_i), y_i))` at this iterate.
    pub detection_loss: f64,
    pub planes: usize,
    pub evicted: usize,
    pub qp_iters: usize,
    pub eps_qp: f64,
    /// Certified gap of the QP solve that produced this iterate.
    pub qp_gap: f64,
    /// Primal minus dual value of that solve.
    pub primal_dual_diff: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// Iterates whose risk failed to bound their detection loss.
    pub loss_bound_violations: usize,
    /// Iterations where the lower bound decreased by more than the tolerance.
    pub monotonicity_violations: usize,
}

impl TrainingReport {
    pub const HEADER: &'static str = "iter,J,K,gap,remp,misses,false_alarms,wall_ms";

    /// Line-oriented CSV with the fixed header above.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", Self::HEADER)?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.iter, r.j, r.k, r.gap, r.remp, r.misses, r.false_alarms, r.wall_ms
            )?;
        }
        Ok(())
    }

    pub fn final_gap(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.gap)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub w: Vec<f64>,
    pub report: TrainingReport,
    /// Planes alive at termination.
    pub planes: Vec<CuttingPlane>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ages planes by their multipliers and drops those inactive for `max_age`
/// consecutive iterations. Only zero-multiplier planes are removed, so the
/// recovered `w` is unchanged. Returns the number evicted.
pub fn manage_planes(
    planes: &mut Vec<CuttingPlane>,
    state: &mut DualState,
    max_age: usize,
) -> usize {
    debug_assert_eq!(planes.len(), state.len());
    for (p, &l) in planes.iter_mut().zip(&state.lambdas) {
        if l > 0.0 {
            p.inactive_iters = 0;
        } else {
            p.inactive_iters += 1;
        }
    }
    let keep: Vec<bool> = planes.iter().map(|p| p.inactive_iters < max_age).collect();
    let evicted = keep.iter().filter(|k| !**k).count();
    if evicted > 0 {
        let mut k = keep.iter();
        planes.retain(|_| *k.next().unwrap());
        state.retain(&keep);
    }
    state.renormalize();
    evicted
}

/// `1/2 |w|^2 + R_emp(w)`
pub fn objective_j(
    w: &[f64],
    samples: &[TrainingSample],
    dim: usize,
    params: &TrainParams,
) -> Result<f64> {
    let sep = compute_remp_and_subgradient(samples, dim, w, params.c, &params.loss, &params.scan)?;
    Ok(0.5 * dot(w, w) + sep.remp_value)
}

/// Runs the cutting-plane optimizer on prepared samples.
///
/// Returns the best iterate seen; on convergence its objective is within
/// `eps` of the optimum.
pub fn train_samples(
    samples: &[TrainingSample],
    dim: usize,
    params: &TrainParams,
) -> Result<TrainOutcome> {
    params.validate()?;
    if samples.is_empty() {
        return Err(Error::Precondition(
            "cannot train on an empty dataset".into(),
        ));
    }
    let start = Instant::now();
    let mut w = vec![0.0; dim];
    let mut planes: Vec<CuttingPlane> = Vec::new();
    let mut state = DualState::new();
    let mut report = TrainingReport::default();
    let mut lower = f64::NEG_INFINITY;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last_solve = (0usize, 0.0f64, 0.0f64, 0.0f64, 0usize);

    for t in 0..params.max_iters {
        let sep =
            compute_remp_and_subgradient(samples, dim, &w, params.c, &params.loss, &params.scan)?;
        let j = 0.5 * dot(&w, &w) + sep.remp_value;
        let gap = j - lower;
        if best.as_ref().is_none_or(|(bj, _)| j < *bj) {
            best = Some((j, w.clone()));
        }
        if sep.remp_value < sep.detection_loss_bound {
            report.loss_bound_violations += 1;
            warn!(
                "iteration {t}: risk {} below detection loss {}",
                sep.remp_value, sep.detection_loss_bound
            );
        }
        let (qp_iters, eps_qp, qp_gap, primal_dual_diff, evicted) = last_solve;
        report.records.push(IterationRecord {
            iter: t,
            j,
            k: lower,
            gap,
            remp: sep.remp_value,
            misses: sep.missed,
            false_alarms: sep.false_alarms,
            wall_ms: start.elapsed().as_millis(),
            detection_loss: sep.detection_loss_bound,
            planes: planes.len(),
            evicted,
            qp_iters,
            eps_qp,
            qp_gap,
            primal_dual_diff,
        });
        info!(
            "iter {t}: J {j:.6} K {lower:.6} gap {gap:.6} remp {:.6} misses {} fa {} planes {}",
            sep.remp_value,
            sep.missed,
            sep.false_alarms,
            planes.len()
        );
        if gap <= params.eps {
            report.converged = true;
            let (_, w_best) = best.unwrap();
            return Ok(TrainOutcome {
                w: w_best,
                report,
                planes,
            });
        }

        // New tangent plane at w.
        let a = sep.subgradient;
        let b = sep.remp_value - dot(&w, &a);
        let mut dots: Vec<f64> = planes.iter().map(|p| dot(&p.a, &a)).collect();
        dots.push(dot(&a, &a));
        state.push_plane(&dots, b);
        planes.push(CuttingPlane {
            a,
            b,
            inactive_iters: 0,
        });

        let eps_qp = if t == 0 {
            params.eps_qp_floor
        } else {
            params.eps_qp_floor.min(params.eps_qp_frac * gap)
        };
        let stats = qp::solve(&mut state, eps_qp, params.max_qp_iters)?;
        let refs: Vec<&[f64]> = planes.iter().map(|p| p.a.as_slice()).collect();
        w = qp::recover_primal(&state.lambdas, &refs)?;
        let new_lower = qp::lower_bound_value(&state, &w);
        let offsets: Vec<f64> = planes.iter().map(|p| p.b).collect();
        let primal = qp::model_value(&w, &refs, &offsets);
        if new_lower < lower - MONOTONE_TOL {
            report.monotonicity_violations += 1;
            warn!("iteration {t}: lower bound fell from {lower} to {new_lower}");
        }
        lower = new_lower;
        let evicted = manage_planes(&mut planes, &mut state, params.plane_eviction_age);
        debug!(
            "qp: {} iterations, gap {:.3e}, eps {:.3e}, evicted {evicted}",
            stats.iterations, stats.gap, eps_qp
        );
        last_solve = (
            stats.iterations,
            eps_qp,
            stats.gap,
            primal - new_lower,
            evicted,
        );
    }
    Err(Error::NotConverged {
        iters: params.max_iters,
        gap: report.final_gap(),
    })
}

/// Trains a model for `cfg` on a labeled dataset.
pub fn train(
    dataset: &[LabeledImage],
    cfg: &FeatureMapConfig,
    params: &TrainParams,
) -> Result<(Model, TrainingReport)> {
    params.validate()?;
    if dataset.is_empty() {
        return Err(Error::Precondition(
            "cannot train on an empty dataset".into(),
        ));
    }
    let map = build_feature_map(cfg)?;
    let samples = prepare_samples(dataset, map.as_ref(), &params.scan.overlap)?;
    let outcome = train_samples(&samples, map.dim(), params)?;
    Ok((Model::new(cfg.clone(), outcome.w)?, outcome.report))
}
