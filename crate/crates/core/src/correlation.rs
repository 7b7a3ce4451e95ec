//! Spatial correlation of shadow fading: the separable model
//! `R(d_v, d_h) = exp(-q d_v) [a exp(-p1 d_h) + (1 - a) exp(-p2 d_h)]`,
//! its empirical estimate from detrended samples, and the least-squares fit
//! that ties the two together.
//!
//! Under a stationary field with sill `sigma_w_sq`, the semivariogram used by
//! the Kriging systems is `gamma = sigma_w_sq * (1 - R)` (half the variance of
//! `Z(s_i) - Z(s_j)`) and the covariance is `sigma_w_sq * R`, so
//! `C + gamma = sigma_w_sq` for every pair.

use std::collections::BTreeMap;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::Sample;
use crate::geo::{horizontal_distance, vertical_distance, GeoPoint};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrelationError {
    #[error("negative distance (d_v = {d_v}, d_h = {d_h})")]
    NegativeDistance { d_v: f64, d_h: f64 },
    #[error("invalid correlation model: {0}")]
    InvalidModel(String),
    #[error("need at least 2 samples with shadow fading set, got {0}")]
    TooFewSamples(usize),
    #[error("sample {0} has no shadow-fading residual; detrend first")]
    MissingShadow(usize),
    #[error("shadow-fading residuals have zero variance")]
    ZeroVariance,
    #[error("need >= 5 bins over >= 2 distinct horizontal lags, got {bins} bins / {lags} lags")]
    InsufficientBins { bins: usize, lags: usize },
    #[error("correlation fit did not converge from any of {0} starts")]
    NoConvergence(usize),
}

/// Fitted parameters of the 3D correlation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationModel {
    pub a: f64,
    pub p1: f64,
    pub p2: f64,
    pub q: f64,
    pub sigma_w_sq: f64,
}

impl CorrelationModel {
    pub fn validate(&self) -> Result<(), CorrelationError> {
        let ok = (0.0..=1.0).contains(&self.a)
            && [self.p1, self.p2, self.q]
                .iter()
                .all(|r| r.is_finite() && *r >= 0.0)
            && self.sigma_w_sq.is_finite()
            && self.sigma_w_sq >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(CorrelationError::InvalidModel(format!("{self:?}")))
        }
    }

    /// The same correlation shape with a different sill.
    pub fn with_sill(&self, sigma_sq: f64) -> Self {
        Self {
            sigma_w_sq: sigma_sq,
            ..*self
        }
    }

    pub fn evaluate(&self, d_v: f64, d_h: f64) -> Result<f64, CorrelationError> {
        if d_v < 0.0 || d_h < 0.0 || d_v.is_nan() || d_h.is_nan() {
            return Err(CorrelationError::NegativeDistance { d_v, d_h });
        }
        Ok(self.rho(d_v, d_h))
    }

    /// Unchecked evaluation for non-negative distances.
    #[inline]
    pub fn rho(&self, d_v: f64, d_h: f64) -> f64 {
        (-self.q * d_v).exp()
            * (self.a * (-self.p1 * d_h).exp() + (1.0 - self.a) * (-self.p2 * d_h).exp())
    }

    #[inline]
    pub fn rho_between(&self, s_i: &GeoPoint, s_j: &GeoPoint) -> f64 {
        self.rho(vertical_distance(s_i, s_j), horizontal_distance(s_i, s_j))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}

pub fn evaluate(model: &CorrelationModel, d_v: f64, d_h: f64) -> Result<f64, CorrelationError> {
    model.evaluate(d_v, d_h)
}

/// `sigma_w_sq * (1 - R)`, i.e. `Var(Z(s_i) - Z(s_j)) / 2` under the model.
pub fn semivariogram(model: &CorrelationModel, s_i: &GeoPoint, s_j: &GeoPoint) -> f64 {
    model.sigma_w_sq * (1.0 - model.rho_between(s_i, s_j))
}

pub fn covariance(model: &CorrelationModel, s_i: &GeoPoint, s_j: &GeoPoint) -> f64 {
    model.sigma_w_sq * model.rho_between(s_i, s_j)
}

/// Binning used for the empirical correlation estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningOptions {
    pub d_h_bin: f64,
    pub d_v_bin: f64,
    pub max_d_h: f64,
    pub min_count: usize,
}

impl Default for BinningOptions {
    fn default() -> Self {
        Self {
            d_h_bin: 10.0,
            d_v_bin: 20.0,
            max_d_h: 500.0,
            min_count: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationBin {
    /// Mean vertical separation of the pairs in the bin.
    pub d_v_center: f64,
    /// Mean horizontal separation of the pairs in the bin.
    pub d_h_center: f64,
    pub rho_hat: f64,
    pub pair_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrelationBins {
    pub entries: Vec<CorrelationBin>,
}

#[derive(Default, Clone, Copy)]
struct BinAcc {
    prod: f64,
    d_v: f64,
    d_h: f64,
    count: usize,
}

/// Unbiased sample variance of the residuals; the sill used for fitted models.
pub fn residual_variance(samples: &[Sample]) -> Result<f64, CorrelationError> {
    let w = shadows(samples)?;
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    Ok(w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

fn shadows(samples: &[Sample]) -> Result<Vec<f64>, CorrelationError> {
    if samples.len() < 2 {
        return Err(CorrelationError::TooFewSamples(samples.len()));
    }
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| s.shadow_db.ok_or(CorrelationError::MissingShadow(i)))
        .collect()
}

/// Binned estimate of `E[w_i w_j] / sigma_w^2` over all distinct sample pairs.
///
/// Residuals are centered on their sample mean before taking products, and
/// each bin reports the mean pair separations as its coordinates. Bins with
/// fewer than `opts.min_count` pairs are dropped.
pub fn empirical_correlation(
    samples: &[Sample],
    opts: &BinningOptions,
) -> Result<CorrelationBins, CorrelationError> {
    let w = shadows(samples)?;
    let n = w.len();
    let mean = w.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = w.iter().map(|x| x - mean).collect();
    let var = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return Err(CorrelationError::ZeroVariance);
    }

    let rows: Vec<usize> = (0..n).collect();
    let per_row = par::map(&rows, |&i| {
        let mut acc: BTreeMap<(u64, u64), BinAcc> = BTreeMap::new();
        let si = &samples[i].location;
        for j in (i + 1)..n {
            let sj = &samples[j].location;
            let d_h = horizontal_distance(si, sj);
            if d_h > opts.max_d_h {
                continue;
            }
            let d_v = vertical_distance(si, sj);
            let key = ((d_v / opts.d_v_bin) as u64, (d_h / opts.d_h_bin) as u64);
            let e = acc.entry(key).or_default();
            e.prod += centered[i] * centered[j];
            e.d_v += d_v;
            e.d_h += d_h;
            e.count += 1;
        }
        acc
    });

    let mut total: BTreeMap<(u64, u64), BinAcc> = BTreeMap::new();
    for row in per_row {
        for (k, v) in row {
            let e = total.entry(k).or_default();
            e.prod += v.prod;
            e.d_v += v.d_v;
            e.d_h += v.d_h;
            e.count += v.count;
        }
    }
    let entries = total
        .into_values()
        .filter(|b| b.count >= opts.min_count.max(1))
        .map(|b| {
            let c = b.count as f64;
            CorrelationBin {
                d_v_center: b.d_v / c,
                d_h_center: b.d_h / c,
                rho_hat: b.prod / c / var,
                pair_count: b.count,
            }
        })
        .collect();
    Ok(CorrelationBins { entries })
}

/// Outcome of [`fit_correlation_model`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFit {
    pub model: CorrelationModel,
    /// Pair-count-weighted sum of squared residuals at the optimum.
    pub weighted_sse: f64,
    /// Pair-count-weighted RMS residual.
    pub rms_residual: f64,
    pub iterations: usize,
}

const RATE_BOUNDS: (f64, f64) = (0.0, 1.0);
const N_STARTS: usize = 8;
const MAX_LM_ITER: usize = 2000;

/// Weighted bounded least-squares fit of `(a, p1, p2, q)` to binned estimates.
///
/// Eight deterministic log-uniform starting points are refined with a
/// projected Levenberg-Marquardt iteration; the best converged run wins and
/// is reported with `p1 >= p2`.
pub fn fit_correlation_model(
    bins: &CorrelationBins,
    sigma_w_sq: f64,
) -> Result<CorrelationFit, CorrelationError> {
    let mut data: Vec<CorrelationBin> = bins.entries.clone();
    data.sort_by(|x, y| {
        (x.d_v_center, x.d_h_center, x.rho_hat, x.pair_count)
            .partial_cmp(&(y.d_v_center, y.d_h_center, y.rho_hat, y.pair_count))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut lags: Vec<f64> = data.iter().map(|b| b.d_h_center).collect();
    lags.sort_by(|a, b| a.total_cmp(b));
    lags.dedup();
    let lags = lags.len();
    if data.len() < 5 || lags < 2 {
        return Err(CorrelationError::InsufficientBins {
            bins: data.len(),
            lags,
        });
    }

    let problem = FitProblem { data: &data };
    let mut best: Option<(Vector4<f64>, f64, usize)> = None;
    for k in 1..=N_STARTS {
        let start = Vector4::new(
            [0.25, 0.5, 0.75][k % 3],
            10f64.powf(-4.0 + 3.0 * halton(k, 2)),
            10f64.powf(-4.0 + 3.0 * halton(k, 3)),
            10f64.powf(-4.0 + 3.0 * halton(k, 5)),
        );
        if let Some((theta, cost, iters)) = problem.levenberg_marquardt(start) {
            if best.as_ref().is_none_or(|b| cost < b.1) {
                best = Some((theta, cost, iters));
            }
        }
    }
    let (theta, cost, iterations) = best.ok_or(CorrelationError::NoConvergence(N_STARTS))?;
    let (mut a, mut p1, mut p2) = (theta[0], theta[1], theta[2]);
    if p1 < p2 {
        std::mem::swap(&mut p1, &mut p2);
        a = 1.0 - a;
    }
    let total_weight: f64 = data.iter().map(|b| b.pair_count as f64).sum();
    Ok(CorrelationFit {
        model: CorrelationModel {
            a,
            p1,
            p2,
            q: theta[3],
            sigma_w_sq,
        },
        weighted_sse: cost,
        rms_residual: (cost / total_weight).sqrt(),
        iterations,
    })
}

fn halton(mut index: usize, base: usize) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

struct FitProblem<'a> {
    data: &'a [CorrelationBin],
}

impl FitProblem<'_> {
    fn model(theta: &Vector4<f64>) -> CorrelationModel {
        CorrelationModel {
            a: theta[0],
            p1: theta[1],
            p2: theta[2],
            q: theta[3],
            sigma_w_sq: 1.0,
        }
    }

    fn cost(&self, theta: &Vector4<f64>) -> f64 {
        let m = Self::model(theta);
        self.data
            .iter()
            .map(|b| b.pair_count as f64 * (m.rho(b.d_v_center, b.d_h_center) - b.rho_hat).powi(2))
            .sum()
    }

    /// Normal equations `J^T W J` and gradient `J^T W r`.
    fn normal_equations(&self, theta: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
        let (a, p1, p2, q) = (theta[0], theta[1], theta[2], theta[3]);
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for b in self.data {
            let (dv, dh, w) = (b.d_v_center, b.d_h_center, b.pair_count as f64);
            let ev = (-q * dv).exp();
            let (e1, e2) = ((-p1 * dh).exp(), (-p2 * dh).exp());
            let r = ev * (a * e1 + (1.0 - a) * e2);
            let j = Vector4::new(
                ev * (e1 - e2),
                -dh * a * ev * e1,
                -dh * (1.0 - a) * ev * e2,
                -dv * r,
            );
            jtj += w * j * j.transpose();
            jtr += w * (r - b.rho_hat) * j;
        }
        (jtj, jtr)
    }

    fn project(theta: Vector4<f64>) -> Vector4<f64> {
        Vector4::new(
            theta[0].clamp(0.0, 1.0),
            theta[1].clamp(RATE_BOUNDS.0, RATE_BOUNDS.1),
            theta[2].clamp(RATE_BOUNDS.0, RATE_BOUNDS.1),
            theta[3].clamp(RATE_BOUNDS.0, RATE_BOUNDS.1),
        )
    }

    /// Returns `(theta, cost, iterations)` when the iteration settles.
    fn levenberg_marquardt(&self, start: Vector4<f64>) -> Option<(Vector4<f64>, f64, usize)> {
        let mut theta = Self::project(start);
        let mut cost = self.cost(&theta);
        let mut damping = 1e-3;
        for iter in 1..=MAX_LM_ITER {
            let (jtj, jtr) = self.normal_equations(&theta);
            let mut improved = false;
            while damping < 1e16 {
                let mut lhs = jtj;
                for d in 0..4 {
                    lhs[(d, d)] += damping * jtj[(d, d)].max(1e-12);
                }
                let Some(step) = lhs.lu().solve(&(-jtr)) else {
                    damping *= 10.0;
                    continue;
                };
                let candidate = Self::project(theta + step);
                let moved = (candidate - theta).norm();
                let new_cost = self.cost(&candidate);
                if new_cost.is_finite() && new_cost <= cost {
                    let rel_drop = (cost - new_cost) / cost.max(1e-300);
                    theta = candidate;
                    cost = new_cost;
                    damping = (damping / 3.0).max(1e-12);
                    improved = true;
                    if moved <= 1e-10 * (1.0 + theta.norm()) || rel_drop < 1e-12 || cost < 1e-28 {
                        return Some((theta, cost, iter));
                    }
                    break;
                }
                if moved <= 1e-15 * (1.0 + theta.norm()) {
                    // Projected step cannot make progress: stationary on the bounds.
                    return Some((theta, cost, iter));
                }
                damping *= 4.0;
            }
            if !improved {
                return Some((theta, cost, iter));
            }
        }
        None
    }
}
