//! Correlated log-normal shadow fading.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ChannelError;
use crate::correlation::CorrelationModel;
use crate::geo::GeoPoint;

/// Dense factorization limit.
pub const MAX_SHADOW_POINTS: usize = 5000;

const JITTER: f64 = 1e-10;

/// Zero-mean Gaussian field with covariance `sigma_w_sq * R(d_v, d_h)`,
/// drawn through a Cholesky factor of the full covariance matrix.
pub fn generate_shadow_fading(
    points: &[GeoPoint],
    model: &CorrelationModel,
    seed: u64,
) -> Result<Vec<f64>, ChannelError> {
    let n = points.len();
    if n > MAX_SHADOW_POINTS {
        return Err(ChannelError::TooManyPoints(n));
    }
    model
        .validate()
        .map_err(|e| ChannelError::InvalidParams(e.to_string()))?;
    if n == 0 {
        return Ok(Vec::new());
    }
    if model.sigma_w_sq == 0.0 {
        return Ok(vec![0.0; n]);
    }

    let sill = model.sigma_w_sq;
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        cov[(i, i)] = sill * (1.0 + JITTER);
        for j in 0..i {
            let c = sill * model.rho_between(&points[i], &points[j]);
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let chol = cov.cholesky().ok_or(ChannelError::NotPositiveDefinite)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
    Ok((chol.l() * z).iter().copied().collect())
}

/// Sinh-arcsinh skewing applied to standardized values:
/// `m + s * sinh(asinh((x - m) / s) + skew)` with `m`, `s` the sample mean and
/// standard deviation of the input. Strictly increasing in `x`; `skew = 0`
/// returns the input unchanged.
pub fn skew_shadow_fading(values: &[f64], skew: f64) -> Vec<f64> {
    let n = values.len();
    if skew == 0.0 || n < 2 {
        return values.to_vec();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if !(sd > 0.0) {
        return values.to_vec();
    }
    values
        .iter()
        .map(|x| mean + sd * (((x - mean) / sd).asinh() + skew).sinh())
        .collect()
}
