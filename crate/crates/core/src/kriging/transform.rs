//! Normal-score transform and the trans-Gaussian back-transform corrections.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{
    ordinary_kriging_with_nugget, simple_kriging_with_nugget, KrigingError, Observation, Prediction,
    DEFAULT_NUGGET_RATIO,
};
use crate::correlation::CorrelationModel;
use crate::geo::GeoPoint;

const MIN_POINTS: usize = 20;
/// Half-width, in Y units, of the window used to estimate the derivatives of
/// `phi` at `m_Y`.
const DERIV_WINDOW: f64 = 1.5;

/// Monotone map `Y = f(Z) = Phi^-1(F_Z(Z))` fitted on training data, and its
/// inverse `phi`.
///
/// `F_Z` interpolates the plotting positions `i / (n + 1)` linearly between
/// order statistics; tied values share their mean position. Outside the
/// data range `f` saturates at the extreme positions and `phi` at the extreme
/// order statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTransform {
    sorted_z: Vec<f64>,
    z_nodes: Vec<f64>,
    p_nodes: Vec<f64>,
    m_y: f64,
    sigma_y_sq: f64,
    phi_d_at_m_y: f64,
    phi_dd_at_m_y: f64,
}

pub fn fit_gaussian_transform(train_z: &[f64]) -> Result<GaussianTransform, KrigingError> {
    let n = train_z.len();
    if n < MIN_POINTS {
        return Err(KrigingError::TooFewPoints { n, min: MIN_POINTS });
    }
    if train_z.iter().any(|z| !z.is_finite()) {
        return Err(KrigingError::NonFinite);
    }
    let mut sorted_z = train_z.to_vec();
    sorted_z.sort_by(f64::total_cmp);
    if sorted_z[0] == sorted_z[n - 1] {
        return Err(KrigingError::ConstantData);
    }

    let mut z_nodes = Vec::with_capacity(n);
    let mut p_nodes = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted_z[j + 1] == sorted_z[i] {
            j += 1;
        }
        // Mean of positions (i+1..=j+1) / (n+1).
        p_nodes.push((i + j + 2) as f64 / 2.0 / (n + 1) as f64);
        z_nodes.push(sorted_z[i]);
        i = j + 1;
    }

    let mut tg = GaussianTransform {
        sorted_z,
        z_nodes,
        p_nodes,
        m_y: 0.0,
        sigma_y_sq: 1.0,
        phi_d_at_m_y: 0.0,
        phi_dd_at_m_y: 0.0,
    };
    let y: Vec<f64> = train_z.iter().map(|&z| tg.forward(z)).collect();
    tg.m_y = y.iter().sum::<f64>() / n as f64;
    tg.sigma_y_sq = y.iter().map(|v| (v - tg.m_y).powi(2)).sum::<f64>() / (n - 1) as f64;
    let (d1, d2) = tg.local_derivatives();
    tg.phi_d_at_m_y = d1;
    tg.phi_dd_at_m_y = d2;
    Ok(tg)
}

impl GaussianTransform {
    pub fn sorted_z(&self) -> &[f64] {
        &self.sorted_z
    }

    pub fn m_y(&self) -> f64 {
        self.m_y
    }

    pub fn sigma_y_sq(&self) -> f64 {
        self.sigma_y_sq
    }

    /// `phi'(m_Y)`.
    pub fn phi_d_at_m_y(&self) -> f64 {
        self.phi_d_at_m_y
    }

    /// `phi''(m_Y)`.
    pub fn phi_dd_at_m_y(&self) -> f64 {
        self.phi_dd_at_m_y
    }

    /// `f`: Z to Y.
    pub fn forward(&self, z: f64) -> f64 {
        std_normal().inverse_cdf(interp(&self.z_nodes, &self.p_nodes, z))
    }

    /// `phi`: Y to Z.
    pub fn inverse(&self, y: f64) -> f64 {
        let p = std_normal().cdf(y);
        interp(&self.p_nodes, &self.z_nodes, p)
    }

    /// `phi'(m_Y)` and `phi''(m_Y)` from a least-squares quadratic through the
    /// pairs `(f(z_(i)), z_(i))` with `|f(z_(i)) - m_Y| <= DERIV_WINDOW`.
    ///
    /// Differencing the piecewise-linear `phi` directly is dominated by the
    /// spacing of individual order statistics; the local fit averages that out.
    fn local_derivatives(&self) -> (f64, f64) {
        let pairs: Vec<(f64, f64)> = self
            .z_nodes
            .iter()
            .zip(&self.p_nodes)
            .map(|(&z, &p)| (std_normal().inverse_cdf(p) - self.m_y, z))
            .collect();
        let mut window: Vec<(f64, f64)> = pairs
            .iter()
            .copied()
            .filter(|(u, _)| u.abs() <= DERIV_WINDOW)
            .collect();
        if window.len() < 3 {
            window = pairs;
        }
        let mut ata = Matrix3::<f64>::zeros();
        let mut atb = Vector3::<f64>::zeros();
        for (u, z) in window {
            let row = Vector3::new(1.0, u, u * u);
            ata += row * row.transpose();
            atb += row * z;
        }
        match ata.lu().solve(&atb) {
            Some(c) if c.iter().all(|v| v.is_finite()) => (c[1], 2.0 * c[2]),
            _ => (0.0, 0.0),
        }
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Piecewise-linear interpolation on strictly increasing `xs`, clamped at
/// both ends.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    let k = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + t * (ys[k + 1] - ys[k])
}

fn to_y(neighbors: &[Observation], tg: &GaussianTransform) -> Vec<Observation> {
    neighbors
        .iter()
        .map(|o| Observation {
            value: tg.forward(o.value),
            ..*o
        })
        .collect()
}

/// Ordinary Kriging in the Y domain, back-transformed with
/// `phi(Y_ok) + phi''(m_Y) (sigma_ok^2 / 2 - mu)`.
///
/// Neighbors carry Z-domain values. The reported mse is the delta-method
/// estimate `phi'(m_Y)^2 sigma_ok^2`.
pub fn trans_gaussian_ok(
    neighbors: &[Observation],
    target: &GeoPoint,
    model_y: &CorrelationModel,
    tg: &GaussianTransform,
) -> Result<Prediction, KrigingError> {
    tg_ok_with_nugget(neighbors, target, model_y, tg, DEFAULT_NUGGET_RATIO * model_y.sigma_w_sq)
}

pub(super) fn tg_ok_with_nugget(
    neighbors: &[Observation],
    target: &GeoPoint,
    model_y: &CorrelationModel,
    tg: &GaussianTransform,
    nugget: f64,
) -> Result<Prediction, KrigingError> {
    let (p, sol) = ordinary_kriging_with_nugget(&to_y(neighbors, tg), target, model_y, nugget)?;
    let mu = sol.lagrange_mu.unwrap_or(0.0);
    Ok(Prediction {
        value: tg.inverse(p.value) + tg.phi_dd_at_m_y * (p.mse / 2.0 - mu),
        mse: tg.phi_d_at_m_y.powi(2) * p.mse,
    })
}

/// Simple Kriging in the Y domain around `mean_y`, back-transformed with
/// `phi(Y_sk) + phi''(m_Y) / 2 (var_y - sum_i lambda_i C(s_0, s_i))`.
pub fn trans_gaussian_sk(
    neighbors: &[Observation],
    target: &GeoPoint,
    model_y: &CorrelationModel,
    tg: &GaussianTransform,
    mean_y: f64,
    var_y: f64,
) -> Result<Prediction, KrigingError> {
    tg_sk_with_nugget(neighbors, target, model_y, tg, mean_y, var_y, DEFAULT_NUGGET_RATIO * var_y)
}

pub(super) fn tg_sk_with_nugget(
    neighbors: &[Observation],
    target: &GeoPoint,
    model_y: &CorrelationModel,
    tg: &GaussianTransform,
    mean_y: f64,
    var_y: f64,
    nugget: f64,
) -> Result<Prediction, KrigingError> {
    let (p, sol) = simple_kriging_with_nugget(&to_y(neighbors, tg), target, model_y, mean_y, var_y, nugget)?;
    let lambda_c: f64 = sol
        .weights
        .iter()
        .zip(neighbors)
        .map(|(l, o)| l * var_y * model_y.rho_between(target, &o.location))
        .sum();
    Ok(Prediction {
        value: tg.inverse(p.value) + tg.phi_dd_at_m_y / 2.0 * (var_y - lambda_c),
        mse: tg.phi_d_at_m_y.powi(2) * p.mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kriging::tests::frame;
    use crate::kriging::{ordinary_kriging, simple_kriging};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn skewness(v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        v.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n / s2.powf(1.5)
    }

    fn model_y() -> CorrelationModel {
        CorrelationModel {
            a: 0.6,
            p1: 0.03,
            p2: 0.004,
            q: 0.03,
            sigma_w_sq: 1.0,
        }
    }

    #[test]
    fn standard_normal_data_gives_near_identity() {
        let z = normals(5000, 1);
        let tg = fit_gaussian_transform(&z).unwrap();
        for x in [-1.5, -0.3, 0.0, 0.8, 1.7] {
            assert!((tg.forward(x) - x).abs() < 0.1, "f({x}) = {}", tg.forward(x));
        }
        assert!(tg.phi_dd_at_m_y().abs() < 0.05, "{}", tg.phi_dd_at_m_y());
        assert!((tg.phi_d_at_m_y() - 1.0).abs() < 0.05);
    }

    #[test]
    fn lognormal_data_is_symmetrized() {
        let z: Vec<f64> = normals(2000, 2).into_iter().map(f64::exp).collect();
        assert!(skewness(&z) > 1.0);
        let tg = fit_gaussian_transform(&z).unwrap();
        let y: Vec<f64> = z.iter().map(|&v| tg.forward(v)).collect();
        assert!(skewness(&y).abs() < 0.2);
        assert!(tg.m_y().abs() < 0.05);
        assert!((tg.sigma_y_sq() - 1.0).abs() < 0.1);
        // exp is convex, so phi'' > 0
        assert!(tg.phi_dd_at_m_y() > 0.0);
    }

    #[test]
    fn forward_and_inverse_are_mutual_inverses() {
        let z: Vec<f64> = normals(300, 3).into_iter().map(|v| 4.0 * v + 0.5 * v * v).collect();
        let tg = fit_gaussian_transform(&z).unwrap();
        let s = tg.sorted_z();
        for &v in &s[1..s.len() - 1] {
            assert!((tg.inverse(tg.forward(v)) - v).abs() < 1e-6);
        }
        let mid = 0.5 * (s[10] + s[11]);
        assert!((tg.inverse(tg.forward(mid)) - mid).abs() < 1e-6);
        assert!(s.windows(2).all(|w| w[0] == w[1] || tg.forward(w[0]) < tg.forward(w[1])));
    }

    #[test]
    fn ties_and_saturation() {
        let mut z: Vec<f64> = (0..30).map(|i| i as f64).collect();
        z.extend([5.0, 5.0, 5.0]);
        let tg = fit_gaussian_transform(&z).unwrap();
        assert!(tg.forward(4.999) < tg.forward(5.0) && tg.forward(5.0) < tg.forward(5.001));
        assert_eq!(tg.forward(-100.0), tg.forward(0.0));
        assert_eq!(tg.inverse(10.0), 29.0);
        assert_eq!(tg.inverse(-10.0), 0.0);
    }

    #[test]
    fn rejects_bad_training_sets() {
        assert_eq!(
            fit_gaussian_transform(&[1.0; 19]),
            Err(KrigingError::TooFewPoints { n: 19, min: 20 })
        );
        assert_eq!(fit_gaussian_transform(&[2.0; 40]), Err(KrigingError::ConstantData));
        let mut z = normals(30, 4);
        z[3] = f64::NAN;
        assert_eq!(fit_gaussian_transform(&z), Err(KrigingError::NonFinite));
    }

    fn two_neighbors(tg: &GaussianTransform) -> (Vec<Observation>, GeoPoint) {
        let f = frame();
        let s = tg.sorted_z();
        (
            vec![
                Observation { location: f.from_local_xy(-25.0, 5.0, 90.0), value: s[5] },
                Observation { location: f.from_local_xy(40.0, -10.0, 90.0), value: s[s.len() - 8] },
            ],
            f.from_local_xy(3.0, 0.0, 90.0),
        )
    }

    #[test]
    fn tg_ok_two_neighbor_arithmetic() {
        let z: Vec<f64> = normals(400, 5).into_iter().map(|v| (0.5 * v).exp() * 3.0).collect();
        let tg = fit_gaussian_transform(&z).unwrap();
        let (obs, t) = two_neighbors(&tg);
        let m = model_y();
        let y: Vec<Observation> = obs.iter().map(|o| Observation { value: tg.forward(o.value), ..*o }).collect();
        let (p, sol) = ordinary_kriging(&y, &t, &m).unwrap();
        let want = tg.inverse(p.value) + tg.phi_dd_at_m_y() * (p.mse / 2.0 - sol.lagrange_mu.unwrap());
        let got = trans_gaussian_ok(&obs, &t, &m, &tg).unwrap();
        assert!((got.value - want).abs() < 1e-9);
        assert!(tg.phi_dd_at_m_y().abs() > 1e-3, "correction must be exercised");
    }

    #[test]
    fn tg_sk_three_neighbor_arithmetic() {
        let z: Vec<f64> = normals(400, 6).into_iter().map(|v| (0.5 * v).exp() * 3.0).collect();
        let tg = fit_gaussian_transform(&z).unwrap();
        let (mut obs, t) = two_neighbors(&tg);
        obs.push(Observation { location: frame().from_local_xy(0.0, 30.0, 70.0), value: tg.sorted_z()[200] });
        let m = model_y();
        let (mean_y, var_y) = (tg.m_y(), tg.sigma_y_sq());
        let y: Vec<Observation> = obs.iter().map(|o| Observation { value: tg.forward(o.value), ..*o }).collect();
        let (p, sol) = simple_kriging(&y, &t, &m, mean_y, var_y).unwrap();
        let lc: f64 = (0..3).map(|i| sol.weights[i] * var_y * m.rho_between(&t, &obs[i].location)).sum();
        let want = tg.inverse(p.value) + tg.phi_dd_at_m_y() / 2.0 * (var_y - lc);
        let got = trans_gaussian_sk(&obs, &t, &m, &tg, mean_y, var_y).unwrap();
        assert!((got.value - want).abs() < 1e-9);
    }

    #[test]
    fn tg_sk_uncorrelated_target() {
        let z: Vec<f64> = normals(400, 7).into_iter().map(f64::exp).collect();
        let tg = fit_gaussian_transform(&z).unwrap();
        let (obs, _) = two_neighbors(&tg);
        let far = frame().from_local_xy(0.0, 0.0, 1e6);
        let (mean_y, var_y) = (tg.m_y(), tg.sigma_y_sq());
        let got = trans_gaussian_sk(&obs, &far, &model_y(), &tg, mean_y, var_y).unwrap();
        let want = tg.inverse(mean_y) + tg.phi_dd_at_m_y() / 2.0 * var_y;
        assert!((got.value - want).abs() < 1e-12);
    }

    #[test]
    fn linear_phi_has_no_correction() {
        // Z equal to exact normal scores makes phi affine.
        let n = 199;
        let z: Vec<f64> = (1..=n)
            .map(|i| 2.0 + 3.0 * Normal::standard().inverse_cdf(i as f64 / (n + 1) as f64))
            .collect();
        let tg = fit_gaussian_transform(&z).unwrap();
        assert!(tg.phi_dd_at_m_y().abs() < 1e-9);
        assert!((tg.phi_d_at_m_y() - 3.0).abs() < 1e-9);
        let (obs, t) = two_neighbors(&tg);
        let m = model_y();
        let y: Vec<Observation> = obs.iter().map(|o| Observation { value: tg.forward(o.value), ..*o }).collect();
        let (p, _) = ordinary_kriging(&y, &t, &m).unwrap();
        let got = trans_gaussian_ok(&obs, &t, &m, &tg).unwrap();
        assert!((got.value - tg.inverse(p.value)).abs() < 1e-9);
        let (p, _) = simple_kriging(&y, &t, &m, 0.0, 1.0).unwrap();
        let got = trans_gaussian_sk(&obs, &t, &m, &tg, 0.0, 1.0).unwrap();
        assert!((got.value - tg.inverse(p.value)).abs() < 1e-9);
    }
}
