//! Ordinary, simple and trans-Gaussian Kriging.
//!
//! Ordinary Kriging solves the semivariogram system
//!
//! ```text
//! sum_j lambda_j gamma(s_i, s_j) + mu = gamma(s_0, s_i)    i = 1..n
//! sum_j lambda_j                      = 1
//! ```
//!
//! with `mse = sum_i lambda_i gamma(s_0, s_i) + mu`. Simple Kriging solves
//! `C lambda = c_0` around a known mean with `mse = sigma_Z^2 - lambda . c_0`.
//!
//! A nugget `eps` regularizes both systems. It is applied as `C + eps I`,
//! which in variogram form adds `eps` to every off-diagonal `gamma` and to
//! the right-hand side.

mod neighbors;
mod predictor;
mod transform;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use neighbors::{select_neighbor_indices, select_neighbors, DistanceMetric, NeighborSelector};
pub use predictor::{predict_rsrp, KrigingConfig, KrigingPredictor, Method, Mode};
pub use transform::{fit_gaussian_transform, trans_gaussian_ok, trans_gaussian_sk, GaussianTransform};

use crate::channel::ChannelError;
use crate::correlation::CorrelationModel;
use crate::geo::GeoPoint;

/// Nugget as a fraction of the sill.
pub const DEFAULT_NUGGET_RATIO: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KrigingError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("no training samples within {radius_m} m of the target")]
    EmptyNeighborhood { radius_m: f64 },
    #[error("invalid neighbor selector: {0}")]
    InvalidSelector(String),
    #[error("Kriging system is singular (ill-conditioned neighborhood of {0} points)")]
    Singular(usize),
    #[error("variance must be positive and finite, got {0}")]
    InvalidVariance(f64),
    #[error("Gaussian transform needs at least {min} points, got {n}")]
    TooFewPoints { n: usize, min: usize },
    #[error("training values are all equal")]
    ConstantData,
    #[error("non-finite training value")]
    NonFinite,
    #[error("residual mode needs channel parameters")]
    MissingChannel,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// A located scalar observation (residual, raw RSRP or transformed value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub location: GeoPoint,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub value: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigingSolution {
    pub weights: Vec<f64>,
    /// Lagrange multiplier, ordinary Kriging only.
    pub lagrange_mu: Option<f64>,
}

pub fn ordinary_kriging(
    neighbors: &[Observation],
    target: &GeoPoint,
    model: &CorrelationModel,
) -> Result<(Prediction, KrigingSolution), KrigingError> {
    ordinary_kriging_with_nugget(neighbors, target, model, DEFAULT_NUGGET_RATIO * model.sigma_w_sq)
}

pub fn ordinary_kriging_with_nugget(
    neighbors: &[Observation],
    target: &GeoPoint,
    model: &CorrelationModel,
    nugget: f64,
) -> Result<(Prediction, KrigingSolution), KrigingError> {
    let n = neighbors.len();
    if n == 0 {
        return Err(KrigingError::EmptyTraining);
    }
    let sill = model.sigma_w_sq;
    let gamma = |p: &GeoPoint, q: &GeoPoint| sill * (1.0 - model.rho_between(p, q));

    let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut b = DVector::<f64>::zeros(n + 1);
    for i in 0..n {
        for j in 0..i {
            let g = gamma(&neighbors[i].location, &neighbors[j].location) + nugget;
            a[(i, j)] = g;
            a[(j, i)] = g;
        }
        a[(i, n)] = 1.0;
        a[(n, i)] = 1.0;
        b[i] = gamma(target, &neighbors[i].location) + nugget;
    }
    b[n] = 1.0;

    let x = solve(a, &b, n)?;
    let weights: Vec<f64> = x.iter().take(n).copied().collect();
    let mu = x[n];
    let value = weights.iter().zip(neighbors).map(|(l, o)| l * o.value).sum();
    let mse = weights.iter().zip(b.iter()).map(|(l, g)| l * g).sum::<f64>() + mu;
    Ok((
        Prediction {
            value,
            mse: mse.max(0.0),
        },
        KrigingSolution {
            weights,
            lagrange_mu: Some(mu),
        },
    ))
}

/// Simple Kriging with known mean `mean_z` and variance `var_z`; the
/// correlation shape comes from `model` and the sill from `var_z`.
pub fn simple_kriging(
    neighbors: &[Observation],
    target: &GeoPoint,
    model: &CorrelationModel,
    mean_z: f64,
    var_z: f64,
) -> Result<(Prediction, KrigingSolution), KrigingError> {
    simple_kriging_with_nugget(neighbors, target, model, mean_z, var_z, DEFAULT_NUGGET_RATIO * var_z)
}

pub fn simple_kriging_with_nugget(
    neighbors: &[Observation],
    target: &GeoPoint,
    model: &CorrelationModel,
    mean_z: f64,
    var_z: f64,
    nugget: f64,
) -> Result<(Prediction, KrigingSolution), KrigingError> {
    let n = neighbors.len();
    if n == 0 {
        return Err(KrigingError::EmptyTraining);
    }
    if !(var_z > 0.0 && var_z.is_finite()) {
        return Err(KrigingError::InvalidVariance(var_z));
    }
    let mut c = DMatrix::<f64>::zeros(n, n);
    let mut c0 = DVector::<f64>::zeros(n);
    for i in 0..n {
        c[(i, i)] = var_z + nugget;
        for j in 0..i {
            let v = var_z * model.rho_between(&neighbors[i].location, &neighbors[j].location);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
        c0[i] = var_z * model.rho_between(target, &neighbors[i].location);
    }

    let weights = solve(c, &c0, n)?;
    let value = mean_z
        + weights
            .iter()
            .zip(neighbors)
            .map(|(l, o)| l * (o.value - mean_z))
            .sum::<f64>();
    let mse = var_z - weights.dot(&c0);
    Ok((
        Prediction {
            value,
            mse: mse.max(0.0),
        },
        KrigingSolution {
            weights: weights.iter().copied().collect(),
            lagrange_mu: None,
        },
    ))
}

fn solve(a: DMatrix<f64>, b: &DVector<f64>, n: usize) -> Result<DVector<f64>, KrigingError> {
    let x = a.lu().solve(b).ok_or(KrigingError::Singular(n))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(KrigingError::Singular(n))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geo::LocalFrame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn model() -> CorrelationModel {
        CorrelationModel {
            a: 0.6,
            p1: 0.03,
            p2: 0.004,
            q: 0.03,
            sigma_w_sq: 16.0,
        }
    }

    pub(crate) fn frame() -> LocalFrame {
        LocalFrame::new(GeoPoint::new(35.7275, -78.696, 0.0).unwrap())
    }

    pub(crate) fn random_obs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Observation> {
        let f = frame();
        (0..n)
            .map(|_| Observation {
                location: f.from_local_xy(
                    rng.random_range(-150.0..150.0),
                    rng.random_range(-150.0..150.0),
                    [50.0, 70.0, 90.0, 110.0][rng.random_range(0..4)],
                ),
                value: rng.random_range(-8.0..8.0),
            })
            .collect()
    }

    /// Gaussian elimination with partial pivoting, independent of nalgebra.
    pub(crate) fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    fn gamma(m: &CorrelationModel, p: &GeoPoint, q: &GeoPoint) -> f64 {
        m.sigma_w_sq * (1.0 - m.rho_between(p, q))
    }

    #[test]
    fn single_neighbor_hand_solution() {
        let f = frame();
        let m = model();
        let s1 = Observation {
            location: f.from_local_xy(40.0, 0.0, 70.0),
            value: 3.5,
        };
        let t = f.from_local_xy(0.0, 0.0, 70.0);
        let (p, sol) = ordinary_kriging_with_nugget(&[s1], &t, &m, 0.0).unwrap();
        let g = gamma(&m, &t, &s1.location);
        assert!((sol.weights[0] - 1.0).abs() < 1e-12);
        assert!((sol.lagrange_mu.unwrap() - g).abs() < 1e-12);
        assert!((p.value - 3.5).abs() < 1e-12);
        assert!((p.mse - 2.0 * g).abs() < 1e-9);
    }

    #[test]
    fn mirror_symmetric_pair_gets_equal_weights() {
        let f = frame();
        let obs = [
            Observation { location: f.from_local_xy(-30.0, 0.0, 90.0), value: 1.0 },
            Observation { location: f.from_local_xy(30.0, 0.0, 90.0), value: 5.0 },
        ];
        let t = f.from_local_xy(0.0, 0.0, 90.0);
        let (p, sol) = ordinary_kriging(&obs, &t, &model()).unwrap();
        assert!((sol.weights[0] - 0.5).abs() < 1e-6 && (sol.weights[1] - 0.5).abs() < 1e-6);
        assert!((p.value - 3.0).abs() < 1e-5);
    }

    #[test]
    fn ordinary_matches_direct_solve() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [3usize, 7, 25] {
            let obs = random_obs(&mut rng, n);
            let t = frame().from_local_xy(5.0, -12.0, 80.0);
            let (p, sol) = ordinary_kriging_with_nugget(&obs, &t, &m, 0.0).unwrap();
            let mut a = vec![vec![0.0; n + 1]; n + 1];
            let mut b = vec![0.0; n + 1];
            for i in 0..n {
                for j in 0..n {
                    a[i][j] = gamma(&m, &obs[i].location, &obs[j].location);
                }
                a[i][n] = 1.0;
                a[n][i] = 1.0;
                b[i] = gamma(&m, &t, &obs[i].location);
            }
            b[n] = 1.0;
            let x = gauss_solve(a, b.clone());
            for i in 0..n {
                assert!((sol.weights[i] - x[i]).abs() < 1e-9);
            }
            assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let want: f64 = (0..n).map(|i| x[i] * obs[i].value).sum();
            assert!((p.value - want).abs() < 1e-9);
            let mse: f64 = (0..n).map(|i| x[i] * b[i]).sum::<f64>() + x[n];
            assert!((p.mse - mse.max(0.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn simple_matches_direct_solve() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obs = random_obs(&mut rng, 4);
        let t = frame().from_local_xy(-20.0, 33.0, 60.0);
        let (mean, var) = (1.5, 12.0);
        let (p, sol) = simple_kriging_with_nugget(&obs, &t, &m, mean, var, 0.0).unwrap();
        let a: Vec<Vec<f64>> = obs
            .iter()
            .map(|oi| obs.iter().map(|oj| var * m.rho_between(&oi.location, &oj.location)).collect())
            .collect();
        let c0: Vec<f64> = obs.iter().map(|o| var * m.rho_between(&t, &o.location)).collect();
        let x = gauss_solve(a, c0.clone());
        for i in 0..4 {
            assert!((sol.weights[i] - x[i]).abs() < 1e-9);
        }
        let want = mean + (0..4).map(|i| x[i] * (obs[i].value - mean)).sum::<f64>();
        assert!((p.value - want).abs() < 1e-9);
        let mse = var - (0..4).map(|i| x[i] * c0[i]).sum::<f64>();
        assert!((p.mse - mse).abs() < 1e-9);
        assert!(sol.lagrange_mu.is_none());
    }

    #[test]
    fn uncorrelated_target_returns_mean() {
        let f = frame();
        let obs = [
            Observation { location: f.from_local_xy(0.0, 0.0, 50.0), value: 4.0 },
            Observation { location: f.from_local_xy(10.0, 0.0, 50.0), value: -2.0 },
        ];
        // Far enough that every correlation underflows to zero.
        let t = f.from_local_xy(0.0, 0.0, 50.0 + 1e6);
        let (p, _) = simple_kriging(&obs, &t, &model(), 0.7, 9.0).unwrap();
        assert_eq!(p.value, 0.7);
        assert_eq!(p.mse, 9.0);
    }

    #[test]
    fn exact_interpolation_without_nugget() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let obs = random_obs(&mut rng, 10);
        for k in [0, 4, 9] {
            let t = obs[k].location;
            let (p, _) = ordinary_kriging_with_nugget(&obs, &t, &m, 0.0).unwrap();
            assert!((p.value - obs[k].value).abs() < 1e-6);
            assert!(p.mse.abs() < 1e-9);
            let (p, _) = simple_kriging_with_nugget(&obs, &t, &m, 0.0, 16.0, 0.0).unwrap();
            assert!((p.value - obs[k].value).abs() < 1e-6);
            assert!(p.mse.abs() < 1e-9);
        }
    }

    #[test]
    fn duplicate_locations_need_the_nugget() {
        let f = frame();
        let p = f.from_local_xy(3.0, 3.0, 70.0);
        let obs = [Observation { location: p, value: 1.0 }, Observation { location: p, value: 2.0 }];
        let t = f.from_local_xy(0.0, 0.0, 70.0);
        assert!(matches!(
            ordinary_kriging_with_nugget(&obs, &t, &model(), 0.0),
            Err(KrigingError::Singular(2))
        ));
        let (pred, sol) = ordinary_kriging(&obs, &t, &model()).unwrap();
        assert!((pred.value - 1.5).abs() < 1e-6);
        assert!((sol.weights[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn invalid_inputs() {
        let t = frame().from_local_xy(0.0, 0.0, 50.0);
        assert_eq!(ordinary_kriging(&[], &t, &model()), Err(KrigingError::EmptyTraining));
        let obs = [Observation { location: t, value: 0.0 }];
        assert!(matches!(
            simple_kriging(&obs, &t, &model(), 0.0, 0.0),
            Err(KrigingError::InvalidVariance(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn weights_sum_to_one_and_shift_invariance(seed in any::<u64>(), n in 1usize..20, c in -50.0..50.0f64) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let obs = random_obs(&mut rng, n);
                let t = frame().from_local_xy(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), 70.0);
                let m = model();
                let (p, sol) = ordinary_kriging(&obs, &t, &m).unwrap();
                prop_assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(p.mse >= 0.0);
                let shifted: Vec<Observation> = obs.iter().map(|o| Observation { value: o.value + c, ..*o }).collect();
                let (q, _) = ordinary_kriging(&shifted, &t, &m).unwrap();
                prop_assert!((q.value - p.value - c).abs() < 1e-9);
            }

            #[test]
            fn simple_mse_bounded_by_variance(seed in any::<u64>(), n in 1usize..20, var in 0.1..40.0f64) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let obs = random_obs(&mut rng, n);
                let t = frame().from_local_xy(rng.random_range(-200.0..200.0), 0.0, 90.0);
                let (p, _) = simple_kriging(&obs, &t, &model(), 0.0, var).unwrap();
                prop_assert!(p.mse >= 0.0 && p.mse <= var + 1e-9);
            }
        }
    }
}
