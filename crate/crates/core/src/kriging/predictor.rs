//! RSRP prediction pipeline: detrend, krige the residual, retrend.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::transform::{tg_ok_with_nugget, tg_sk_with_nugget};
use super::{
    fit_gaussian_transform, ordinary_kriging_with_nugget, select_neighbor_indices,
    simple_kriging_with_nugget, DistanceMetric, GaussianTransform, KrigingError, NeighborSelector,
    Observation, Prediction, DEFAULT_NUGGET_RATIO,
};
use crate::channel::{Channel, Sample};
use crate::correlation::CorrelationModel;
use crate::geo::GeoPoint;
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ok,
    Sk,
    TgOk,
    TgSk,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ok, Method::Sk, Method::TgOk, Method::TgSk];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ok => "ok",
            Method::Sk => "sk",
            Method::TgOk => "tg_ok",
            Method::TgSk => "tg_sk",
        }
    }

    pub fn is_trans_gaussian(&self) -> bool {
        matches!(self, Method::TgOk | Method::TgSk)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown Kriging method `{s}`"))
    }
}

/// Value domain the interpolator works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Krige `r - (P_Tx - PL)` and add the two-ray trend back at the target.
    #[default]
    Residual,
    /// Krige RSRP directly.
    Raw,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Residual => "residual",
            Mode::Raw => "raw",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "residual" => Ok(Mode::Residual),
            "raw" => Ok(Mode::Raw),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrigingConfig {
    pub method: Method,
    pub selector: NeighborSelector,
    pub mode: Mode,
    /// Nugget as a fraction of the sill.
    pub nugget_ratio: f64,
}

impl KrigingConfig {
    pub fn new(method: Method, selector: NeighborSelector) -> Self {
        Self {
            method,
            selector,
            mode: Mode::Residual,
            nugget_ratio: DEFAULT_NUGGET_RATIO,
        }
    }
}

/// A Kriging interpolator prepared from one training set.
///
/// Training values are mapped into the working domain once; simple Kriging
/// uses the sample mean and variance of that domain, and the trans-Gaussian
/// variants fit their normal-score transform on it.
#[derive(Debug, Clone)]
pub struct KrigingPredictor {
    config: KrigingConfig,
    train: Vec<Observation>,
    locations: Vec<GeoPoint>,
    metric: DistanceMetric,
    model: CorrelationModel,
    transform: Option<GaussianTransform>,
    mean: f64,
    var: f64,
    channel: Option<Channel>,
}

impl KrigingPredictor {
    /// `model_y` is the Y-domain correlation model for the trans-Gaussian
    /// methods; when absent, `model`'s shape is reused with the Y-domain
    /// variance as sill.
    pub fn new(
        train: &[Sample],
        config: KrigingConfig,
        model: &CorrelationModel,
        model_y: Option<&CorrelationModel>,
        channel: Option<&Channel>,
    ) -> Result<Self, KrigingError> {
        config.selector.validate()?;
        if train.is_empty() {
            return Err(KrigingError::EmptyTraining);
        }
        let channel = match config.mode {
            Mode::Residual => Some(channel.ok_or(KrigingError::MissingChannel)?.clone()),
            Mode::Raw => None,
        };
        let train: Vec<Observation> = train
            .iter()
            .map(|s| {
                let trend = match &channel {
                    Some(ch) => ch.mean_rsrp_db(&s.location)?,
                    None => 0.0,
                };
                Ok(Observation {
                    location: s.location,
                    value: s.rsrp_db - trend,
                })
            })
            .collect::<Result<_, KrigingError>>()?;
        if train.iter().any(|o| !o.value.is_finite()) {
            return Err(KrigingError::NonFinite);
        }

        let values: Vec<f64> = train.iter().map(|o| o.value).collect();
        let (mut mean, mut var) = mean_var(&values);
        let mut model = *model;
        let mut transform = None;
        if config.method.is_trans_gaussian() {
            let tg = fit_gaussian_transform(&values)?;
            mean = tg.m_y();
            var = tg.sigma_y_sq();
            model = match model_y {
                Some(m) => *m,
                None => model.with_sill(var),
            };
            transform = Some(tg);
        }
        if matches!(config.method, Method::Sk | Method::TgSk) && !(var > 0.0 && var.is_finite()) {
            return Err(KrigingError::InvalidVariance(var));
        }
        let locations: Vec<GeoPoint> = train.iter().map(|o| o.location).collect();
        Ok(Self {
            metric: DistanceMetric::for_training(&locations),
            config,
            train,
            locations,
            model,
            transform,
            mean,
            var,
            channel,
        })
    }

    pub fn config(&self) -> &KrigingConfig {
        &self.config
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    /// Working-domain training observations.
    pub fn observations(&self) -> &[Observation] {
        &self.train
    }

    pub fn transform(&self) -> Option<&GaussianTransform> {
        self.transform.as_ref()
    }

    pub fn predict(&self, target: &GeoPoint) -> Result<Prediction, KrigingError> {
        let idx = select_neighbor_indices(&self.locations, target, self.config.selector, self.metric)?;
        let nb: Vec<Observation> = idx.iter().map(|&i| self.train[i]).collect();
        let m = &self.model;
        let r = self.config.nugget_ratio;
        let p = match self.config.method {
            Method::Ok => ordinary_kriging_with_nugget(&nb, target, m, r * m.sigma_w_sq)?.0,
            Method::Sk => {
                simple_kriging_with_nugget(&nb, target, m, self.mean, self.var, r * self.var)?.0
            }
            Method::TgOk => {
                let tg = self.transform.as_ref().expect("fitted in new");
                tg_ok_with_nugget(&nb, target, m, tg, r * m.sigma_w_sq)?
            }
            Method::TgSk => {
                let tg = self.transform.as_ref().expect("fitted in new");
                tg_sk_with_nugget(&nb, target, m, tg, self.mean, self.var, r * self.var)?
            }
        };
        Ok(Prediction {
            value: p.value + self.trend(target)?,
            mse: p.mse,
        })
    }

    /// Like [`predict`](Self::predict), but a target with no neighbors in a
    /// fixed radius gets the training mean (plus trend) with the training
    /// variance as mse.
    pub fn predict_or_mean(&self, target: &GeoPoint) -> Result<Prediction, KrigingError> {
        match self.predict(target) {
            Err(KrigingError::EmptyNeighborhood { .. }) => {
                let values: Vec<f64> = self.train.iter().map(|o| o.value).collect();
                let (mean, var) = mean_var(&values);
                Ok(Prediction {
                    value: mean + self.trend(target)?,
                    mse: var.max(0.0),
                })
            }
            other => other,
        }
    }

    pub fn predict_many(&self, targets: &[GeoPoint], exec: Execution) -> Vec<Result<Prediction, KrigingError>> {
        exec.map(targets, |t| self.predict(t))
    }

    fn trend(&self, target: &GeoPoint) -> Result<f64, KrigingError> {
        Ok(match &self.channel {
            Some(ch) => ch.mean_rsrp_db(target)?,
            None => 0.0,
        })
    }
}

/// One-shot prediction; see [`KrigingPredictor`].
pub fn predict_rsrp(
    train: &[Sample],
    target: &GeoPoint,
    config: KrigingConfig,
    model: &CorrelationModel,
    channel: Option<&Channel>,
) -> Result<Prediction, KrigingError> {
    KrigingPredictor::new(train, config, model, None, channel)?.predict(target)
}

/// Mean and unbiased variance (0 for a single value).
fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize_dataset, GroundReflection, TwoRayParams, ZigZag};

    fn channel() -> Channel {
        Channel::isotropic(TwoRayParams {
            wavelength_m: 0.23,
            tx_power_db: 30.0,
            ground: GroundReflection::default(),
            bs: GeoPoint::new(35.7265, -78.6975, 10.0).unwrap(),
        })
    }

    fn scene(sigma_sq: f64, seed: u64) -> Vec<Sample> {
        let t = ZigZag {
            corner: GeoPoint::new(35.7275, -78.6960, 0.0).unwrap(),
            north_extent_m: 300.0,
            east_extent_m: 150.0,
            line_spacing_m: 50.0,
            sample_spacing_m: 10.0,
            heights_m: vec![110.0],
        };
        let m = CorrelationModel { a: 0.6, p1: 0.03, p2: 0.004, q: 0.03, sigma_w_sq: sigma_sq };
        synthesize_dataset(&t, &channel(), &m, 0.0, seed).unwrap()
    }

    fn model() -> CorrelationModel {
        CorrelationModel { a: 0.6, p1: 0.03, p2: 0.004, q: 0.03, sigma_w_sq: 16.0 }
    }

    #[test]
    fn method_and_mode_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("raw".parse::<Mode>().unwrap(), Mode::Raw);
        assert!("universal".parse::<Method>().is_err());
    }

    fn split(data: &[Sample], k: usize) -> (Vec<Sample>, Vec<Sample>) {
        let test = data.iter().step_by(k).copied().collect();
        let train = data.iter().enumerate().filter(|(i, _)| i % k != 0).map(|(_, s)| *s).collect();
        (train, test)
    }

    #[test]
    fn zero_shadow_world_is_reproduced() {
        let (train, test) = split(&scene(0.0, 1), 3);
        let ch = channel();
        let cfg = KrigingConfig::new(Method::Ok, NeighborSelector::NearestN(12));
        let p = KrigingPredictor::new(&train, cfg, &model(), None, Some(&ch)).unwrap();
        for s in &test {
            assert!((p.predict(&s.location).unwrap().value - s.rsrp_db).abs() < 1e-6);
        }
        // Simple Kriging has no variance to work with.
        let cfg = KrigingConfig::new(Method::Sk, NeighborSelector::NearestN(12));
        assert!(matches!(
            KrigingPredictor::new(&train, cfg, &model(), None, Some(&ch)),
            Err(KrigingError::InvalidVariance(_))
        ));
    }

    #[test]
    fn training_location_is_reproduced_without_nugget() {
        let data = scene(16.0, 2);
        let ch = channel();
        for method in [Method::Ok, Method::Sk] {
            let mut cfg = KrigingConfig::new(method, NeighborSelector::FixedRadius(60.0));
            cfg.nugget_ratio = 0.0;
            let p = KrigingPredictor::new(&data, cfg, &model(), None, Some(&ch)).unwrap();
            for s in data.iter().step_by(37) {
                let got = p.predict(&s.location).unwrap();
                assert!((got.value - s.rsrp_db).abs() < 1e-6, "{method}");
            }
        }
    }

    #[test]
    fn residual_mode_needs_channel() {
        let data = scene(16.0, 3);
        let cfg = KrigingConfig::new(Method::Ok, NeighborSelector::NearestN(5));
        assert!(matches!(
            KrigingPredictor::new(&data, cfg, &model(), None, None),
            Err(KrigingError::MissingChannel)
        ));
        let raw = KrigingConfig { mode: Mode::Raw, ..cfg };
        let p = KrigingPredictor::new(&data, raw, &model(), None, None).unwrap();
        assert!(p.predict(&data[0].location).unwrap().value.is_finite());
    }

    #[test]
    fn empty_radius_falls_back_to_mean() {
        let data = scene(16.0, 4);
        let cfg = KrigingConfig::new(Method::Ok, NeighborSelector::FixedRadius(20.0));
        let p = KrigingPredictor::new(&data, cfg, &model(), None, Some(&channel())).unwrap();
        let far = crate::geo::LocalFrame::new(data[0].location).from_local_xy(-2000.0, -2000.0, 110.0);
        assert!(matches!(p.predict(&far), Err(KrigingError::EmptyNeighborhood { .. })));
        let got = p.predict_or_mean(&far).unwrap();
        let mean = p.observations().iter().map(|o| o.value).sum::<f64>() / data.len() as f64;
        let trend = channel().mean_rsrp_db(&far).unwrap();
        assert!((got.value - mean - trend).abs() < 1e-9);
    }

    #[test]
    fn batch_prediction_matches_single_calls() {
        let data = scene(16.0, 5);
        let (train, test) = data.split_at(80);
        let targets: Vec<GeoPoint> = test.iter().map(|s| s.location).collect();
        for method in Method::ALL {
            let cfg = KrigingConfig::new(method, NeighborSelector::NearestN(15));
            let p = KrigingPredictor::new(train, cfg, &model(), None, Some(&channel())).unwrap();
            let seq = p.predict_many(&targets, Execution::Sequential);
            let par = p.predict_many(&targets, Execution::Parallel);
            assert_eq!(seq, par);
            let one = predict_rsrp(train, &targets[7], cfg, &model(), Some(&channel())).unwrap();
            assert_eq!(seq[7].as_ref().unwrap(), &one);
        }
    }

    #[test]
    fn kriging_beats_trend_only_on_correlated_scene() {
        let data = scene(16.0, 6);
        let (train, test) = split(&data, 2);
        let cfg = KrigingConfig::new(Method::Ok, NeighborSelector::FixedRadius(100.0));
        let p = KrigingPredictor::new(&train, cfg, &model(), None, Some(&channel())).unwrap();
        let (mut se_k, mut se_b) = (0.0, 0.0);
        for s in &test {
            se_k += (p.predict(&s.location).unwrap().value - s.rsrp_db).powi(2);
            se_b += (channel().mean_rsrp_db(&s.location).unwrap() - s.rsrp_db).powi(2);
        }
        assert!(se_k < se_b);
    }
}
