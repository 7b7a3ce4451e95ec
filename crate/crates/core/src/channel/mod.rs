//! Synthetic ground truth: two-ray pathloss with antenna gains, correlated
//! shadow fading, zig-zag flight datasets, and detrending of measurements
//! into shadow-fading residuals.

mod antenna;
mod shadow;
mod tworay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use antenna::{load_antenna_pattern, AntennaPattern, PATTERN_HEADER};
pub use shadow::{generate_shadow_fading, skew_shadow_fading, MAX_SHADOW_POINTS};
pub use tworay::{
    reflection_coefficient, two_ray_pathloss, GroundReflection, Polarization, TwoRayGeometry,
    TwoRayParams, DEEP_FADE_FLOOR,
};

use crate::correlation::CorrelationModel;
use crate::geo::{GeoPoint, LocalFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("grazing angle {0} rad outside (0, pi/2]")]
    GrazingAngle(f64),
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("base station and receiver are co-located")]
    CoLocated,
    #[error("two-ray model needs positive antenna heights")]
    NonPositiveHeight,
    #[error("antenna pattern line {line}: {msg}")]
    Pattern { line: usize, msg: String },
    #[error("antenna pattern line {line}: grid is not sorted")]
    UnsortedGrid { line: usize },
    #[error("antenna pattern line {line}: non-finite gain")]
    NonFiniteGain { line: usize },
    #[error("{0} points exceed the dense shadow-field limit of {MAX_SHADOW_POINTS}")]
    TooManyPoints(usize),
    #[error("shadow-fading covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("trajectory produces no points")]
    EmptyTrajectory,
    #[error("io: {0}")]
    Io(String),
}

/// One RSRP measurement. `shadow_db` is the residual against the two-ray
/// prediction and is unset until the sample is detrended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub location: GeoPoint,
    pub rsrp_db: f64,
    pub shadow_db: Option<f64>,
}

impl Sample {
    pub fn new(location: GeoPoint, rsrp_db: f64) -> Self {
        Self {
            location,
            rsrp_db,
            shadow_db: None,
        }
    }
}

/// Two-ray parameters plus both antenna patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub params: TwoRayParams,
    pub bs_pattern: AntennaPattern,
    pub uav_pattern: AntennaPattern,
}

impl Channel {
    pub fn isotropic(params: TwoRayParams) -> Self {
        Self {
            params,
            bs_pattern: AntennaPattern::isotropic(),
            uav_pattern: AntennaPattern::isotropic(),
        }
    }

    pub fn pathloss_db(&self, uav: &GeoPoint) -> Result<f64, ChannelError> {
        two_ray_pathloss(&self.params, uav, &self.bs_pattern, &self.uav_pattern)
    }

    /// Deterministic part of the received power, `P_Tx - PL`.
    pub fn mean_rsrp_db(&self, uav: &GeoPoint) -> Result<f64, ChannelError> {
        Ok(self.params.tx_power_db - self.pathloss_db(uav)?)
    }
}

/// `r = P_Tx - PL + w`, all in dB.
pub fn received_power(params: &TwoRayParams, pathloss_db: f64, shadow_db: f64) -> f64 {
    params.tx_power_db - pathloss_db + shadow_db
}

/// Fills `shadow_db = r - P_Tx + PL` for every sample.
pub fn detrend(samples: &[Sample], channel: &Channel) -> Result<Vec<Sample>, ChannelError> {
    samples
        .iter()
        .map(|s| {
            let pl = channel.pathloss_db(&s.location)?;
            Ok(Sample {
                shadow_db: Some(s.rsrp_db - channel.params.tx_power_db + pl),
                ..*s
            })
        })
        .collect()
}

/// Inverse of [`detrend`]: rebuilds `rsrp_db` from the stored residuals.
/// Samples without a residual are returned unchanged.
pub fn retrend(samples: &[Sample], channel: &Channel) -> Result<Vec<Sample>, ChannelError> {
    samples
        .iter()
        .map(|s| match s.shadow_db {
            Some(w) => Ok(Sample {
                rsrp_db: received_power(&channel.params, channel.pathloss_db(&s.location)?, w),
                ..*s
            }),
            None => Ok(*s),
        })
        .collect()
}

/// Serpentine survey pattern: straight north-south legs stepped eastward,
/// flown once per height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZigZag {
    /// South-west corner of the surveyed rectangle.
    pub corner: GeoPoint,
    pub north_extent_m: f64,
    pub east_extent_m: f64,
    pub line_spacing_m: f64,
    pub sample_spacing_m: f64,
    pub heights_m: Vec<f64>,
}

impl ZigZag {
    /// Waypoints, grouped by height in the order of `heights_m`. Leg and
    /// sample spacings are shrunk so both ends of each axis are visited.
    pub fn points(&self) -> Result<Vec<GeoPoint>, ChannelError> {
        let valid = self.north_extent_m > 0.0
            && self.east_extent_m >= 0.0
            && self.line_spacing_m > 0.0
            && self.sample_spacing_m > 0.0
            && self.heights_m.iter().all(|h| h.is_finite() && *h >= 0.0)
            && [self.north_extent_m, self.east_extent_m].iter().all(|x| x.is_finite());
        if !valid || self.heights_m.is_empty() {
            return Err(ChannelError::EmptyTrajectory);
        }
        let frame = LocalFrame::new(self.corner);
        let legs = (self.east_extent_m / self.line_spacing_m).ceil().max(0.0) as usize;
        let steps = (self.north_extent_m / self.sample_spacing_m).ceil().max(1.0) as usize;
        let leg_dx = if legs == 0 { 0.0 } else { self.east_extent_m / legs as f64 };
        let step_dy = self.north_extent_m / steps as f64;
        let mut pts = Vec::with_capacity(self.heights_m.len() * (legs + 1) * (steps + 1));
        for &h in &self.heights_m {
            for leg in 0..=legs {
                let x = leg as f64 * leg_dx;
                for k in 0..=steps {
                    let k = if leg % 2 == 0 { k } else { steps - k };
                    pts.push(frame.from_local_xy(x, k as f64 * step_dy, h));
                }
            }
        }
        Ok(pts)
    }
}

/// Samples along `trajectory` carrying `P_Tx - PL + w` and the true residual
/// `w`, with `w` drawn from `model` (and skewed by `skew`, 0 for Gaussian).
pub fn synthesize_dataset(
    trajectory: &ZigZag,
    channel: &Channel,
    model: &CorrelationModel,
    skew: f64,
    seed: u64,
) -> Result<Vec<Sample>, ChannelError> {
    channel.params.validate()?;
    let pts = trajectory.points()?;
    let w = skew_shadow_fading(&generate_shadow_fading(&pts, model, seed)?, skew);
    pts.iter()
        .zip(w)
        .map(|(p, w)| {
            Ok(Sample {
                location: *p,
                rsrp_db: received_power(&channel.params, channel.pathloss_db(p)?, w),
                shadow_db: Some(w),
            })
        })
        .collect()
}
