//! Two-ray (line of sight + ground reflection) pathloss.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{AntennaPattern, ChannelError};
use crate::geo::{bearing_deg, horizontal_distance, GeoPoint};

/// Linear gains below this are clamped before the dB conversion, which caps
/// the pathloss at 180 dB where the two rays cancel exactly.
pub const DEEP_FADE_FLOOR: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    Vertical,
    Horizontal,
}

/// How the ground reflection coefficient is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundReflection {
    /// Fresnel coefficient of a lossless dielectric half-space.
    Fresnel {
        rel_permittivity: f64,
        polarization: Polarization,
    },
    /// A fixed real coefficient, e.g. 0 (free space) or -1 (perfect reflector).
    Constant { gamma: f64 },
}

impl Default for GroundReflection {
    fn default() -> Self {
        GroundReflection::Fresnel {
            rel_permittivity: 15.0,
            polarization: Polarization::Vertical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoRayParams {
    pub wavelength_m: f64,
    pub tx_power_db: f64,
    pub ground: GroundReflection,
    pub bs: GeoPoint,
}

impl TwoRayParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.wavelength_m > 0.0 && self.wavelength_m.is_finite()) {
            return Err(ChannelError::InvalidParams("wavelength must be positive".into()));
        }
        if !self.tx_power_db.is_finite() {
            return Err(ChannelError::InvalidParams("transmit power must be finite".into()));
        }
        if let GroundReflection::Fresnel {
            rel_permittivity, ..
        } = self.ground
        {
            if !(rel_permittivity > 1.0) {
                return Err(ChannelError::InvalidParams(
                    "relative permittivity must exceed 1".into(),
                ));
            }
        }
        self.bs
            .validate()
            .map_err(|e| ChannelError::InvalidParams(e.to_string()))
    }
}

/// Fresnel reflection coefficient at grazing angle `theta_r` (radians above
/// the ground plane) for a ground of real relative permittivity `eps_r`.
pub fn reflection_coefficient(
    theta_r: f64,
    eps_r: f64,
    pol: Polarization,
) -> Result<Complex64, ChannelError> {
    if !(theta_r > 0.0 && theta_r <= FRAC_PI_2) {
        return Err(ChannelError::GrazingAngle(theta_r));
    }
    if !(eps_r > 1.0) {
        return Err(ChannelError::InvalidParams(
            "relative permittivity must exceed 1".into(),
        ));
    }
    let (s, c) = theta_r.sin_cos();
    let root = (eps_r - c * c).sqrt();
    let gamma = match pol {
        Polarization::Horizontal => (s - root) / (s + root),
        Polarization::Vertical => (eps_r * s - root) / (eps_r * s + root),
    };
    Ok(Complex64::new(gamma, 0.0))
}

/// Ray geometry between the base station and a receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoRayGeometry {
    pub d_h: f64,
    pub d_3d: f64,
    /// Length of the ground-reflected path, `r1 + r2`.
    pub reflected_len: f64,
    /// `r1 + r2 - d_3d`, computed without cancellation.
    pub excess_len: f64,
    /// Elevation of the direct ray leaving the base station, radians.
    pub theta_los: f64,
    /// Grazing angle of the reflected ray at the ground, radians.
    pub theta_refl: f64,
    /// Bearing from base station to receiver, degrees.
    pub azimuth_deg: f64,
}

impl TwoRayGeometry {
    pub fn new(bs: &GeoPoint, uav: &GeoPoint) -> Result<Self, ChannelError> {
        let (hb, hu) = (bs.height_m, uav.height_m);
        if !(hb > 0.0 && hu > 0.0) {
            return Err(ChannelError::NonPositiveHeight);
        }
        let d_h = horizontal_distance(bs, uav);
        let d_3d = d_h.hypot(hu - hb);
        if d_3d == 0.0 {
            return Err(ChannelError::CoLocated);
        }
        let reflected_len = d_h.hypot(hb + hu);
        Ok(Self {
            d_h,
            d_3d,
            reflected_len,
            excess_len: 4.0 * hb * hu / (reflected_len + d_3d),
            theta_los: (hu - hb).atan2(d_h),
            theta_refl: (hb + hu).atan2(d_h),
            azimuth_deg: bearing_deg(bs, uav),
        })
    }
}

/// Pathloss in dB between `params.bs` and `uav`.
///
/// Both antenna patterns are read at the bearing from the base station to
/// the receiver. The direct ray uses the signed elevation of the LoS path
/// and the reflected ray uses `-theta_r` (it leaves the base station downward).
pub fn two_ray_pathloss(
    params: &TwoRayParams,
    uav: &GeoPoint,
    g_bs: &AntennaPattern,
    g_uav: &AntennaPattern,
) -> Result<f64, ChannelError> {
    let geom = TwoRayGeometry::new(&params.bs, uav)?;
    let gamma = match params.ground {
        GroundReflection::Fresnel {
            rel_permittivity,
            polarization,
        } => reflection_coefficient(geom.theta_refl, rel_permittivity, polarization)?,
        GroundReflection::Constant { gamma } => Complex64::new(gamma, 0.0),
    };
    let az = geom.azimuth_deg;
    let el_los = geom.theta_los.to_degrees();
    let el_refl = -geom.theta_refl.to_degrees();
    let amp_los = 10f64.powf((g_bs.gain_dbi(el_los, az) + g_uav.gain_dbi(el_los, az)) / 20.0);
    let amp_refl = 10f64.powf((g_bs.gain_dbi(el_refl, az) + g_uav.gain_dbi(el_refl, az)) / 20.0);

    let lambda = params.wavelength_m;
    let phase = 2.0 * PI * geom.excess_len / lambda;
    let field = Complex64::new(amp_los / geom.d_3d, 0.0)
        + gamma * amp_refl * Complex64::from_polar(1.0, -phase) / geom.reflected_len;
    let gain = (lambda / (4.0 * PI)).powi(2) * field.norm_sqr();
    Ok(-10.0 * gain.max(DEEP_FADE_FLOOR).log10())
}
