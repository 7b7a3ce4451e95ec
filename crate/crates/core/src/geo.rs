//! Geodetic positions, great-circle and 3D distances, and a local metric frame.
//!
//! Heights are treated as meters in a single consistent vertical frame. Whether
//! that frame is above ground or above sea level is up to the data source; the
//! distances only use height differences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

const METERS_PER_DEG: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("height {0} is not a finite non-negative value")]
    Height(f64),
    #[error("cannot build a local frame from an empty point set")]
    EmptyFrame,
}

/// A transmitter or receiver position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub height_m: f64,
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64, height_m: f64) -> Result<Self, GeoError> {
        let p = Self {
            lat_deg,
            lon_deg,
            height_m,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(-90.0..=90.0).contains(&self.lat_deg) {
            return Err(GeoError::Latitude(self.lat_deg));
        }
        if !(-180.0..=180.0).contains(&self.lon_deg) {
            return Err(GeoError::Longitude(self.lon_deg));
        }
        if !self.height_m.is_finite() || self.height_m < 0.0 {
            return Err(GeoError::Height(self.height_m));
        }
        Ok(())
    }

    /// Same horizontal position at a different height.
    pub fn at_height(&self, height_m: f64) -> Self {
        Self { height_m, ..*self }
    }
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_M`].
///
/// Evaluates the spherical law of cosines, `A * acos(sin a sin b + cos a cos b cos dlon)`,
/// through its haversine form. The two are equal in exact arithmetic, but the
/// haversine form keeps meter-level separations accurate where `acos` near 1
/// would lose about 8 significant digits, and coincident points give exactly 0.
pub fn horizontal_distance(p: &GeoPoint, q: &GeoPoint) -> f64 {
    let (lat_p, lat_q) = (p.lat_deg.to_radians(), q.lat_deg.to_radians());
    let half_dlat = 0.5 * (lat_q - lat_p);
    let half_dlon = 0.5 * (q.lon_deg - p.lon_deg).to_radians();
    let h = half_dlat.sin().powi(2) + lat_p.cos() * lat_q.cos() * half_dlon.sin().powi(2);
    let h = h.clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_M * h.sqrt().atan2((1.0 - h).sqrt())
}

pub fn vertical_distance(p: &GeoPoint, q: &GeoPoint) -> f64 {
    (p.height_m - q.height_m).abs()
}

pub fn distance_3d(p: &GeoPoint, q: &GeoPoint) -> f64 {
    horizontal_distance(p, q).hypot(vertical_distance(p, q))
}

/// Initial great-circle bearing from `p` to `q`, degrees clockwise from north in `[0, 360)`.
///
/// Returns 0 for horizontally coincident points.
pub fn bearing_deg(p: &GeoPoint, q: &GeoPoint) -> f64 {
    let (lat_p, lat_q) = (p.lat_deg.to_radians(), q.lat_deg.to_radians());
    let dlon = (q.lon_deg - p.lon_deg).to_radians();
    let y = dlon.sin() * lat_q.cos();
    let x = lat_p.cos() * lat_q.sin() - lat_p.sin() * lat_q.cos() * dlon.cos();
    if x == 0.0 && y == 0.0 {
        return 0.0;
    }
    let b = y.atan2(x).to_degrees();
    let b = if b < 0.0 { b + 360.0 } else { b };
    if b >= 360.0 {
        0.0
    } else {
        b
    }
}

/// Equirectangular projection about an origin, used for gridding.
///
/// `x` grows eastward and `y` northward, both in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin: GeoPoint,
    pub meters_per_deg_lat: f64,
    pub meters_per_deg_lon: f64,
}

impl LocalFrame {
    pub fn new(origin: GeoPoint) -> Self {
        Self {
            origin,
            meters_per_deg_lat: METERS_PER_DEG,
            meters_per_deg_lon: METERS_PER_DEG * origin.lat_deg.to_radians().cos(),
        }
    }

    /// Frame centered on the arithmetic mean of `points`.
    pub fn centroid<'a, I>(points: I) -> Result<Self, GeoError>
    where
        I: IntoIterator<Item = &'a GeoPoint>,
    {
        let (mut lat, mut lon, mut h, mut n) = (0.0, 0.0, 0.0, 0usize);
        for p in points {
            lat += p.lat_deg;
            lon += p.lon_deg;
            h += p.height_m;
            n += 1;
        }
        if n == 0 {
            return Err(GeoError::EmptyFrame);
        }
        let n = n as f64;
        Ok(Self::new(GeoPoint {
            lat_deg: lat / n,
            lon_deg: lon / n,
            height_m: h / n,
        }))
    }

    pub fn to_local_xy(&self, p: &GeoPoint) -> (f64, f64) {
        (
            (p.lon_deg - self.origin.lon_deg) * self.meters_per_deg_lon,
            (p.lat_deg - self.origin.lat_deg) * self.meters_per_deg_lat,
        )
    }

    pub fn from_local_xy(&self, x: f64, y: f64, height_m: f64) -> GeoPoint {
        GeoPoint {
            lat_deg: self.origin.lat_deg + y / self.meters_per_deg_lat,
            lon_deg: self.origin.lon_deg + x / self.meters_per_deg_lon,
            height_m,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64, h: f64) -> GeoPoint {
        GeoPoint::new(lat, lon, h).unwrap()
    }

    #[test]
    fn horizontal_identity_and_equator_arc() {
        let p = pt(35.72, -78.69, 30.0);
        assert_eq!(horizontal_distance(&p, &p), 0.0);
        let d = horizontal_distance(&pt(0.0, 0.0, 0.0), &pt(0.0, 1.0, 0.0));
        // A * pi / 180
        assert!((d - 111_194.926_644_558_73).abs() < 1e-6, "{d}");
        assert!((d - 111_194.93).abs() < 0.01);
        let d = horizontal_distance(&pt(0.0, 0.0, 0.0), &pt(0.0, 180.0, 0.0));
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_M).abs() < 1e-6);
    }

    #[test]
    fn agrees_with_law_of_cosines_at_range() {
        let acos_form = |p: &GeoPoint, q: &GeoPoint| {
            let (a, b) = (p.lat_deg.to_radians(), q.lat_deg.to_radians());
            let c = b.sin() * a.sin() + b.cos() * a.cos() * (p.lon_deg - q.lon_deg).to_radians().cos();
            EARTH_RADIUS_M * c.clamp(-1.0, 1.0).acos()
        };
        let pairs = [
            (pt(35.7, -78.7, 0.0), pt(35.71, -78.69, 0.0)),
            (pt(0.0, 0.0, 0.0), pt(45.0, 90.0, 0.0)),
            (pt(-33.0, 151.0, 0.0), pt(51.5, -0.1, 0.0)),
        ];
        for (p, q) in pairs {
            let (h, c) = (horizontal_distance(&p, &q), acos_form(&p, &q));
            assert!(((h - c) / c).abs() < 1e-7, "{h} vs {c}");
        }
    }

    #[test]
    fn vertical_examples() {
        let a = pt(35.0, -78.0, 110.0);
        assert_eq!(vertical_distance(&a, &a.at_height(110.0)), 0.0);
        assert_eq!(vertical_distance(&a, &a.at_height(90.0)), 20.0);
        assert_eq!(vertical_distance(&a.at_height(30.0), &a), 80.0);
    }

    #[test]
    fn pythagorean_3d() {
        // 3 m east on the equator, 4 m up.
        let p = pt(0.0, 0.0, 10.0);
        let q = pt(0.0, 3.0 / METERS_PER_DEG, 14.0);
        assert!((horizontal_distance(&p, &q) - 3.0).abs() < 1e-6);
        assert!((distance_3d(&p, &q) - 5.0).abs() < 1e-6);
        assert_eq!(distance_3d(&p, &p), 0.0);
    }

    #[test]
    fn invalid_points_rejected() {
        assert!(matches!(GeoPoint::new(91.0, 0.0, 0.0), Err(GeoError::Latitude(_))));
        assert!(matches!(GeoPoint::new(0.0, -181.0, 0.0), Err(GeoError::Longitude(_))));
        assert!(matches!(GeoPoint::new(0.0, 0.0, f64::NAN), Err(GeoError::Height(_))));
        assert!(matches!(GeoPoint::new(0.0, 0.0, -1.0), Err(GeoError::Height(_))));
    }

    #[test]
    fn local_frame_examples() {
        let origin = pt(0.0, 0.0, 0.0);
        let frame = LocalFrame::new(origin);
        assert_eq!(frame.to_local_xy(&origin), (0.0, 0.0));
        let (x, y) = frame.to_local_xy(&pt(0.0, 1.0, 0.0));
        assert!((x - 111_194.93).abs() < 0.01);
        assert_eq!(y, 0.0);
    }

    #[test]
    fn local_frame_matches_great_circle_at_100m() {
        let frame = LocalFrame::new(pt(35.7275, -78.6960, 0.0));
        for bearing in [0.0_f64, 30.0, 45.0, 90.0, 135.0, 200.0, 310.0] {
            let b = bearing.to_radians();
            let q = frame.from_local_xy(100.0 * b.sin(), 100.0 * b.cos(), 0.0);
            let (x, y) = frame.to_local_xy(&q);
            let proj = x.hypot(y);
            let gc = horizontal_distance(&frame.origin, &q);
            assert!(((proj - gc) / gc).abs() < 1e-3, "bearing {bearing}: {proj} vs {gc}");
        }
    }

    #[test]
    fn centroid_of_empty_set_fails() {
        assert_eq!(LocalFrame::centroid(&[]), Err(GeoError::EmptyFrame));
    }

    #[test]
    fn bearing_cardinal_directions() {
        let o = pt(10.0, 10.0, 0.0);
        assert!((bearing_deg(&o, &pt(10.001, 10.0, 0.0)) - 0.0).abs() < 1e-6);
        assert!((bearing_deg(&o, &pt(10.0, 10.001, 0.0)) - 90.0).abs() < 1e-3);
        assert!((bearing_deg(&o, &pt(9.999, 10.0, 0.0)) - 180.0).abs() < 1e-6);
        assert_eq!(bearing_deg(&o, &o), 0.0);
    }

    fn arb_point() -> impl Strategy<Value = GeoPoint> {
        (35.70..35.75f64, -78.72..-78.67f64, 0.0..150.0f64).prop_map(|(a, b, h)| GeoPoint {
            lat_deg: a,
            lon_deg: b,
            height_m: h,
        })
    }

    proptest! {
        #[test]
        fn distance_symmetry_and_bounds(p in arb_point(), q in arb_point()) {
            prop_assert_eq!(horizontal_distance(&p, &q), horizontal_distance(&q, &p));
            prop_assert!(horizontal_distance(&p, &q) >= 0.0);
            let d3 = distance_3d(&p, &q);
            prop_assert!(d3 >= vertical_distance(&p, &q));
            prop_assert!(d3 >= horizontal_distance(&p, &q));
            let composed = horizontal_distance(&p, &q).hypot(vertical_distance(&p, &q));
            prop_assert_eq!(d3, composed);
        }

        #[test]
        fn triangle_inequality(p in arb_point(), q in arb_point(), r in arb_point()) {
            let pq = horizontal_distance(&p, &q);
            let qr = horizontal_distance(&q, &r);
            let pr = horizontal_distance(&p, &r);
            prop_assert!(pr <= (pq + qr) * (1.0 + 1e-6) + 1e-6);
        }

        #[test]
        fn projection_round_trip(p in arb_point()) {
            let frame = LocalFrame::new(GeoPoint { lat_deg: 35.7275, lon_deg: -78.695, height_m: 0.0 });
            let (x, y) = frame.to_local_xy(&p);
            let back = frame.from_local_xy(x, y, p.height_m);
            let (x2, y2) = frame.to_local_xy(&back);
            prop_assert!((x - x2).abs() < 1e-6 && (y - y2).abs() < 1e-6);
        }
    }
}
