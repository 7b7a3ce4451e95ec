use serde::{Deserialize, Serialize};

use super::{KrigingError, Observation};
use crate::geo::{distance_3d, horizontal_distance, GeoPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSelector {
    /// Every training point within `R` meters.
    FixedRadius(f64),
    /// The `N` closest training points.
    NearestN(usize),
}

impl NeighborSelector {
    pub fn validate(&self) -> Result<(), KrigingError> {
        match *self {
            NeighborSelector::FixedRadius(r) if !(r > 0.0) || r.is_nan() => {
                Err(KrigingError::InvalidSelector(format!("radius {r}")))
            }
            NeighborSelector::NearestN(0) => Err(KrigingError::InvalidSelector("N = 0".into())),
            _ => Ok(()),
        }
    }
}

/// Distance used to rank neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Horizontal,
    ThreeD,
}

impl DistanceMetric {
    /// Horizontal distance when all training points share one height,
    /// 3D distance otherwise.
    pub fn for_training<'a, I>(locations: I) -> Self
    where
        I: IntoIterator<Item = &'a GeoPoint>,
    {
        let mut it = locations.into_iter();
        let Some(first) = it.next() else {
            return DistanceMetric::Horizontal;
        };
        if it.all(|p| (p.height_m - first.height_m).abs() < 1e-9) {
            DistanceMetric::Horizontal
        } else {
            DistanceMetric::ThreeD
        }
    }

    pub fn distance(&self, p: &GeoPoint, q: &GeoPoint) -> f64 {
        match self {
            DistanceMetric::Horizontal => horizontal_distance(p, q),
            DistanceMetric::ThreeD => distance_3d(p, q),
        }
    }
}

/// Indices of the selected neighbors, nearest first; equal distances keep
/// input order.
pub fn select_neighbor_indices(
    train: &[GeoPoint],
    target: &GeoPoint,
    selector: NeighborSelector,
    metric: DistanceMetric,
) -> Result<Vec<usize>, KrigingError> {
    selector.validate()?;
    if train.is_empty() {
        return Err(KrigingError::EmptyTraining);
    }
    let mut ranked: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, p)| (metric.distance(p, target), i))
        .collect();
    let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    match selector {
        NeighborSelector::FixedRadius(r) => {
            ranked.retain(|(d, _)| *d <= r);
            if ranked.is_empty() {
                return Err(KrigingError::EmptyNeighborhood { radius_m: r });
            }
            ranked.sort_unstable_by(by_key);
        }
        NeighborSelector::NearestN(n) => {
            if n < ranked.len() {
                ranked.select_nth_unstable_by(n - 1, by_key);
                ranked.truncate(n);
            }
            ranked.sort_unstable_by(by_key);
        }
    }
    Ok(ranked.into_iter().map(|(_, i)| i).collect())
}

/// Selects neighbors of `target`, choosing the metric from the training heights.
pub fn select_neighbors(
    train: &[Observation],
    target: &GeoPoint,
    selector: NeighborSelector,
) -> Result<Vec<Observation>, KrigingError> {
    let locations: Vec<GeoPoint> = train.iter().map(|o| o.location).collect();
    let metric = DistanceMetric::for_training(&locations);
    Ok(select_neighbor_indices(&locations, target, selector, metric)?
        .into_iter()
        .map(|i| train[i])
        .collect())
}
