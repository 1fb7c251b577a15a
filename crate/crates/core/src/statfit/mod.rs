//! Statistical description of an ensemble of channels: cluster indexing,
//! dispersion classes and every distribution and trend the generator needs.

pub mod cable_loss;
pub mod classes;
pub mod curves;
pub mod gev;
pub mod model;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tlsolver::PathList;

pub use cable_loss::{fit_cable_loss, matched_line_sweeps, CableLoss, CableLossFit, LossSweep};
pub use classes::{
    classify, detect_class_boundaries, fit_gaussian_counts, ClassBoundaries, CLASSES,
};
pub use curves::{
    fit_double_exponential, fit_linear, fit_power_law, CurveFit, DoubleExp, Linear, PowerLaw, Trend,
};
pub use gev::{fit_gev, Gev, GevFit};
pub use model::{
    fit_model, CellSummary, FitConfig, GevTrend, PathCountTrend, StatModelParams, TrendFit,
    MODEL_VERSION,
};

/// Distance bands of equal first-arrival delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterGeometry {
    /// Metres.
    pub offset: f64,
    /// Metres per cluster.
    pub width: f64,
    /// Highest cluster index.
    pub count: usize,
}

impl Default for ClusterGeometry {
    fn default() -> Self {
        ClusterGeometry {
            offset: 11.92,
            width: 4.77,
            count: 20,
        }
    }
}

/// Absorbs rounding when a distance sits exactly on a band edge.
const EDGE_SLACK: f64 = 1e-9;

impl ClusterGeometry {
    /// Supported distances `(min, max]` covering clusters `0..=count`.
    pub fn span(&self) -> (f64, f64) {
        (
            self.offset - self.width,
            self.offset + self.count as f64 * self.width,
        )
    }

    /// Distances `(lo, hi]` of cluster `k`.
    pub fn band(&self, k: usize) -> (f64, f64) {
        let hi = self.offset + k as f64 * self.width;
        (hi - self.width, hi)
    }

    /// `k = ceil((d - offset) / width)`.
    pub fn index(&self, d: f64) -> Result<usize> {
        let (min, max) = self.span();
        if !(d > min && d <= max) {
            return Err(Error::OutOfRange {
                distance: d,
                min,
                max,
            });
        }
        let k = ((d - self.offset) / self.width - EDGE_SLACK).ceil();
        Ok(k.clamp(0.0, self.count as f64) as usize)
    }
}

/// Cluster index with the default geometry.
pub fn cluster_index(d: f64) -> Result<usize> {
    ClusterGeometry::default().index(d)
}

/// One oracle channel as seen by the fitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRecord {
    pub distance: f64,
    pub cluster: usize,
    /// Assigned once class boundaries are known.
    pub class: Option<u8>,
    pub paths: PathList,
}

impl ChannelRecord {
    pub fn first_magnitude(&self) -> f64 {
        self.paths.first().map_or(0.0, |p| p.magnitude)
    }

    /// Gaps between consecutive path indices.
    pub fn intervals(&self) -> Vec<usize> {
        self.paths
            .paths
            .windows(2)
            .map(|w| w[1].index - w[0].index)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_distances() {
        assert_eq!(cluster_index(11.92).unwrap(), 0);
        assert_eq!(cluster_index(50.0).unwrap(), 8);
        assert_eq!(cluster_index(100.0).unwrap(), 19);
        assert_eq!(cluster_index(107.32).unwrap(), 20);
        assert!(matches!(cluster_index(7.0), Err(Error::OutOfRange { .. })));
        assert!(matches!(
            cluster_index(108.0),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn band_edges_belong_to_the_lower_cluster() {
        let g = ClusterGeometry::default();
        for k in 1..=20 {
            let (lo, hi) = g.band(k);
            assert_eq!(g.index(hi).unwrap(), k);
            assert_eq!(g.index(lo + 1e-6).unwrap(), k);
            assert_eq!(g.index(lo).unwrap(), k - 1);
        }
    }

    proptest! {
        #[test]
        fn monotone_with_unit_steps(d in 7.2f64..102.0) {
            let g = ClusterGeometry::default();
            let k = g.index(d).unwrap();
            let k2 = g.index(d + g.width).unwrap();
            prop_assert_eq!(k2, k + 1);
            prop_assert!(g.index(d + 0.3).unwrap() >= k);
        }
    }
}
