//! Exact geometric queries on point sets.
//!
//! Every distance here is a squared Euclidean distance, and every tie is
//! broken towards the smaller point index, so results are fully determined
//! by the input coordinates.

mod fps;
mod interp;
mod knn;

pub use fps::{fps_sample, SampleResult};
pub use interp::{interpolate, interpolation_weights, InterpWeights, INTERP_EPS};
pub use knn::{knn_search, knn_self, NeighborTable};

use crate::error::{bail, Result};
use crate::nn::ValueGrid;

pub type Point3 = [f64; 3];

/// Neighbour count used by every network configuration unless overridden.
pub const DEFAULT_K: usize = 16;

#[inline]
pub fn sq_dist(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub(crate) fn check_finite(points: &[Point3], what: &str) -> Result<()> {
    if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        bail!(InvalidInput, "{what}: non-finite coordinate at point {i}");
    }
    Ok(())
}

/// Coordinates with optional per-point features and integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    positions: Vec<Point3>,
    features: Option<ValueGrid>,
    labels: Option<Vec<usize>>,
}

impl PointSet {
    pub fn new(positions: Vec<Point3>) -> Result<Self> {
        if positions.is_empty() {
            bail!(InvalidArgument, "a point set needs at least one point");
        }
        check_finite(&positions, "point set")?;
        Ok(PointSet { positions, features: None, labels: None })
    }

    pub fn with_features(mut self, features: ValueGrid) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != self.positions.len() {
            bail!(
                InvalidArgument,
                "features of shape {:?} do not match {} points",
                features.shape(),
                self.positions.len()
            );
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.positions.len() {
            bail!(
                InvalidArgument,
                "{} labels for {} points",
                labels.len(),
                self.positions.len()
            );
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn features(&self) -> Option<&ValueGrid> {
        self.features.as_ref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.as_ref().map_or(0, |f| f.cols())
    }

    /// Same set shifted by `offset`.
    pub fn translated(&self, offset: Point3) -> PointSet {
        let mut out = self.clone();
        for p in &mut out.positions {
            for (c, o) in p.iter_mut().zip(offset) {
                *c += o;
            }
        }
        out
    }

    /// Reorder points so that new point `i` is old point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> PointSet {
        PointSet {
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            features: self.features.as_ref().map(|f| f.gather_rows(perm)),
            labels: self.labels.as_ref().map(|l| perm.iter().map(|&i| l[i]).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_set_validation() {
        assert!(PointSet::new(vec![]).is_err());
        assert!(matches!(
            PointSet::new(vec![[0.0, f64::NAN, 0.0]]),
            Err(crate::Error::InvalidInput(_))
        ));
        let ps = PointSet::new(vec![[0.0; 3], [1.0; 3]]).unwrap();
        assert!(ps.clone().with_labels(vec![0]).is_err());
        assert!(ps
            .clone()
            .with_features(ValueGrid::zeros(&[3, 2]))
            .is_err());
        let ps = ps.with_features(ValueGrid::zeros(&[2, 4])).unwrap();
        assert_eq!(ps.feature_dim(), 4);
    }

    #[test]
    fn permutation_moves_everything() {
        let ps = PointSet::new(vec![[0.0; 3], [1.0; 3], [2.0; 3]])
            .unwrap()
            .with_labels(vec![5, 6, 7])
            .unwrap();
        let p = ps.permuted(&[2, 0, 1]);
        assert_eq!(p.positions()[0], [2.0; 3]);
        assert_eq!(p.labels().unwrap(), &[7, 5, 6]);
    }
}
