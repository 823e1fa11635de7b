use super::{knn_search, Point3};
use crate::error::{bail, Result};
use crate::nn::ValueGrid;

/// Regulariser added to squared distances before inversion.
pub const INTERP_EPS: f64 = 1e-8;

/// Per-target neighbour indices into the source set and their normalised
/// inverse squared distance weights (`targets × p`, row-major).
#[derive(Clone, Debug)]
pub struct InterpWeights {
    pub p: usize,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl InterpWeights {
    pub fn targets(&self) -> usize {
        self.indices.len() / self.p
    }

    /// Weighted average of `source` rows for every target.
    pub fn apply(&self, source: &ValueGrid) -> ValueGrid {
        let c = source.cols();
        let mut out = ValueGrid::zeros(&[self.targets(), c]);
        for t in 0..self.targets() {
            let orow = out.row_mut(t);
            for s in 0..self.p {
                let w = self.weights[t * self.p + s];
                let srow = source.row(self.indices[t * self.p + s]);
                for (o, &v) in orow.iter_mut().zip(srow) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// Adjoint of [`apply`](Self::apply): scatter target gradients back onto
    /// `sources` rows.
    pub fn apply_transpose(&self, grad_out: &ValueGrid, sources: usize) -> ValueGrid {
        let c = grad_out.cols();
        let mut out = ValueGrid::zeros(&[sources, c]);
        for t in 0..self.targets() {
            let grow = grad_out.row(t);
            for s in 0..self.p {
                let w = self.weights[t * self.p + s];
                let orow = out.row_mut(self.indices[t * self.p + s]);
                for (o, &g) in orow.iter_mut().zip(grow) {
                    *o += w * g;
                }
            }
        }
        out
    }
}

pub fn interpolation_weights(
    source: &[Point3],
    targets: &[Point3],
    p: usize,
) -> Result<InterpWeights> {
    let table = knn_search(source, targets, p)?;
    let mut weights = Vec::with_capacity(table.indices().len());
    for t in 0..targets.len() {
        let inv: Vec<f64> = table
            .row_dists(t)
            .iter()
            .map(|d| 1.0 / (d + INTERP_EPS))
            .collect();
        let total: f64 = inv.iter().sum();
        weights.extend(inv.iter().map(|w| w / total));
    }
    Ok(InterpWeights { p, indices: table.indices().to_vec(), weights })
}

/// Inverse squared distance interpolation of `source_features` from the `p`
/// nearest source points onto each target.
pub fn interpolate(
    source: &[Point3],
    source_features: Option<&ValueGrid>,
    targets: &[Point3],
    p: usize,
) -> Result<ValueGrid> {
    let Some(feats) = source_features else {
        bail!(InvalidInput, "interpolation source has no features");
    };
    if feats.rows() != source.len() {
        bail!(
            InvalidInput,
            "{} feature rows for {} source points",
            feats.rows(),
            source.len()
        );
    }
    Ok(interpolation_weights(source, targets, p)?.apply(feats))
}
