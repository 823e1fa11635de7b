use crate::error::{bail, Result};
use crate::geometry::{fps_sample, interpolation_weights, knn_search, InterpWeights, Point3};
use crate::nn::ops::{max_pool_neighbors, max_pool_neighbors_backward, relu, relu_backward};
use crate::nn::{take_cache, visit_child, Linear, Mode, Param, Parameterized, PointNorm, ValueGrid};
use crate::rng::Rng;

/// Neighbours interpolated from in transition-up.
pub const INTERP_NEIGHBORS: usize = 3;

/// Output of a transition-down step.
#[derive(Clone, Debug)]
pub struct Downsampled {
    pub features: ValueGrid,
    pub positions: Vec<Point3>,
    /// Indices of the kept points in the input set, in sampling order.
    pub selected: Vec<usize>,
}

#[derive(Debug)]
struct DownCache {
    normalized: ValueGrid,
    pool: Option<(Vec<usize>, usize, Vec<usize>)>,
}

/// `linear → norm → ReLU` on every input point, then (for rate > 1) farthest
/// point sampling and a channel-wise max over each sampled point's k nearest
/// input points.
#[derive(Debug)]
pub struct TransitionDown {
    pub rate: usize,
    pub k: usize,
    pub linear: Linear,
    pub norm: PointNorm,
    cache: Option<DownCache>,
}

impl TransitionDown {
    pub fn new(d_in: usize, d_out: usize, rate: usize, k: usize, rng: &mut Rng) -> Self {
        TransitionDown {
            rate,
            k,
            linear: Linear::new(d_in, d_out, rng),
            norm: PointNorm::new(d_out),
            cache: None,
        }
    }

    pub fn output_len(&self, n: usize) -> usize {
        n.div_ceil(self.rate)
    }

    pub fn forward(&mut self, x: &ValueGrid, p: &[Point3], fps_start: usize, mode: Mode) -> Result<Downsampled> {
        if x.rows() != p.len() {
            bail!(InvalidArgument, "transition down: {} feature rows for {} points", x.rows(), p.len());
        }
        let z = self.norm.forward(&self.linear.forward(x)?, mode)?;
        let h = relu(&z);
        if self.rate == 1 {
            self.cache = Some(DownCache { normalized: z, pool: None });
            return Ok(Downsampled { features: h, positions: p.to_vec(), selected: (0..p.len()).collect() });
        }
        let n = p.len();
        let m = self.output_len(n);
        let sample = fps_sample(p, m, fps_start)?;
        let positions: Vec<Point3> = sample.selected.iter().map(|&i| p[i]).collect();
        let k = self.k.min(n);
        let nbrs = knn_search(p, &positions, k)?;
        let c = h.cols();
        let gathered = h.gather_rows(nbrs.indices()).reshaped(&[m, k, c])?;
        let (features, argmax) = max_pool_neighbors(&gathered)?;
        self.cache = Some(DownCache {
            normalized: z,
            pool: Some((nbrs.indices().to_vec(), k, argmax)),
        });
        Ok(Downsampled { features, positions, selected: sample.selected })
    }

    pub fn backward(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        let DownCache { normalized, pool } = take_cache(&mut self.cache, "transition down")?;
        let dh = match pool {
            None => dy.clone(),
            Some((idx, k, argmax)) => {
                let c = dy.cols();
                let dg = max_pool_neighbors_backward(&argmax, dy, k);
                let mut dh = ValueGrid::zeros(&[normalized.rows(), c]);
                for (r, &j) in idx.iter().enumerate() {
                    for (a, b) in dh.row_mut(j).iter_mut().zip(&dg.data()[r * c..(r + 1) * c]) {
                        *a += b;
                    }
                }
                dh
            }
        };
        let dz = relu_backward(&normalized, &dh);
        self.linear.backward(&self.norm.backward(&dz)?)
    }
}

impl Parameterized for TransitionDown {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child(&mut self.linear, "linear", f);
        visit_child(&mut self.norm, "norm", f);
    }
}

#[derive(Debug)]
struct UpCache {
    normalized: ValueGrid,
    weights: InterpWeights,
    coarse_len: usize,
}

/// `linear → norm → ReLU` on the coarse features, inverse-distance
/// interpolation onto the fine points, plus a linear map of the skip
/// features from the matching encoder stage.
#[derive(Debug)]
pub struct TransitionUp {
    pub coarse: Linear,
    pub norm: PointNorm,
    pub skip: Linear,
    cache: Option<UpCache>,
}

impl TransitionUp {
    pub fn new(d_coarse: usize, d_fine: usize, rng: &mut Rng) -> Self {
        TransitionUp {
            coarse: Linear::new(d_coarse, d_fine, rng),
            norm: PointNorm::new(d_fine),
            skip: Linear::new(d_fine, d_fine, rng),
            cache: None,
        }
    }

    pub fn forward(
        &mut self,
        coarse: &ValueGrid,
        coarse_pos: &[Point3],
        skip: &ValueGrid,
        fine_pos: &[Point3],
        mode: Mode,
    ) -> Result<ValueGrid> {
        if coarse.rows() != coarse_pos.len() || skip.rows() != fine_pos.len() {
            bail!(
                InvalidState,
                "transition up: {} coarse rows for {} points, {} skip rows for {} points",
                coarse.rows(),
                coarse_pos.len(),
                skip.rows(),
                fine_pos.len()
            );
        }
        if skip.cols() != self.skip.d_in() {
            bail!(
                InvalidState,
                "transition up: skip width {} does not match paired stage width {}",
                skip.cols(),
                self.skip.d_in()
            );
        }
        let on_fine = knn_search(fine_pos, coarse_pos, 1)?;
        if let Some(i) = on_fine.sq_dists().iter().position(|&d| d != 0.0) {
            bail!(InvalidState, "transition up: coarse point {i} is not part of the paired fine set");
        }
        let z = self.norm.forward(&self.coarse.forward(coarse)?, mode)?;
        let h = relu(&z);
        let weights = interpolation_weights(coarse_pos, fine_pos, INTERP_NEIGHBORS.min(coarse_pos.len()))?;
        let mut y = weights.apply(&h);
        y.add_assign(&self.skip.forward(skip)?);
        self.cache = Some(UpCache { normalized: z, weights, coarse_len: coarse_pos.len() });
        Ok(y)
    }

    /// Returns `(coarse gradient, skip gradient)`.
    pub fn backward(&mut self, dy: &ValueGrid) -> Result<(ValueGrid, ValueGrid)> {
        let UpCache { normalized, weights, coarse_len } = take_cache(&mut self.cache, "transition up")?;
        let dskip = self.skip.backward(dy)?;
        let dh = weights.apply_transpose(dy, coarse_len);
        let dz = relu_backward(&normalized, &dh);
        let dcoarse = self.coarse.backward(&self.norm.backward(&dz)?)?;
        Ok((dcoarse, dskip))
    }
}

impl Parameterized for TransitionUp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child(&mut self.coarse, "coarse", f);
        visit_child(&mut self.norm, "norm", f);
        visit_child(&mut self.skip, "skip", f);
    }
}
