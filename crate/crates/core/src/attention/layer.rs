use super::{AttentionConfig, Normalize, Operator};
use crate::error::{bail, Result};
use crate::geometry::{NeighborTable, Point3};
use crate::nn::ops::{
    max_pool_neighbors, max_pool_neighbors_backward, softmax_over_neighbors,
    softmax_over_neighbors_backward,
};
use crate::nn::{take_cache, visit_child, Linear, Mlp, Param, Parameterized, ValueGrid};
use crate::rng::Rng;

/// `θ(p_i − p_j)` for a single pair.
pub fn position_encoding(theta: &mut Mlp, p_i: Point3, p_j: Point3) -> Result<Vec<f64>> {
    let rel = ValueGrid::from_vec(&[1, 3], (0..3).map(|c| p_i[c] - p_j[c]).collect())?;
    Ok(theta.forward(&rel)?.into_data())
}

/// Encodings for every (point, neighbour slot) pair, `n·k × c`.
fn encode(
    theta: &mut Mlp,
    p: &[Point3],
    idx: &[usize],
    k: usize,
    absolute: bool,
) -> Result<ValueGrid> {
    let n = p.len();
    if absolute {
        let abs: Vec<f64> = p.iter().flatten().copied().collect();
        let e = theta.forward(&ValueGrid::from_vec(&[n, 3], abs)?)?;
        let c = e.cols();
        let mut d = ValueGrid::zeros(&[n * k, c]);
        for i in 0..n {
            for t in 0..k {
                let j = idx[i * k + t];
                let row = d.row_mut(i * k + t);
                for ch in 0..c {
                    row[ch] = e.row(i)[ch] + e.row(j)[ch];
                }
            }
        }
        Ok(d)
    } else {
        let mut rel = Vec::with_capacity(n * k * 3);
        for i in 0..n {
            for t in 0..k {
                let j = idx[i * k + t];
                rel.extend((0..3).map(|c| p[i][c] - p[j][c]));
            }
        }
        theta.forward(&ValueGrid::from_vec(&[n * k, 3], rel)?)
    }
}

fn encode_backward(
    theta: &mut Mlp,
    d_enc: &ValueGrid,
    idx: &[usize],
    n: usize,
    k: usize,
    absolute: bool,
) -> Result<()> {
    if absolute {
        let c = d_enc.cols();
        let mut de = ValueGrid::zeros(&[n, c]);
        for i in 0..n {
            for t in 0..k {
                let j = idx[i * k + t];
                let g = d_enc.row(i * k + t).to_vec();
                for (a, b) in de.row_mut(i).iter_mut().zip(&g) {
                    *a += b;
                }
                for (a, b) in de.row_mut(j).iter_mut().zip(&g) {
                    *a += b;
                }
            }
        }
        theta.backward(&de)?;
    } else {
        theta.backward(d_enc)?;
    }
    Ok(())
}

#[derive(Debug)]
enum Cache {
    Vector {
        idx: Vec<usize>,
        k: usize,
        weights: ValueGrid,
        values: ValueGrid,
    },
    Scalar {
        idx: Vec<usize>,
        k: usize,
        weights: ValueGrid,
        values: ValueGrid,
        query: ValueGrid,
        key: ValueGrid,
    },
    Mlp,
    MlpPool {
        idx: Vec<usize>,
        k: usize,
        n: usize,
        argmax: Vec<usize>,
    },
}

/// One self-attention layer (or baseline operator) over kNN neighbourhoods.
///
/// Parameters exist only for the sub-networks the configured variant uses.
#[derive(Debug)]
pub struct PointTransformerLayer {
    pub config: AttentionConfig,
    pub phi: Option<Linear>,
    pub psi: Option<Linear>,
    pub alpha: Option<Linear>,
    /// Attention mapping, vector operator only.
    pub gamma: Option<Mlp>,
    /// `3 → d → d` position encoding.
    pub theta: Option<Mlp>,
    /// `3 → d → 1` position encoding for scalar attention logits.
    pub theta_scalar: Option<Mlp>,
    /// Pointwise MLP of the attention-free baselines.
    pub mlp: Option<Mlp>,
    cache: Option<Cache>,
}

impl PointTransformerLayer {
    pub fn new(config: AttentionConfig, rng: &mut Rng) -> Self {
        let d = config.d;
        let v = config.variant;
        let mut layer = PointTransformerLayer {
            config,
            phi: None,
            psi: None,
            alpha: None,
            gamma: None,
            theta: None,
            theta_scalar: None,
            mlp: None,
            cache: None,
        };
        match v.operator {
            Operator::Vector | Operator::Scalar => {
                layer.phi = Some(Linear::new(d, d, rng));
                layer.psi = Some(Linear::new(d, d, rng));
                layer.alpha = Some(Linear::new(d, d, rng));
                if v.operator == Operator::Vector {
                    layer.gamma = Some(Mlp::new(d, d, d, rng));
                    if v.pos_mode.in_attention() || v.pos_mode.in_features() {
                        layer.theta = Some(Mlp::new(3, d, d, rng));
                    }
                } else {
                    if v.pos_mode.in_attention() {
                        layer.theta_scalar = Some(Mlp::new(3, d, 1, rng));
                    }
                    if v.pos_mode.in_features() {
                        layer.theta = Some(Mlp::new(3, d, d, rng));
                    }
                }
            }
            Operator::Mlp | Operator::MlpPool => {
                layer.mlp = Some(Mlp::new(d, d, d, rng));
            }
        }
        layer
    }

    /// Neighbourhood size this layer expects for a set of `n` points.
    pub fn effective_k(&self, n: usize) -> usize {
        self.config.k.min(n)
    }

    /// Attention weights of the last forward pass, `n × k × d` (vector) or
    /// `n × k × 1` (scalar). Cleared by `backward`.
    pub fn last_weights(&self) -> Option<&ValueGrid> {
        match &self.cache {
            Some(Cache::Vector { weights, .. }) | Some(Cache::Scalar { weights, .. }) => Some(weights),
            _ => None,
        }
    }

    pub fn forward(&mut self, x: &ValueGrid, p: &[Point3], nbrs: &NeighborTable) -> Result<ValueGrid> {
        let n = x.rows();
        let d = self.config.d;
        if x.cols() != d || p.len() != n || nbrs.len() != n {
            bail!(
                InvalidArgument,
                "attention: features {:?}, {} positions, {} neighbour rows (d={d})",
                x.shape(),
                p.len(),
                nbrs.len()
            );
        }
        let k = nbrs.k();
        if k != self.effective_k(n) {
            bail!(
                InvalidArgument,
                "attention configured for k={} got neighbour table with k={k} for {n} points",
                self.config.k
            );
        }
        let idx = nbrs.indices().to_vec();
        match self.config.variant.operator {
            Operator::Vector => self.vector_forward(x, p, idx, k),
            Operator::Scalar => self.scalar_forward(x, p, idx, k),
            Operator::Mlp => {
                let y = self.mlp.as_mut().expect("mlp").forward(x)?;
                self.cache = Some(Cache::Mlp);
                Ok(y)
            }
            Operator::MlpPool => {
                let h = self.mlp.as_mut().expect("mlp").forward(x)?;
                let gathered = h.gather_rows(&idx).reshaped(&[n, k, d])?;
                let (y, argmax) = max_pool_neighbors(&gathered)?;
                self.cache = Some(Cache::MlpPool { idx, k, n, argmax });
                Ok(y)
            }
        }
    }

    fn vector_forward(&mut self, x: &ValueGrid, p: &[Point3], idx: Vec<usize>, k: usize) -> Result<ValueGrid> {
        let n = x.rows();
        let d = self.config.d;
        let v = self.config.variant;
        let q = self.phi.as_mut().expect("phi").forward(x)?;
        let key = self.psi.as_mut().expect("psi").forward(x)?;
        let val = self.alpha.as_mut().expect("alpha").forward(x)?;
        let enc = match self.theta.as_mut() {
            Some(theta) => Some(encode(theta, p, &idx, k, v.pos_mode.is_absolute())?),
            None => None,
        };

        let mut rel = ValueGrid::zeros(&[n * k, d]);
        let mut values = ValueGrid::zeros(&[n * k, d]);
        for i in 0..n {
            for t in 0..k {
                let j = idx[i * k + t];
                let r = i * k + t;
                let (qi, kj, vj) = (q.row(i), key.row(j), val.row(j));
                let rrow = rel.row_mut(r);
                for c in 0..d {
                    rrow[c] = qi[c] - kj[c];
                }
                values.row_mut(r).copy_from_slice(vj);
            }
        }
        if let Some(enc) = &enc {
            if v.pos_mode.in_attention() {
                rel.add_assign(enc);
            }
            if v.pos_mode.in_features() {
                values.add_assign(enc);
            }
        }
        let logits = self.gamma.as_mut().expect("gamma").forward(&rel)?.reshaped(&[n, k, d])?;
        let weights = match v.normalize {
            Normalize::Softmax => softmax_over_neighbors(&logits)?,
            Normalize::Identity => logits,
        };
        let mut y = ValueGrid::zeros(&[n, d]);
        for i in 0..n {
            let yrow = y.row_mut(i);
            for t in 0..k {
                let r = i * k + t;
                let w = &weights.data()[r * d..(r + 1) * d];
                for ((o, a), b) in yrow.iter_mut().zip(w).zip(values.row(r)) {
                    *o += a * b;
                }
            }
        }
        self.cache = Some(Cache::Vector { idx, k, weights, values });
        Ok(y)
    }

    fn scalar_forward(&mut self, x: &ValueGrid, p: &[Point3], idx: Vec<usize>, k: usize) -> Result<ValueGrid> {
        let n = x.rows();
        let d = self.config.d;
        let v = self.config.variant;
        let query = self.phi.as_mut().expect("phi").forward(x)?;
        let key = self.psi.as_mut().expect("psi").forward(x)?;
        let val = self.alpha.as_mut().expect("alpha").forward(x)?;
        let scale = self.dot_scale();

        let mut logits = ValueGrid::zeros(&[n, k, 1]);
        let mut values = ValueGrid::zeros(&[n * k, d]);
        for i in 0..n {
            for t in 0..k {
                let j = idx[i * k + t];
                let r = i * k + t;
                let s: f64 = query.row(i).iter().zip(key.row(j)).map(|(a, b)| a * b).sum();
                logits.data_mut()[r] = scale * s;
                values.row_mut(r).copy_from_slice(val.row(j));
            }
        }
        if let Some(theta_s) = self.theta_scalar.as_mut() {
            let enc = encode(theta_s, p, &idx, k, v.pos_mode.is_absolute())?;
            for (l, e) in logits.data_mut().iter_mut().zip(enc.data()) {
                *l += e;
            }
        }
        if let Some(theta) = self.theta.as_mut() {
            let enc = encode(theta, p, &idx, k, v.pos_mode.is_absolute())?;
            values.add_assign(&enc);
        }
        let weights = match v.normalize {
            Normalize::Softmax => softmax_over_neighbors(&logits)?,
            Normalize::Identity => logits,
        };
        let mut y = ValueGrid::zeros(&[n, d]);
        for i in 0..n {
            let yrow = y.row_mut(i);
            for t in 0..k {
                let r = i * k + t;
                let w = weights.data()[r];
                for (o, b) in yrow.iter_mut().zip(values.row(r)) {
                    *o += w * b;
                }
            }
        }
        self.cache = Some(Cache::Scalar { idx, k, weights, values, query, key });
        Ok(y)
    }

    fn dot_scale(&self) -> f64 {
        if self.config.variant.scaled_dot {
            1.0 / (self.config.d as f64).sqrt()
        } else {
            1.0
        }
    }

    /// Accumulates parameter gradients and returns the feature gradient.
    pub fn backward(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        let cache = take_cache(&mut self.cache, "attention")?;
        let d = self.config.d;
        if dy.cols() != d {
            bail!(InvalidArgument, "attention backward: gradient shape {:?}", dy.shape());
        }
        let n = dy.rows();
        match cache {
            Cache::Mlp => self.mlp.as_mut().expect("mlp").backward(dy),
            Cache::MlpPool { idx, k, n, argmax } => {
                let dg = max_pool_neighbors_backward(&argmax, dy, k);
                let mut dh = ValueGrid::zeros(&[n, d]);
                for (r, &j) in idx.iter().enumerate() {
                    let g = &dg.data()[r * d..(r + 1) * d];
                    for (a, b) in dh.row_mut(j).iter_mut().zip(g) {
                        *a += b;
                    }
                }
                self.mlp.as_mut().expect("mlp").backward(&dh)
            }
            Cache::Vector { idx, k, weights, values } => {
                let v = self.config.variant;
                let mut dw = ValueGrid::zeros(&[n, k, d]);
                let mut dvals = ValueGrid::zeros(&[n * k, d]);
                for i in 0..n {
                    let g = dy.row(i);
                    for t in 0..k {
                        let r = i * k + t;
                        let w = &weights.data()[r * d..(r + 1) * d];
                        let vals = values.row(r);
                        let dwr = &mut dw.data_mut()[r * d..(r + 1) * d];
                        for c in 0..d {
                            dwr[c] = g[c] * vals[c];
                        }
                        let dvr = dvals.row_mut(r);
                        for c in 0..d {
                            dvr[c] = g[c] * w[c];
                        }
                    }
                }
                let dlogits = match v.normalize {
                    Normalize::Softmax => softmax_over_neighbors_backward(&weights, &dw)?,
                    Normalize::Identity => dw,
                };
                let dlogits = dlogits.reshaped(&[n * k, d])?;
                let drel = self.gamma.as_mut().expect("gamma").backward(&dlogits)?;

                let mut dq = ValueGrid::zeros(&[n, d]);
                let mut dk = ValueGrid::zeros(&[n, d]);
                let mut dv = ValueGrid::zeros(&[n, d]);
                for i in 0..n {
                    for t in 0..k {
                        let j = idx[i * k + t];
                        let r = i * k + t;
                        let dr = drel.row(r);
                        for (a, b) in dq.row_mut(i).iter_mut().zip(dr) {
                            *a += b;
                        }
                        for (a, b) in dk.row_mut(j).iter_mut().zip(dr) {
                            *a -= b;
                        }
                        for (a, b) in dv.row_mut(j).iter_mut().zip(dvals.row(r)) {
                            *a += b;
                        }
                    }
                }
                if let Some(theta) = self.theta.as_mut() {
                    let mut denc = ValueGrid::zeros(&[n * k, d]);
                    if v.pos_mode.in_attention() {
                        denc.add_assign(&drel);
                    }
                    if v.pos_mode.in_features() {
                        denc.add_assign(&dvals);
                    }
                    encode_backward(theta, &denc, &idx, n, k, v.pos_mode.is_absolute())?;
                }
                self.input_grad(&dq, &dk, &dv)
            }
            Cache::Scalar { idx, k, weights, values, query, key } => {
                let v = self.config.variant;
                let scale = self.dot_scale();
                let mut dw = ValueGrid::zeros(&[n, k, 1]);
                let mut dvals = ValueGrid::zeros(&[n * k, d]);
                for i in 0..n {
                    let g = dy.row(i);
                    for t in 0..k {
                        let r = i * k + t;
                        dw.data_mut()[r] = g.iter().zip(values.row(r)).map(|(a, b)| a * b).sum();
                        let w = weights.data()[r];
                        for (a, b) in dvals.row_mut(r).iter_mut().zip(g) {
                            *a = w * b;
                        }
                    }
                }
                let dlogits = match v.normalize {
                    Normalize::Softmax => softmax_over_neighbors_backward(&weights, &dw)?,
                    Normalize::Identity => dw,
                };
                let mut dq = ValueGrid::zeros(&[n, d]);
                let mut dk = ValueGrid::zeros(&[n, d]);
                let mut dv = ValueGrid::zeros(&[n, d]);
                for i in 0..n {
                    for t in 0..k {
                        let j = idx[i * k + t];
                        let r = i * k + t;
                        let ds = scale * dlogits.data()[r];
                        let kj = key.row(j).to_vec();
                        for (a, b) in dq.row_mut(i).iter_mut().zip(&kj) {
                            *a += ds * b;
                        }
                        let qi = query.row(i).to_vec();
                        for (a, b) in dk.row_mut(j).iter_mut().zip(&qi) {
                            *a += ds * b;
                        }
                        for (a, b) in dv.row_mut(j).iter_mut().zip(dvals.row(r)) {
                            *a += b;
                        }
                    }
                }
                if let Some(theta_s) = self.theta_scalar.as_mut() {
                    let denc = dlogits.reshaped(&[n * k, 1])?;
                    encode_backward(theta_s, &denc, &idx, n, k, v.pos_mode.is_absolute())?;
                }
                if let Some(theta) = self.theta.as_mut() {
                    encode_backward(theta, &dvals, &idx, n, k, v.pos_mode.is_absolute())?;
                }
                self.input_grad(&dq, &dk, &dv)
            }
        }
    }

    fn input_grad(&mut self, dq: &ValueGrid, dk: &ValueGrid, dv: &ValueGrid) -> Result<ValueGrid> {
        let mut dx = self.phi.as_mut().expect("phi").backward(dq)?;
        dx.add_assign(&self.psi.as_mut().expect("psi").backward(dk)?);
        dx.add_assign(&self.alpha.as_mut().expect("alpha").backward(dv)?);
        Ok(dx)
    }
}

impl Parameterized for PointTransformerLayer {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(l) = self.phi.as_mut() {
            visit_child(l, "phi", f);
        }
        if let Some(l) = self.psi.as_mut() {
            visit_child(l, "psi", f);
        }
        if let Some(l) = self.alpha.as_mut() {
            visit_child(l, "alpha", f);
        }
        if let Some(m) = self.gamma.as_mut() {
            visit_child(m, "gamma", f);
        }
        if let Some(m) = self.theta.as_mut() {
            visit_child(m, "theta", f);
        }
        if let Some(m) = self.theta_scalar.as_mut() {
            visit_child(m, "theta_scalar", f);
        }
        if let Some(m) = self.mlp.as_mut() {
            visit_child(m, "mlp", f);
        }
    }
}
