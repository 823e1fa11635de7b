//! Independent reference implementations shared by the integration tests.
//! Everything here is written as plain loops over the definitions, without
//! calling the crate's own kernels.
#![allow(dead_code)]

use point_transformer::attention::{Normalize, Operator, PointTransformerLayer, PosMode};
use point_transformer::geometry::Point3;
use point_transformer::network::TransitionDown;
use point_transformer::nn::{Linear, Mlp, PointNorm, ValueGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn points(n: usize, r: &mut ChaCha8Rng) -> Vec<Point3> {
    (0..n).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect()
}

pub fn matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
}

pub fn grid(m: &[Vec<f64>]) -> ValueGrid {
    ValueGrid::from_rows(m).unwrap()
}

pub fn rows_of(g: &ValueGrid) -> Vec<Vec<f64>> {
    (0..g.rows()).map(|i| g.row(i).to_vec()).collect()
}

pub fn d2(a: &Point3, b: &Point3) -> f64 {
    (0..3).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum()
}

/// k nearest `points` of `q` by full sort on (distance, index).
pub fn brute_knn(points: &[Point3], q: &Point3, k: usize) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(j, p)| (d2(q, p), j)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all
}

/// Greedy max-min selection, recomputing every distance to the whole
/// selected set at each step: O(N·M²).
pub fn greedy_fps(points: &[Point3], m: usize, start: usize) -> Vec<usize> {
    let mut sel = vec![start];
    while sel.len() < m {
        let mut best: Option<(f64, usize)> = None;
        for (j, p) in points.iter().enumerate() {
            if sel.contains(&j) {
                continue;
            }
            let d = sel.iter().map(|&s| d2(&points[s], p)).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, j));
            }
        }
        sel.push(best.unwrap().1);
    }
    sel
}

/// `x·W + b` with `W` stored `d_in × d_out`.
pub fn lin(layer: &Linear, x: &[f64]) -> Vec<f64> {
    let w = layer.weight.value.data();
    let b = layer.bias.value.data();
    let d_out = b.len();
    (0..d_out).map(|o| b[o] + x.iter().enumerate().map(|(i, xi)| xi * w[i * d_out + o]).sum::<f64>()).collect()
}

pub fn mlp(m: &Mlp, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = lin(&m.first, x).into_iter().map(|v| v.max(0.0)).collect();
    lin(&m.second, &h)
}

/// Batch-statistics normalisation over rows, biased variance.
pub fn norm_train(norm: &PointNorm, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len() as f64;
    let c = x[0].len();
    let g = norm.gain.value.data();
    let b = norm.bias.value.data();
    let mut out = x.to_vec();
    for ch in 0..c {
        let mean = x.iter().map(|r| r[ch]).sum::<f64>() / n;
        let var = x.iter().map(|r| (r[ch] - mean).powi(2)).sum::<f64>() / n;
        for (o, r) in out.iter_mut().zip(x) {
            o[ch] = g[ch] * (r[ch] - mean) / (var + 1e-5).sqrt() + b[ch];
        }
    }
    out
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).flat_map(|(x, y)| {
        assert_eq!(x.len(), y.len());
        x.iter().zip(y).map(|(p, q)| (p - q).abs())
    })
    .fold(0.0, f64::max)
}

/// Direct evaluation of the layer definition, one output point at a time.
pub fn attention_reference(layer: &PointTransformerLayer, x: &[Vec<f64>], p: &[Point3], nbrs: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let v = layer.config.variant;
    let d = layer.config.d;
    let sub = |a: &Point3, b: &Point3| vec![a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let enc = |m: &point_transformer::nn::Mlp, i: usize, j: usize| -> Vec<f64> {
        if v.pos_mode == PosMode::Absolute {
            let (a, b) = (mlp(m, &p[i]), mlp(m, &p[j]));
            a.iter().zip(&b).map(|(s, t)| s + t).collect()
        } else {
            mlp(m, &sub(&p[i], &p[j]))
        }
    };
    let mut out = Vec::with_capacity(x.len());
    for (i, row) in nbrs.iter().enumerate() {
        let y = match v.operator {
            Operator::Mlp => mlp(layer.mlp.as_ref().unwrap(), &x[i]),
            Operator::MlpPool => {
                let m = layer.mlp.as_ref().unwrap();
                let hs: Vec<Vec<f64>> = row.iter().map(|&j| mlp(m, &x[j])).collect();
                (0..d).map(|c| hs.iter().map(|h| h[c]).fold(f64::NEG_INFINITY, f64::max)).collect()
            }
            Operator::Vector => {
                let (phi, psi, alpha, gamma) = (
                    layer.phi.as_ref().unwrap(),
                    layer.psi.as_ref().unwrap(),
                    layer.alpha.as_ref().unwrap(),
                    layer.gamma.as_ref().unwrap(),
                );
                let q = lin(phi, &x[i]);
                let mut logits = Vec::new();
                let mut vals = Vec::new();
                for &j in row {
                    let kj = lin(psi, &x[j]);
                    let mut rel: Vec<f64> = q.iter().zip(&kj).map(|(a, b)| a - b).collect();
                    let mut val = lin(alpha, &x[j]);
                    if let Some(theta) = layer.theta.as_ref() {
                        let delta = enc(theta, i, j);
                        if v.pos_mode.in_attention() {
                            rel.iter_mut().zip(&delta).for_each(|(r, e)| *r += e);
                        }
                        if v.pos_mode.in_features() {
                            val.iter_mut().zip(&delta).for_each(|(r, e)| *r += e);
                        }
                    }
                    logits.push(mlp(gamma, &rel));
                    vals.push(val);
                }
                let mut y = vec![0.0; d];
                for c in 0..d {
                    let col: Vec<f64> = logits.iter().map(|l| l[c]).collect();
                    let w = if v.normalize == Normalize::Softmax { softmax(&col) } else { col };
                    y[c] = w.iter().zip(&vals).map(|(wj, vj)| wj * vj[c]).sum();
                }
                y
            }
            Operator::Scalar => {
                let (phi, psi, alpha) =
                    (layer.phi.as_ref().unwrap(), layer.psi.as_ref().unwrap(), layer.alpha.as_ref().unwrap());
                let q = lin(phi, &x[i]);
                let scale = if v.scaled_dot { 1.0 / (d as f64).sqrt() } else { 1.0 };
                let mut logits = Vec::new();
                let mut vals = Vec::new();
                for &j in row {
                    let kj = lin(psi, &x[j]);
                    let mut l = scale * q.iter().zip(&kj).map(|(a, b)| a * b).sum::<f64>();
                    if let Some(ts) = layer.theta_scalar.as_ref() {
                        l += enc(ts, i, j)[0];
                    }
                    let mut val = lin(alpha, &x[j]);
                    if let Some(theta) = layer.theta.as_ref() {
                        val.iter_mut().zip(&enc(theta, i, j)).for_each(|(r, e)| *r += e);
                    }
                    logits.push(l);
                    vals.push(val);
                }
                let w = if v.normalize == Normalize::Softmax { softmax(&logits) } else { logits };
                (0..d).map(|c| w.iter().zip(&vals).map(|(wj, vj)| wj * vj[c]).sum()).collect()
            }
        };
        out.push(y);
    }
    out
}

/// Transition down by definition: linear, batch norm, ReLU, greedy
/// sampling, then a channel max over each sample's nearest input points.
pub fn down_reference(td: &TransitionDown, x: &[Vec<f64>], p: &[Point3], start: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let z: Vec<Vec<f64>> = x.iter().map(|r| lin(&td.linear, r)).collect();
    let h: Vec<Vec<f64>> = norm_train(&td.norm, &z).into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
    if td.rate == 1 {
        return (h, (0..p.len()).collect());
    }
    let m = p.len().div_ceil(td.rate);
    let sel = greedy_fps(p, m, start);
    let k = td.k.min(p.len());
    let out = sel
        .iter()
        .map(|&s| {
            let nn = brute_knn(p, &p[s], k);
            (0..h[0].len()).map(|c| nn.iter().map(|(_, j)| h[*j][c]).fold(f64::NEG_INFINITY, f64::max)).collect()
        })
        .collect();
    (out, sel)
}
