//! Stateless pointwise, normalisation and pooling operators with their
//! backward passes. Neighbour-shaped grids are `n × k × c`.

use super::ValueGrid;
use crate::error::{bail, Result};

pub fn relu(x: &ValueGrid) -> ValueGrid {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient of [`relu`]; zero at and below the kink.
pub fn relu_backward(x: &ValueGrid, dy: &ValueGrid) -> ValueGrid {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

fn neighbor_dims(g: &ValueGrid, what: &str) -> Result<(usize, usize, usize)> {
    match *g.shape() {
        [n, k, c] => {
            if k == 0 {
                bail!(InvalidArgument, "{what}: empty neighbour axis");
            }
            Ok((n, k, c))
        }
        ref s => bail!(InvalidArgument, "{what}: expected n×k×c grid, got {s:?}"),
    }
}

/// Softmax over the neighbour axis, separately for every point and channel.
pub fn softmax_over_neighbors(logits: &ValueGrid) -> Result<ValueGrid> {
    let (n, k, c) = neighbor_dims(logits, "softmax")?;
    let mut out = logits.clone();
    let x = logits.data();
    let y = out.data_mut();
    for i in 0..n {
        let base = i * k * c;
        for ch in 0..c {
            let at = |t: usize| base + t * c + ch;
            let max = (0..k).map(|t| x[at(t)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for t in 0..k {
                let e = (x[at(t)] - max).exp();
                y[at(t)] = e;
                total += e;
            }
            for t in 0..k {
                y[at(t)] /= total;
            }
        }
    }
    Ok(out)
}

/// Backward of [`softmax_over_neighbors`] given its output `w`.
pub fn softmax_over_neighbors_backward(w: &ValueGrid, dw: &ValueGrid) -> Result<ValueGrid> {
    let (n, k, c) = neighbor_dims(w, "softmax backward")?;
    let mut out = ValueGrid::zeros(w.shape());
    let (wd, gd) = (w.data(), dw.data());
    let od = out.data_mut();
    for i in 0..n {
        let base = i * k * c;
        for ch in 0..c {
            let at = |t: usize| base + t * c + ch;
            let s: f64 = (0..k).map(|t| wd[at(t)] * gd[at(t)]).sum();
            for t in 0..k {
                od[at(t)] = wd[at(t)] * (gd[at(t)] - s);
            }
        }
    }
    Ok(out)
}

/// Channel-wise maximum over each point's neighbours. Returns the pooled
/// `n × c` grid and, per output element, the winning neighbour slot (first
/// slot on ties).
pub fn max_pool_neighbors(features: &ValueGrid) -> Result<(ValueGrid, Vec<usize>)> {
    let (n, k, c) = neighbor_dims(features, "max pool")?;
    let x = features.data();
    let mut out = ValueGrid::zeros(&[n, c]);
    let mut argmax = vec![0usize; n * c];
    for i in 0..n {
        let base = i * k * c;
        for ch in 0..c {
            let mut best = x[base + ch];
            let mut slot = 0;
            for t in 1..k {
                let v = x[base + t * c + ch];
                if v > best {
                    best = v;
                    slot = t;
                }
            }
            out.data_mut()[i * c + ch] = best;
            argmax[i * c + ch] = slot;
        }
    }
    Ok((out, argmax))
}

/// Routes each pooled gradient to its recorded argmax slot.
pub fn max_pool_neighbors_backward(argmax: &[usize], dy: &ValueGrid, k: usize) -> ValueGrid {
    let (n, c) = (dy.rows(), dy.cols());
    let mut dx = ValueGrid::zeros(&[n, k, c]);
    for i in 0..n {
        for ch in 0..c {
            let t = argmax[i * c + ch];
            dx.data_mut()[(i * k + t) * c + ch] += dy.data()[i * c + ch];
        }
    }
    dx
}

/// Mean over the point axis: `n × c → 1 × c`.
pub fn global_avg_pool(features: &ValueGrid) -> ValueGrid {
    let (n, c) = (features.rows(), features.cols());
    let mut out = ValueGrid::zeros(&[1, c]);
    for i in 0..n {
        for (o, v) in out.data_mut().iter_mut().zip(features.row(i)) {
            *o += v;
        }
    }
    out.data_mut().iter_mut().for_each(|v| *v /= n as f64);
    out
}

pub fn global_avg_pool_backward(dy: &ValueGrid, n: usize) -> ValueGrid {
    let c = dy.cols();
    let mut dx = ValueGrid::zeros(&[n, c]);
    for i in 0..n {
        for (d, g) in dx.row_mut(i).iter_mut().zip(dy.data()) {
            *d = g / n as f64;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_single_neighbor_is_one() {
        let l = ValueGrid::from_vec(&[2, 1, 3], vec![5.0, -2.0, 0.1, 100.0, 3.0, -50.0]).unwrap();
        let w = softmax_over_neighbors(&l).unwrap();
        assert!(w.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn softmax_equal_logits_uniform() {
        let l = ValueGrid::filled(&[1, 4, 2], 0.7);
        let w = softmax_over_neighbors(&l).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn softmax_rejects_empty_axis() {
        let l = ValueGrid::zeros(&[2, 0, 3]);
        assert!(matches!(softmax_over_neighbors(&l), Err(crate::Error::InvalidArgument(_))));
        assert!(max_pool_neighbors(&ValueGrid::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn max_pool_routes_to_argmax() {
        let f = ValueGrid::from_vec(&[1, 3, 1], vec![2.0, 7.0, 5.0]).unwrap();
        let (y, arg) = max_pool_neighbors(&f).unwrap();
        assert_eq!(y.data(), &[7.0]);
        assert_eq!(arg, vec![1]);
        let dx = max_pool_neighbors_backward(&arg, &ValueGrid::from_rows(&[[3.0]]).unwrap(), 3);
        assert_eq!(dx.data(), &[0.0, 3.0, 0.0]);
    }

    #[test]
    fn avg_pool_uniform_backward() {
        let f = ValueGrid::from_rows(&[[1.0, 2.0], [3.0, 6.0]]).unwrap();
        assert_eq!(global_avg_pool(&f).data(), &[2.0, 4.0]);
        let dx = global_avg_pool_backward(&ValueGrid::from_rows(&[[1.0, -2.0]]).unwrap(), 2);
        assert_eq!(dx.data(), &[0.5, -1.0, 0.5, -1.0]);
    }

    #[test]
    fn relu_kink() {
        let x = ValueGrid::from_rows(&[[-1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let dx = relu_backward(&x, &ValueGrid::filled(&[1, 3], 1.0));
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0]);
    }
}
