use super::{check_finite, sq_dist, Point3};
use crate::error::{bail, Result};

/// Output of farthest point sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleResult {
    /// Indices into the source set, in selection order.
    pub selected: Vec<usize>,
    /// Squared distance of every source point to the selected set.
    pub min_sq_dists: Vec<f64>,
}

/// Greedy max-min sampling of `m` points starting from `start`.
///
/// Each step picks the unselected point whose squared distance to the
/// selected set is largest, preferring the smaller index on ties.
pub fn fps_sample(points: &[Point3], m: usize, start: usize) -> Result<SampleResult> {
    let n = points.len();
    if m == 0 || m > n {
        bail!(InvalidArgument, "cannot sample {m} of {n} points");
    }
    if start >= n {
        bail!(InvalidArgument, "start index {start} out of range for {n} points");
    }
    check_finite(points, "fps points")?;

    let mut min_sq_dists = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut selected = Vec::with_capacity(m);
    let mut current = start;
    loop {
        selected.push(current);
        taken[current] = true;
        let c = points[current];
        for (d, p) in min_sq_dists.iter_mut().zip(points) {
            let nd = sq_dist(&c, p);
            if nd < *d {
                *d = nd;
            }
        }
        if selected.len() == m {
            break;
        }
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (j, &d) in min_sq_dists.iter().enumerate() {
            if !taken[j] && d > best_d {
                best = j;
                best_d = d;
            }
        }
        current = best;
    }
    Ok(SampleResult { selected, min_sq_dists })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_picks_far_end() {
        let pts: Vec<Point3> = [0.0, 1.0, 2.0, 3.0, 10.0].iter().map(|&x| [x, 0.0, 0.0]).collect();
        let r = fps_sample(&pts, 2, 0).unwrap();
        assert_eq!(r.selected, vec![0, 4]);
        assert_eq!(r.min_sq_dists[2], 4.0);
        assert_eq!(r.min_sq_dists[3], 9.0 - 0.0);
    }

    #[test]
    fn exhaustive_is_permutation_even_with_duplicates() {
        let pts = vec![[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let r = fps_sample(&pts, 4, 1).unwrap();
        let mut s = r.selected.clone();
        s.sort();
        assert_eq!(s, vec![0, 1, 2, 3]);
        assert_eq!(r.selected[..2], [1, 2]);
        assert!(r.min_sq_dists.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn errors() {
        let pts = vec![[0.0; 3]; 3];
        assert!(fps_sample(&pts, 4, 0).is_err());
        assert!(fps_sample(&pts, 0, 0).is_err());
        assert!(fps_sample(&pts, 1, 3).is_err());
    }
}
