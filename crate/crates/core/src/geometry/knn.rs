use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{check_finite, sq_dist, Point3};
use crate::error::{bail, Result};

/// For each query, `k` neighbour indices and squared distances, ascending by
/// `(distance, index)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborTable {
    k: usize,
    indices: Vec<usize>,
    sq_dists: Vec<f64>,
}

impl NeighborTable {
    pub fn from_rows(k: usize, indices: Vec<usize>, sq_dists: Vec<f64>) -> Result<Self> {
        if k == 0 || indices.len() % k != 0 || indices.len() != sq_dists.len() {
            bail!(InvalidArgument, "neighbour table rows must hold exactly k={k} entries");
        }
        Ok(NeighborTable { k, indices, sq_dists })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of query rows.
    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn sq_dists(&self) -> &[f64] {
        &self.sq_dists
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn row_dists(&self, i: usize) -> &[f64] {
        &self.sq_dists[i * self.k..(i + 1) * self.k]
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    d: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d.total_cmp(&other.d).then(self.index.cmp(&other.index))
    }
}

/// Single pass over `points` keeping the `k` best candidates in a max-heap
/// keyed by `(distance, index)`. `skip` excludes one index from the scan.
fn select_row(
    points: &[Point3],
    q: &Point3,
    k: usize,
    skip: Option<usize>,
    heap: &mut BinaryHeap<Candidate>,
    out_idx: &mut [usize],
    out_d: &mut [f64],
) {
    heap.clear();
    let mut iter = points.iter().enumerate().filter(|&(j, _)| Some(j) != skip);
    for (j, p) in iter.by_ref() {
        heap.push(Candidate { d: sq_dist(q, p), index: j });
        if heap.len() == k {
            break;
        }
    }
    let mut worst = heap.peek().map_or(f64::INFINITY, |c| c.d);
    for (j, p) in iter {
        let d = sq_dist(q, p);
        // Indices arrive in increasing order, so an equal distance never
        // displaces the current worst entry.
        if d < worst {
            let mut top = heap.peek_mut().expect("heap holds k entries");
            *top = Candidate { d, index: j };
            drop(top);
            worst = heap.peek().map_or(f64::INFINITY, |c| c.d);
        }
    }
    // heap-sort the survivors into ascending order
    let mut sorted = std::mem::take(heap).into_sorted_vec();
    for (slot, c) in sorted.iter().enumerate() {
        out_idx[slot] = c.index;
        out_d[slot] = c.d;
    }
    sorted.clear();
    *heap = BinaryHeap::from(sorted);
}

/// k nearest `points` for every query, by bounded max-heap selection over a
/// single linear scan.
pub fn knn_search(points: &[Point3], queries: &[Point3], k: usize) -> Result<NeighborTable> {
    if k == 0 {
        bail!(InvalidArgument, "k must be positive");
    }
    if k > points.len() {
        bail!(InvalidArgument, "k={k} exceeds the {} available points", points.len());
    }
    check_finite(points, "knn points")?;
    check_finite(queries, "knn queries")?;

    let mut indices = vec![0; queries.len() * k];
    let mut sq_dists = vec![0.0; queries.len() * k];
    let mut heap = BinaryHeap::with_capacity(k);
    for (qi, q) in queries.iter().enumerate() {
        let span = qi * k..(qi + 1) * k;
        select_row(
            points,
            q,
            k,
            None,
            &mut heap,
            &mut indices[span.clone()],
            &mut sq_dists[span],
        );
    }
    Ok(NeighborTable { k, indices, sq_dists })
}

/// Neighbourhoods of a point set within itself. Row `i` starts with `i` at
/// distance 0, followed by the `k - 1` nearest other points, even when other
/// points share the coordinates of `i`.
pub fn knn_self(points: &[Point3], k: usize) -> Result<NeighborTable> {
    if k == 0 {
        bail!(InvalidArgument, "k must be positive");
    }
    if k > points.len() {
        bail!(InvalidArgument, "k={k} exceeds the {} available points", points.len());
    }
    check_finite(points, "knn points")?;

    let n = points.len();
    let mut indices = vec![0; n * k];
    let mut sq_dists = vec![0.0; n * k];
    let mut heap = BinaryHeap::with_capacity(k);
    for (i, q) in points.iter().enumerate() {
        indices[i * k] = i;
        if k > 1 {
            let span = i * k + 1..(i + 1) * k;
            select_row(
                points,
                q,
                k - 1,
                Some(i),
                &mut heap,
                &mut indices[span.clone()],
                &mut sq_dists[span],
            );
        }
    }
    Ok(NeighborTable { k, indices, sq_dists })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn line() -> Vec<Point3> {
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]
    }

    #[test]
    fn self_is_nearest() {
        let pts = line();
        let t = knn_search(&pts, &pts, 2).unwrap();
        assert_eq!(t.row(0), &[0, 1]);
        assert_eq!(t.row_dists(0), &[0.0, 1.0]);
        assert_eq!(t.row(2), &[2, 1]);
        assert_eq!(t.row_dists(2), &[0.0, 4.0]);
    }

    #[test]
    fn errors() {
        let pts = line();
        assert!(matches!(knn_search(&pts, &pts, 4), Err(crate::Error::InvalidArgument(_))));
        assert!(matches!(knn_search(&pts, &pts, 0), Err(crate::Error::InvalidArgument(_))));
        let bad = vec![[0.0, f64::INFINITY, 0.0]];
        assert!(matches!(knn_search(&pts, &bad, 1), Err(crate::Error::InvalidInput(_))));
    }

    #[test]
    fn ties_prefer_smaller_index() {
        // 1 and 3 both lie at distance 1 from the query; 2 is farther
        let pts = vec![[9.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        let t = knn_search(&pts, &[[0.0; 3]], 2).unwrap();
        assert_eq!(t.row(0), &[1, 3]);
        let t = knn_search(&pts, &[[0.0; 3]], 1).unwrap();
        assert_eq!(t.row(0), &[1]);
    }

    #[test]
    fn self_mode_with_duplicates() {
        let pts = vec![[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0]];
        let t = knn_self(&pts, 2).unwrap();
        assert_eq!(t.row(0), &[0, 1]);
        assert_eq!(t.row(1), &[1, 0]);
        assert_eq!(t.row(2), &[2, 0]);
        // plain search lets the smaller duplicate win position 0
        let plain = knn_search(&pts, &pts, 2).unwrap();
        assert_eq!(plain.row(1), &[0, 1]);
        let single = knn_self(&pts, 1).unwrap();
        assert_eq!(single.indices(), &[0, 1, 2]);
    }

    #[test]
    fn matches_sorting_on_small_random_sets() {
        let mut rng = crate::rng::seeded(3);
        let pts: Vec<Point3> = (0..60).map(|_| rng.random()).collect();
        let t = knn_search(&pts, &pts, 7).unwrap();
        for (i, q) in pts.iter().enumerate() {
            let mut all: Vec<(f64, usize)> =
                pts.iter().enumerate().map(|(j, p)| (sq_dist(q, p), j)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all[..7].iter().map(|e| e.1).collect();
            assert_eq!(t.row(i), want.as_slice());
        }
    }
}
