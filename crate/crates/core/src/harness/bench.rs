use std::io::Write;
use std::time::Instant;

use rand::Rng as _;

use crate::error::{bail, Result};
use crate::geometry::{knn_search, Point3};
use crate::rng;

pub const DEFAULT_SIZES: [usize; 4] = [10_000, 20_000, 40_000, 80_000];
pub const DEFAULT_KS: [usize; 6] = [8, 16, 32, 64, 128, 256];
pub const DEFAULT_REPEATS: usize = 5;

/// Median kNN times in milliseconds: `times[row][col]` for `sizes[row]`
/// points and `ks[col]` neighbours. A `None` row was skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchTable {
    pub sizes: Vec<usize>,
    pub ks: Vec<usize>,
    pub repeats: usize,
    pub times: Vec<Option<Vec<f64>>>,
    pub notes: Vec<String>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Uniform points in the unit cube.
pub fn random_cloud(n: usize, seed: u64) -> Vec<Point3> {
    let mut r = rng::derive(seed, 0xBE4C);
    (0..n).map(|_| [r.random(), r.random(), r.random()]).collect()
}

/// Time an all-points self query (every point queries the full set) for
/// each grid cell, after one untimed warm-up run.
pub fn bench_knn(sizes: &[usize], ks: &[usize], repeats: usize, seed: u64) -> Result<BenchTable> {
    if sizes.is_empty() || ks.is_empty() || sizes.contains(&0) || ks.contains(&0) {
        bail!(InvalidArgument, "sizes and ks must be non-empty lists of positive integers");
    }
    if repeats == 0 {
        bail!(InvalidArgument, "repeats must be ≥ 1");
    }
    let mut table = BenchTable { sizes: sizes.to_vec(), ks: ks.to_vec(), repeats, times: Vec::new(), notes: Vec::new() };
    for &n in sizes {
        let kmax = ks.iter().copied().max().unwrap_or(0);
        // result table: one index and one distance per (query, neighbour)
        let bytes = n.saturating_mul(kmax).saturating_mul(16);
        if Vec::<u8>::new().try_reserve_exact(bytes).is_err() {
            table.notes.push(format!("N={n}: skipped, cannot allocate {bytes} bytes for the result table"));
            table.times.push(None);
            continue;
        }
        let points = random_cloud(n, seed ^ n as u64);
        let mut row = Vec::with_capacity(ks.len());
        for &k in ks {
            if k > n {
                row.push(f64::NAN);
                table.notes.push(format!("N={n}, k={k}: k exceeds the point count"));
                continue;
            }
            // untimed warm-up: first-touch page faults and cache fill
            std::hint::black_box(knn_search(&points, &points, k)?);
            let mut samples = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let t = Instant::now();
                let table = knn_search(&points, &points, k)?;
                std::hint::black_box(&table);
                samples.push(t.elapsed().as_secs_f64() * 1e3);
            }
            row.push(median(samples));
        }
        table.times.push(Some(row));
    }
    Ok(table)
}

impl BenchTable {
    /// Cells that break "nondecreasing in k along a row" or "nondecreasing
    /// in N down a column".
    pub fn monotonicity_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (r, row) in self.times.iter().enumerate() {
            let Some(row) = row else { continue };
            for c in 1..row.len() {
                if row[c] < row[c - 1] {
                    out.push(format!(
                        "N={}: k={} took {:.3} ms < k={} {:.3} ms",
                        self.sizes[r], self.ks[c], row[c], self.ks[c - 1], row[c - 1]
                    ));
                }
            }
        }
        for c in 0..self.ks.len() {
            let col: Vec<(usize, f64)> =
                self.times.iter().enumerate().filter_map(|(r, row)| row.as_ref().map(|v| (r, v[c]))).collect();
            for w in col.windows(2) {
                if w[1].1 < w[0].1 {
                    out.push(format!(
                        "k={}: N={} took {:.3} ms < N={} {:.3} ms",
                        self.ks[c], self.sizes[w[1].0], w[1].1, self.sizes[w[0].0], w[0].1
                    ));
                }
            }
        }
        out
    }

    /// Rows are point counts, columns `k=<k>` in milliseconds; a skipped
    /// row is written with empty cells.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "points")?;
        for k in &self.ks {
            write!(w, ",k={k}")?;
        }
        writeln!(w)?;
        for (n, row) in self.sizes.iter().zip(&self.times) {
            write!(w, "{n}")?;
            for c in 0..self.ks.len() {
                match row {
                    Some(v) => write!(w, ",{:.3}", v[c])?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn table_shape_and_csv() {
        let t = bench_knn(&[50, 100], &[1, 4, 60], 1, 0).unwrap();
        assert_eq!(t.times.len(), 2);
        assert!(t.times[0].as_ref().unwrap()[2].is_nan());
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("points,k=1,k=4,k=60\n50,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn bad_arguments() {
        assert!(bench_knn(&[], &[1], 1, 0).is_err());
        assert!(bench_knn(&[10], &[0], 1, 0).is_err());
        assert!(bench_knn(&[10], &[1], 0, 0).is_err());
    }

    #[test]
    fn violations_are_listed() {
        let t = BenchTable {
            sizes: vec![10, 20],
            ks: vec![1, 2],
            repeats: 1,
            times: vec![Some(vec![1.0, 0.5]), Some(vec![2.0, 3.0])],
            notes: vec![],
        };
        assert_eq!(t.monotonicity_violations().len(), 1);
    }
}
