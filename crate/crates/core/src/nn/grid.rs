use std::fmt;

use crate::error::{bail, Result};

/// Dense row-major array of `f64` with an explicit shape.
///
/// Layer code mostly treats grids as matrices: the first extent is the row
/// count and the remaining extents are flattened into columns, so an
/// `n × k × c` neighbour grid is also an `(n·k) × c` matrix.
#[derive(Clone, PartialEq)]
pub struct ValueGrid {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ValueGrid {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        ValueGrid { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        ValueGrid { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            bail!(InvalidArgument, "grid extents must be positive, got {shape:?}");
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            bail!(
                InvalidArgument,
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            );
        }
        Ok(ValueGrid { shape: shape.to_vec(), data })
    }

    /// Build an `rows × cols` grid from row slices.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                bail!(InvalidArgument, "ragged rows: {} vs {cols}", r.len());
            }
            data.extend_from_slice(r);
        }
        ValueGrid::from_vec(&[rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all extents after the first.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            bail!(InvalidArgument, "cannot reshape {:?} to {shape:?}", self.shape);
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &ValueGrid) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Sum of elementwise products.
    pub fn dot(&self, other: &ValueGrid) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ValueGrid) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Gather rows by index into a new `indices.len() × cols` grid.
    pub fn gather_rows(&self, indices: &[usize]) -> ValueGrid {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        ValueGrid { shape: vec![indices.len(), c], data }
    }

    /// Horizontal concatenation of two matrices with equal row counts.
    pub fn concat_cols(&self, other: &ValueGrid) -> Result<ValueGrid> {
        if self.rows() != other.rows() {
            bail!(InvalidArgument, "row mismatch {} vs {}", self.rows(), other.rows());
        }
        let (ca, cb) = (self.cols(), other.cols());
        let mut data = Vec::with_capacity(self.rows() * (ca + cb));
        for i in 0..self.rows() {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(ValueGrid { shape: vec![self.rows(), ca + cb], data })
    }
}

impl fmt::Debug for ValueGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ValueGrid")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// `out[n×m] += a[n×k] · b[k×m]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[n×k] += a[n×m] · b[k×m]ᵀ`
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            out[i * k + p] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×m] += a[n×k]ᵀ · b[n×m]`
pub(crate) fn matmul_at_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}
