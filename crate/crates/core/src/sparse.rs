//! Compressed sparse row storage with 32-bit column indices.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{HdmError, Result};

/// Rows are sorted by column and hold no duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Square matrix from raw CSR arrays; validates ordering and bounds.
    pub fn from_parts(n: usize, row_ptr: Vec<usize>, cols: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if row_ptr.len() != n + 1 || row_ptr[0] != 0 || *row_ptr.last().unwrap_or(&0) != cols.len() {
            return Err(HdmError::MatrixInvariant("row pointer array is inconsistent".into()));
        }
        if cols.len() != values.len() {
            return Err(HdmError::MatrixInvariant(
                "column and value arrays differ in length".into(),
            ));
        }
        for r in 0..n {
            let (a, b) = (row_ptr[r], row_ptr[r + 1]);
            if a > b {
                return Err(HdmError::MatrixInvariant(format!("row {r} has negative length")));
            }
            let row = &cols[a..b];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.last().is_some_and(|&c| c as usize >= n) {
                return Err(HdmError::MatrixInvariant(format!(
                    "row {r} is unsorted or out of bounds"
                )));
            }
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets; duplicates are an error.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        for &(r, c, _) in &sorted {
            if r >= n || c >= n {
                return Err(HdmError::IndexOutOfRange {
                    index: r.max(c),
                    len: n,
                });
            }
            row_ptr[r + 1] += 1;
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        let cols = sorted.iter().map(|t| t.1 as u32).collect();
        let values = sorted.iter().map(|t| t.2).collect();
        Self::from_parts(n, row_ptr, cols, values)
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(HdmError::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let mut t = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    t.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), &t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn cols(&self) -> &[u32] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&(c as u32)).map_or(0.0, |k| vals[k])
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.row(r).1.iter().sum()).collect()
    }

    /// `values[k] ← f(row, col, values[k])` for every stored entry.
    pub fn map_values(&mut self, f: impl Fn(usize, usize, f64) -> f64 + Sync) {
        let row_ptr = &self.row_ptr;
        let cols = &self.cols;
        // rows are independent; split the value array at row boundaries
        let mut rest: &mut [f64] = &mut self.values;
        let mut chunks = Vec::with_capacity(self.n);
        for r in 0..self.n {
            let (head, tail) = rest.split_at_mut(row_ptr[r + 1] - row_ptr[r]);
            chunks.push((r, head));
            rest = tail;
        }
        chunks.into_par_iter().for_each(|(r, vals)| {
            let start = row_ptr[r];
            for (k, v) in vals.iter_mut().enumerate() {
                *v = f(r, cols[start + k] as usize, *v);
            }
        });
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.par_iter_mut().enumerate().for_each(|(r, out)| {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c as usize];
            }
            *out = acc;
        });
    }

    /// Largest `|A_rc − A_cr|` over stored entries (missing mirror counts as zero).
    pub fn asymmetry(&self) -> f64 {
        (0..self.n)
            .into_par_iter()
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter()
                    .zip(vals)
                    .map(|(&c, &v)| (v - self.get(c as usize, r)).abs())
                    .fold(0.0f64, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(r, c as usize)] = v;
            }
        }
        m
    }

    /// Iterator over `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c as usize, v))
        })
    }
}
