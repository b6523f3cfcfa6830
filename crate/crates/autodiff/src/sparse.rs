//! Compressed sparse row matrices used as constant operators on the tape.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::AutodiffError;

/// Real-valued CSR matrix. Column indices within a row are sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from (row, col, value) triplets. Duplicate coordinates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, AutodiffError> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(AutodiffError::IndexOutOfBounds {
                    op: "csr_from_triplets",
                    index: r.max(c),
                    bound: if r >= n_rows { n_rows } else { n_cols },
                });
            }
            if !v.is_finite() {
                return Err(AutodiffError::NonFinite { op: "csr_from_triplets" });
            }
            sorted.push((r, c, v));
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    /// Assembles a matrix from raw CSR arrays, validating their structure.
    pub fn from_raw(
        n_rows: usize,
        n_cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, AutodiffError> {
        let well_formed = indptr.len() == n_rows + 1
            && indptr[0] == 0
            && indptr.windows(2).all(|w| w[0] <= w[1])
            && indptr[n_rows] == indices.len()
            && indices.len() == values.len();
        if !well_formed {
            return Err(AutodiffError::MalformedSparse);
        }
        for r in 0..n_rows {
            let row = &indices[indptr[r]..indptr[r + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&c| c >= n_cols) {
                return Err(AutodiffError::MalformedSparse);
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: "csr_from_raw" });
        }
        Ok(Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row index of every stored entry, in storage order.
    pub fn row_of_entries(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            rows.extend(std::iter::repeat(r).take(self.indptr[r + 1] - self.indptr[r]));
        }
        rows
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Same sparsity pattern, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, AutodiffError> {
        if values.len() != self.nnz() {
            return Err(AutodiffError::ShapeMismatch {
                op: "csr_with_values",
                left: (self.nnz(), 1),
                right: (values.len(), 1),
            });
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                triplets.push((c, r, v));
            }
        }
        Self::from_triplets(self.n_cols, self.n_rows, &triplets)
            .expect("transpose of a valid matrix is valid")
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        (0..self.n_rows).all(|r| self.row(r).all(|(c, v)| (self.get(c, r) - v).abs() <= tol))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                out[[r, c]] += v;
            }
        }
        out
    }

    /// `self · dense`.
    pub fn matmul_dense(&self, dense: ArrayView2<'_, f64>) -> Result<Array2<f64>, AutodiffError> {
        if dense.nrows() != self.n_cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "spmm",
                left: (self.n_rows, self.n_cols),
                right: dense.dim(),
            });
        }
        let d = dense.ncols();
        let mut out = Array2::zeros((self.n_rows, d));
        for (r, mut out_row) in out.outer_iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &dense.row(c));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · dense`, without materialising the transpose.
    pub fn transpose_matmul_dense(
        &self,
        dense: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>, AutodiffError> {
        if dense.nrows() != self.n_rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "spmm_transpose",
                left: (self.n_cols, self.n_rows),
                right: dense.dim(),
            });
        }
        let mut out = Array2::zeros((self.n_cols, dense.ncols()));
        for r in 0..self.n_rows {
            let src = dense.row(r);
            for (c, v) in self.row(r) {
                out.row_mut(c).scaled_add(v, &src);
            }
        }
        Ok(out)
    }
}
