use super::{AutodiffError, Tensor};

/// Compressed sparse row matrix used for graph propagation.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, AutodiffError> {
        let mut sorted = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(AutodiffError::Shape {
                    op: "csr",
                    detail: format!("entry ({r}, {c}) outside {rows}x{cols}"),
                });
            }
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self { rows, cols, row_ptr, col_idx, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates the stored entries of one row as `(col, value)`.
    pub fn row_entries(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    /// `self · dense`
    pub fn matmul(&self, dense: &Tensor) -> Result<Tensor, AutodiffError> {
        if dense.rows() != self.cols {
            return Err(AutodiffError::Shape {
                op: "sparse_dense_matmul",
                detail: format!("{}x{} times {:?}", self.rows, self.cols, dense.shape()),
            });
        }
        let k = dense.cols();
        let src = dense.data();
        let mut out = vec![0.0; self.rows * k];
        for r in 0..self.rows {
            let dst = &mut out[r * k..(r + 1) * k];
            for (c, w) in self.row_entries(r) {
                for (o, x) in dst.iter_mut().zip(&src[c * k..(c + 1) * k]) {
                    *o += w * x;
                }
            }
        }
        Tensor::matrix(self.rows, k, out)
    }

    /// `selfᵀ · dense`
    pub fn transpose_matmul(&self, dense: &Tensor) -> Result<Tensor, AutodiffError> {
        if dense.rows() != self.rows {
            return Err(AutodiffError::Shape {
                op: "sparse_dense_matmul",
                detail: format!("transpose of {}x{} times {:?}", self.rows, self.cols, dense.shape()),
            });
        }
        let k = dense.cols();
        let src = dense.data();
        let mut out = vec![0.0; self.cols * k];
        for r in 0..self.rows {
            let g = &src[r * k..(r + 1) * k];
            for (c, w) in self.row_entries(r) {
                for (o, x) in out[c * k..(c + 1) * k].iter_mut().zip(g) {
                    *o += w * x;
                }
            }
        }
        Tensor::matrix(self.cols, k, out)
    }
}
