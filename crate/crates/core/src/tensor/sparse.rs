use std::sync::Arc;

use ndarray::Array2;

use super::{Mat, Real, Tape, Var};

/// Compressed sparse row matrix with its transpose precomputed for backward passes.
#[derive(Clone, Debug)]
pub struct Csr<R> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<R>,
}

impl<R: Real> Csr<R> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, R)]) -> Self {
        let mut sorted: Vec<(usize, usize, R)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<R> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < rows && c < cols, "triplet ({r},{c}) outside {rows}x{cols}");
            if last == Some((r, c)) {
                let tail = values.last_mut().unwrap();
                *tail = *tail + v;
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self { rows, cols, indptr, indices, values }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, R)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<(usize, usize, R)> = (0..self.rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (c, r, v)))
            .collect();
        Self::from_triplets(self.cols, self.rows, &triplets)
    }

    /// Scales every row to sum to one (rows without entries stay empty).
    pub fn row_normalized(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.rows {
            let span = self.indptr[r]..self.indptr[r + 1];
            let total: R = self.values[span.clone()].iter().copied().sum();
            if total > R::zero() {
                for v in &mut out.values[span] {
                    *v = *v / total;
                }
            }
        }
        out
    }

    /// Dense product `self · x`.
    pub fn dot_dense(&self, x: &Mat<R>) -> Mat<R> {
        assert_eq!(x.nrows(), self.cols, "spmm inner dimension");
        let x = x.as_standard_layout();
        let d = x.ncols();
        let xs = x.as_slice().expect("standard layout");
        let mut out = Array2::<R>::zeros((self.rows, d));
        {
            let os = out.as_slice_mut().unwrap();
            for r in 0..self.rows {
                let dst = &mut os[r * d..(r + 1) * d];
                for k in self.indptr[r]..self.indptr[r + 1] {
                    let w = self.values[k];
                    let src = &xs[self.indices[k] * d..(self.indices[k] + 1) * d];
                    for (o, &s) in dst.iter_mut().zip(src) {
                        *o = *o + w * s;
                    }
                }
            }
        }
        out
    }
}

/// A sparse matrix paired with its transpose, shared between tape nodes.
#[derive(Clone, Debug)]
pub struct SparseOperator<R> {
    pub(crate) forward: Arc<Csr<R>>,
    pub(crate) transpose: Arc<Csr<R>>,
}

impl<R: Real> SparseOperator<R> {
    pub fn new(m: Csr<R>) -> Self {
        let t = m.transpose();
        Self { forward: Arc::new(m), transpose: Arc::new(t) }
    }

    pub fn matrix(&self) -> &Csr<R> {
        &self.forward
    }
}

impl<R: Real> Tape<R> {
    /// Sparse-dense product `op · x` (the sparse side is constant).
    pub fn spmm(&self, op: &SparseOperator<R>, x: Var) -> Var {
        let out = op.forward.dot_dense(&self.value(x));
        let t = Arc::clone(&op.transpose);
        self.push_op(out, &[x], move |g, _, _| vec![Some(t.dot_dense(g))])
    }
}
