//! Sparse Cholesky factorization `P K P^T = L L^T`.
//!
//! The symbolic phase (ordering, elimination tree, column structure of `L`)
//! depends only on the sparsity pattern and is reused across numeric
//! factorizations with the same pattern, which is the situation during
//! likelihood maximization. The numeric phase is left-looking over columns
//! and switches to a dense kernel for the trailing block of `L` that the
//! symbolic phase proved to be full.

use std::sync::Arc;

use faer::linalg::cholesky::llt::factor::LltError;
use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::{Accum, Mat, MatMut, MatRef, Par};

use super::ordering::{invert, minimum_degree, Ordering};
use super::SparseSymMatrix;
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
/// Trailing blocks smaller than this stay on the sparse path.
const MIN_DENSE_BLOCK: usize = 32;
/// Fill fraction above which the trailing block is stored and factored dense.
const DENSE_FILL: f64 = 0.8;

/// Pattern-only part of a factorization.
#[derive(Clone, Debug)]
pub struct SymbolicCholesky {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    parent: Vec<usize>,
    /// Permuted lower-triangular input, compressed by column.
    c_colptr: Vec<usize>,
    c_rowidx: Vec<usize>,
    /// Position in the permuted input of each stored input entry.
    c_map: Vec<usize>,
    /// Structure of `L`, compressed by column, rows ascending, diagonal first.
    l_colptr: Vec<usize>,
    l_rowidx: Vec<usize>,
    /// First column of the trailing full block (`n` if none).
    dense_start: usize,
    input_nnz: usize,
}

impl SymbolicCholesky {
    pub fn analyze(matrix: &SparseSymMatrix, ordering: Ordering) -> Self {
        let n = matrix.order();
        let perm = match ordering {
            Ordering::Natural => (0..n).collect(),
            Ordering::MinimumDegree => minimum_degree(&matrix.adjacency()),
        };
        Self::with_permutation(matrix, perm)
    }

    pub fn with_permutation(matrix: &SparseSymMatrix, perm: Vec<usize>) -> Self {
        let n = matrix.order();
        assert_eq!(perm.len(), n, "permutation length");
        let iperm = invert(&perm);
        let (colptr, rowidx) = (matrix.col_ptr(), matrix.row_idx());

        // permuted lower pattern with a map from input positions
        let mut count = vec![0usize; n];
        for j in 0..n {
            for &i in &rowidx[colptr[j]..colptr[j + 1]] {
                count[iperm[i].min(iperm[j])] += 1;
            }
        }
        let mut c_colptr = vec![0usize; n + 1];
        for j in 0..n {
            c_colptr[j + 1] = c_colptr[j] + count[j];
        }
        let nnz = c_colptr[n];
        let mut next = c_colptr[..n].to_vec();
        let mut entries: Vec<(usize, usize)> = vec![(0, 0); nnz];
        for j in 0..n {
            for (q, &i) in rowidx[colptr[j]..colptr[j + 1]].iter().enumerate() {
                let (pi, pj) = (iperm[i], iperm[j]);
                let (row, col) = if pi >= pj { (pi, pj) } else { (pj, pi) };
                entries[next[col]] = (row, colptr[j] + q);
                next[col] += 1;
            }
        }
        let mut c_rowidx = vec![0usize; nnz];
        let mut c_map = vec![0usize; nnz];
        for j in 0..n {
            let seg = &mut entries[c_colptr[j]..c_colptr[j + 1]];
            seg.sort_unstable();
            for (off, &(row, src)) in seg.iter().enumerate() {
                c_rowidx[c_colptr[j] + off] = row;
                c_map[src] = c_colptr[j] + off;
            }
        }

        // rows of the permuted lower triangle (= columns of its transpose)
        let mut rcount = vec![0usize; n];
        for &i in &c_rowidx {
            rcount[i] += 1;
        }
        let mut r_ptr = vec![0usize; n + 1];
        for i in 0..n {
            r_ptr[i + 1] = r_ptr[i] + rcount[i];
        }
        let mut rnext = r_ptr[..n].to_vec();
        let mut r_col = vec![0usize; nnz];
        for j in 0..n {
            for &i in &c_rowidx[c_colptr[j]..c_colptr[j + 1]] {
                r_col[rnext[i]] = j;
                rnext[i] += 1;
            }
        }

        // elimination tree with path compression
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &j in &r_col[r_ptr[k]..r_ptr[k + 1]] {
                let mut i = j;
                while i != NONE && i < k {
                    let up = ancestor[i];
                    ancestor[i] = k;
                    if up == NONE {
                        parent[i] = k;
                    }
                    i = up;
                }
            }
        }

        // row structure of L via elimination-tree reaches; two passes
        let mut mark = vec![NONE; n];
        let mut stack = Vec::new();
        let mut reach = |k: usize, out: &mut Vec<usize>, mark: &mut [usize]| {
            out.clear();
            mark[k] = k;
            for &j in &r_col[r_ptr[k]..r_ptr[k + 1]] {
                let mut i = j;
                while i != NONE && mark[i] != k {
                    stack.push(i);
                    mark[i] = k;
                    i = parent[i];
                }
                out.append(&mut stack);
            }
        };
        let mut counts = vec![1usize; n];
        let mut row = Vec::new();
        for k in 0..n {
            reach(k, &mut row, &mut mark);
            for &j in &row {
                counts[j] += 1;
            }
        }
        let dense_start = choose_dense_start(&counts);
        for (j, c) in counts.iter_mut().enumerate().skip(dense_start) {
            *c = n - j;
        }
        let mut l_colptr = vec![0usize; n + 1];
        for j in 0..n {
            l_colptr[j + 1] = l_colptr[j] + counts[j];
        }
        let mut l_rowidx = vec![0usize; l_colptr[n]];
        let mut lnext = l_colptr[..n].to_vec();
        mark.iter_mut().for_each(|m| *m = NONE);
        for k in 0..n {
            reach(k, &mut row, &mut mark);
            for &j in &row {
                if j < dense_start {
                    l_rowidx[lnext[j]] = k;
                    lnext[j] += 1;
                }
            }
            if k < dense_start {
                l_rowidx[lnext[k]] = k;
                lnext[k] += 1;
            }
        }
        for j in dense_start..n {
            for (q, r) in (l_colptr[j]..l_colptr[j + 1]).zip(j..n) {
                l_rowidx[q] = r;
            }
        }

        Self {
            n,
            perm,
            parent,
            c_colptr,
            c_rowidx,
            c_map,
            l_colptr,
            l_rowidx,
            dense_start,
            input_nnz: matrix.nnz(),
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// `perm[new] = old`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn elimination_tree(&self) -> &[usize] {
        &self.parent
    }

    /// Stored entries of `L` including the diagonal.
    pub fn factor_nnz(&self) -> usize {
        self.l_colptr[self.n]
    }

    /// Size of the trailing block factored by the dense kernel.
    pub fn dense_block(&self) -> usize {
        self.n - self.dense_start
    }

    /// Multiply-add count of the numeric factorization, `sum_j c_j^2` over
    /// column counts `c_j`.
    pub fn flops_estimate(&self) -> u64 {
        (0..self.n)
            .map(|j| {
                let c = (self.l_colptr[j + 1] - self.l_colptr[j]) as u64;
                c * c
            })
            .sum()
    }

    fn check_pattern(&self, matrix: &SparseSymMatrix) -> Result<()> {
        if matrix.order() != self.n || matrix.nnz() != self.input_nnz {
            return Err(Error::Dimension {
                expected: self.input_nnz,
                found: matrix.nnz(),
            });
        }
        Ok(())
    }

    /// Numeric factorization of a matrix with the analyzed pattern.
    pub fn factorize(self: &Arc<Self>, matrix: &SparseSymMatrix) -> Result<CholeskyFactor> {
        self.check_pattern(matrix)?;
        let n = self.n;
        let mut c_values = vec![0.0; self.c_rowidx.len()];
        for (q, &v) in matrix.values().iter().enumerate() {
            c_values[self.c_map[q]] = v;
        }
        let (lp, li) = (&self.l_colptr, &self.l_rowidx);
        let mut lx = vec![0.0; li.len()];
        let mut x = vec![0.0; n];
        // columns k waiting to update row `head[r]`'s column; `pending[k]`
        // is the position of the next unconsumed entry of column k
        let mut head = vec![NONE; n];
        let mut link = vec![NONE; n];
        let mut pending = vec![0usize; n];
        let s = self.dense_start;

        for j in 0..s {
            for q in self.c_colptr[j]..self.c_colptr[j + 1] {
                x[self.c_rowidx[q]] = c_values[q];
            }
            let mut k = head[j];
            head[j] = NONE;
            while k != NONE {
                let next_k = link[k];
                let p = pending[k];
                let ljk = lx[p];
                let end = lp[k + 1];
                for q in p..end {
                    x[li[q]] -= lx[q] * ljk;
                }
                pending[k] = p + 1;
                if p + 1 < end {
                    let r = li[p + 1];
                    link[k] = head[r];
                    head[r] = k;
                }
                k = next_k;
            }
            let d = x[j];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    column: self.perm[j],
                });
            }
            let ljj = d.sqrt();
            x[j] = 0.0;
            lx[lp[j]] = ljj;
            for q in lp[j] + 1..lp[j + 1] {
                let r = li[q];
                lx[q] = x[r] / ljj;
                x[r] = 0.0;
            }
            pending[j] = lp[j] + 1;
            if lp[j] + 1 < lp[j + 1] {
                let r = li[lp[j] + 1];
                link[j] = head[r];
                head[r] = j;
            }
        }

        if s < n {
            self.factor_dense_block(&c_values, &mut lx, &pending)?;
        }

        let logdet = 2.0 * (0..n).map(|j| lx[lp[j]].ln()).sum::<f64>();
        Ok(CholeskyFactor {
            symbolic: Arc::clone(self),
            values: lx,
            logdet,
        })
    }

    // Schur complement of the sparse columns onto the trailing full block,
    // then a dense Cholesky of that block, written back into `lx`.
    fn factor_dense_block(&self, c_values: &[f64], lx: &mut [f64], pending: &[usize]) -> Result<()> {
        let (n, s) = (self.n, self.dense_start);
        let m = n - s;
        let (lp, li) = (&self.l_colptr, &self.l_rowidx);
        // column-major, lower triangle
        let mut block = vec![0.0; m * m];
        for j in s..n {
            for q in self.c_colptr[j]..self.c_colptr[j + 1] {
                let i = self.c_rowidx[q];
                block[(j - s) * m + (i - s)] = c_values[q];
            }
        }
        // trailing parts of the sparse columns, one column each
        let updating: Vec<usize> = (0..s).filter(|&k| pending[k] < lp[k + 1]).collect();
        if !updating.is_empty() {
            let mut w = Mat::<f64>::zeros(m, updating.len());
            for (c, &k) in updating.iter().enumerate() {
                let col = w.col_mut(c).try_as_col_major_mut().expect("contiguous column");
                let col = col.as_slice_mut();
                for q in pending[k]..lp[k + 1] {
                    col[li[q] - s] = lx[q];
                }
            }
            let dst = MatMut::from_column_major_slice_mut(&mut block, m, m);
            triangular::matmul(
                dst,
                BlockStructure::TriangularLower,
                Accum::Add,
                w.as_ref(),
                BlockStructure::Rectangular,
                w.transpose(),
                BlockStructure::Rectangular,
                -1.0,
                Par::Seq,
            );
        }
        let l = dense_block_cholesky(&block, m).map_err(|col| Error::NotPositiveDefinite {
            column: self.perm[s + col],
        })?;
        for jj in 0..m {
            let base = lp[s + jj];
            for ii in jj..m {
                lx[base + (ii - jj)] = l[(ii, jj)];
            }
        }
        Ok(())
    }
}

// First column of the largest trailing block of L whose lower triangle is at
// least DENSE_FILL full, or n when that block is too small.
fn choose_dense_start(counts: &[usize]) -> usize {
    let n = counts.len();
    let mut best = n;
    let mut filled = 0usize;
    for s in (0..n).rev() {
        filled += counts[s];
        let m = n - s;
        if filled as f64 >= DENSE_FILL * (m * (m + 1) / 2) as f64 {
            best = s;
        }
    }
    if n - best < MIN_DENSE_BLOCK {
        n
    } else {
        best
    }
}

/// Cholesky factor of the lower triangle of a column-major `m x m` block.
/// On failure returns the offending column.
fn dense_block_cholesky(a: &[f64], m: usize) -> std::result::Result<Mat<f64>, usize> {
    let view = MatRef::from_column_major_slice(a, m, m);
    let llt = super::dense::cholesky(view).map_err(|e| match e {
        LltError::NonPositivePivot { index } => index,
    })?;
    Ok(llt.L().to_owned())
}

/// Numeric factor `P K P^T = L L^T`; immutable, shareable across threads.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    values: Vec<f64>,
    logdet: f64,
}

impl CholeskyFactor {
    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn order(&self) -> usize {
        self.symbolic.n
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn permutation(&self) -> &[usize] {
        &self.symbolic.perm
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn flops_estimate(&self) -> u64 {
        self.symbolic.flops_estimate()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.order() {
            return Err(Error::Dimension {
                expected: self.order(),
                found: len,
            });
        }
        Ok(())
    }

    // y <- L^{-1} y
    fn forward(&self, y: &mut [f64]) {
        let sym = &self.symbolic;
        let (lp, li, lx) = (&sym.l_colptr, &sym.l_rowidx, &self.values);
        for j in 0..sym.n {
            let yj = y[j] / lx[lp[j]];
            y[j] = yj;
            if yj != 0.0 {
                for q in lp[j] + 1..lp[j + 1] {
                    y[li[q]] -= lx[q] * yj;
                }
            }
        }
    }

    // y <- L^{-T} y
    fn backward(&self, y: &mut [f64]) {
        let sym = &self.symbolic;
        let (lp, li, lx) = (&sym.l_colptr, &sym.l_rowidx, &self.values);
        for j in (0..sym.n).rev() {
            let mut acc = y[j];
            for q in lp[j] + 1..lp[j + 1] {
                acc -= lx[q] * y[li[q]];
            }
            y[j] = acc / lx[lp[j]];
        }
    }

    /// `K^{-1} b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b.len())?;
        let perm = &self.symbolic.perm;
        let mut y: Vec<f64> = perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; b.len()];
        for (new, &old) in perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }

    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rhs.iter().map(|b| self.solve(b)).collect()
    }

    /// `z^T K^{-1} z` through a single triangular solve.
    pub fn quad_form(&self, z: &[f64]) -> Result<f64> {
        self.check_len(z.len())?;
        let mut y: Vec<f64> = self.symbolic.perm.iter().map(|&old| z[old]).collect();
        self.forward(&mut y);
        Ok(y.iter().map(|v| v * v).sum())
    }

    /// `||P K P^T - L L^T||_F / ||K||_F`, evaluated over the full symmetric
    /// matrices (both triangles).
    pub fn reconstruction_residual(&self, matrix: &SparseSymMatrix) -> Result<f64> {
        let sym = &self.symbolic;
        sym.check_pattern(matrix)?;
        let n = sym.n;
        let (lp, li, lx) = (&sym.l_colptr, &sym.l_rowidx, &self.values);
        let mut c_values = vec![0.0; sym.c_rowidx.len()];
        for (q, &v) in matrix.values().iter().enumerate() {
            c_values[sym.c_map[q]] = v;
        }
        // column j of L L^T (rows >= j) = sum_k L[j,k] L[j.., k]
        let mut head = vec![NONE; n];
        let mut link = vec![NONE; n];
        let mut pending = vec![0usize; n];
        let mut x = vec![0.0; n];
        let mut diff = 0.0;
        let mut norm = 0.0;
        for j in 0..n {
            let mut k = head[j];
            head[j] = NONE;
            let mut touched: Vec<usize> = li[lp[j]..lp[j + 1]].to_vec();
            while k != NONE {
                let next_k = link[k];
                let p = pending[k];
                let ljk = lx[p];
                for q in p..lp[k + 1] {
                    x[li[q]] += lx[q] * ljk;
                }
                pending[k] = p + 1;
                if p + 1 < lp[k + 1] {
                    let r = li[p + 1];
                    link[k] = head[r];
                    head[r] = k;
                }
                k = next_k;
            }
            let ljj = lx[lp[j]];
            for q in lp[j]..lp[j + 1] {
                x[li[q]] += lx[q] * ljj;
            }
            for q in sym.c_colptr[j]..sym.c_colptr[j + 1] {
                let i = sym.c_rowidx[q];
                let w = if i == j { 1.0 } else { 2.0 };
                x[i] -= c_values[q];
                norm += w * c_values[q] * c_values[q];
                touched.push(i);
            }
            touched.sort_unstable();
            touched.dedup();
            for &i in &touched {
                let w = if i == j { 1.0 } else { 2.0 };
                diff += w * x[i] * x[i];
                x[i] = 0.0;
            }
            pending[j] = lp[j] + 1;
            if lp[j] + 1 < lp[j + 1] {
                let r = li[lp[j] + 1];
                link[j] = head[r];
                head[r] = j;
            }
        }
        Ok((diff / norm).sqrt())
    }
}

/// Ordering, symbolic analysis and numeric factorization in one call.
pub fn factorize(matrix: &SparseSymMatrix) -> Result<CholeskyFactor> {
    let symbolic = Arc::new(SymbolicCholesky::analyze(matrix, Ordering::MinimumDegree));
    symbolic.factorize(matrix)
}
