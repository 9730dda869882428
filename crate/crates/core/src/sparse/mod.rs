//! Tapered covariance matrices in compressed sparse form.
//!
//! The stacked vector of a `p`-variate field on `n` sites uses index
//! `k * n + a` for component `k` at site `a`. Only the lower triangle of the
//! symmetric `np x np` matrix is stored, compressed by column, with row
//! indices ascending and the diagonal first in every column.

pub mod cholesky;
pub mod dense;
pub mod ordering;

use std::io::Write;

use crate::covmodel::MultiMaternParams;
use crate::error::{param_err, Error, Result};
use crate::geometry::{euclidean, CellIndex, LocationSet};
use crate::taper::TaperSpec;

pub use cholesky::{factorize, CholeskyFactor, SymbolicCholesky};
pub use ordering::Ordering;

/// Default cap on stored entries of a tapered matrix.
pub const DEFAULT_NNZ_CAP: usize = 60_000_000;

/// Symmetric matrix, lower triangle in compressed sparse column form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymMatrix {
    n_sites: usize,
    p: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Builds from raw lower-triangular CSC arrays; rows in each column must
    /// be strictly ascending, start at the diagonal and stay below `order`.
    pub fn from_parts(
        n_sites: usize,
        p: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let order = n_sites * p;
        if col_ptr.len() != order + 1 {
            return Err(Error::Dimension {
                expected: order + 1,
                found: col_ptr.len(),
            });
        }
        if row_idx.len() != values.len() || col_ptr[order] != row_idx.len() {
            return Err(Error::Dimension {
                expected: col_ptr[order],
                found: row_idx.len(),
            });
        }
        for j in 0..order {
            let rows = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            if rows.first() != Some(&j)
                || rows.windows(2).any(|w| w[0] >= w[1])
                || rows.last().is_some_and(|&r| r >= order)
            {
                return param_err(format!("column {j} is not a sorted lower column with diagonal"));
            }
        }
        Ok(Self {
            n_sites,
            p,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Keeps lower-triangle entries with `|a_ij| > drop_tol` (the diagonal is
    /// always kept). Treated as a single component.
    pub fn from_dense_lower(a: &[Vec<f64>], drop_tol: f64) -> Self {
        let n = a.len();
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..n {
            for (i, row) in a.iter().enumerate().skip(j) {
                if i == j || row[j].abs() > drop_tol {
                    row_idx.push(i);
                    values.push(row[j]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            n_sites: n,
            p: 1,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Matrix order `n * p`.
    pub fn order(&self) -> usize {
        self.n_sites * self.p
    }

    /// Stored entries of the lower triangle.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzeros of the full symmetric matrix.
    pub fn nnz_full(&self) -> usize {
        2 * self.nnz() - self.order()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let rows = &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]];
        match rows.binary_search(&r) {
            Ok(q) => self.values[self.col_ptr[c] + q],
            Err(_) => 0.0,
        }
    }

    /// Off-diagonal neighbor lists of the symmetric pattern.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let n = self.order();
        let mut adj = vec![Vec::new(); n];
        for j in 0..n {
            for &i in &self.row_idx[self.col_ptr[j] + 1..self.col_ptr[j + 1]] {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        adj
    }

    /// Row-major dense copy, both triangles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.order();
        let mut out = vec![vec![0.0; n]; n];
        for j in 0..n {
            for q in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[q];
                out[i][j] = self.values[q];
                out[j][i] = self.values[q];
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.order();
        if x.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: x.len(),
            });
        }
        let mut y = vec![0.0; n];
        for j in 0..n {
            let q0 = self.col_ptr[j];
            y[j] += self.values[q0] * x[j];
            for q in q0 + 1..self.col_ptr[j + 1] {
                let i = self.row_idx[q];
                y[i] += self.values[q] * x[j];
                y[j] += self.values[q] * x[i];
            }
        }
        Ok(y)
    }

    /// Upper bound on the spectral norm: the largest absolute row sum.
    pub fn spectral_bound(&self) -> f64 {
        let n = self.order();
        let mut rows = vec![0.0; n];
        for j in 0..n {
            let q0 = self.col_ptr[j];
            rows[j] += self.values[q0].abs();
            for q in q0 + 1..self.col_ptr[j + 1] {
                let v = self.values[q].abs();
                rows[self.row_idx[q]] += v;
                rows[j] += v;
            }
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    /// MatrixMarket coordinate format, symmetric, lower triangle, 1-based.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.order();
        writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(w, "{n} {n} {}", self.nnz())?;
        for j in 0..n {
            for q in self.col_ptr[j]..self.col_ptr[j + 1] {
                writeln!(w, "{} {} {:e}", self.row_idx[q] + 1, j + 1, self.values[q])?;
            }
        }
        Ok(())
    }
}

/// Pattern of a tapered covariance on fixed sites, with the per-entry
/// distance and taper factor kept so that refilling for new covariance
/// parameters costs one kernel evaluation per stored entry.
#[derive(Clone, Debug)]
pub struct TaperedLayout {
    n_sites: usize,
    p: usize,
    gamma: f64,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    dist: Vec<f64>,
    pair: Vec<(u8, u8)>,
    taper: Vec<f64>,
}

impl TaperedLayout {
    pub fn new(locs: &LocationSet, taper: &TaperSpec, nnz_cap: usize) -> Result<Self> {
        if !taper.is_tapered() {
            return param_err("a sparse layout needs a finite taper range");
        }
        let p = taper.p();
        if p > u8::MAX as usize {
            return param_err("too many components");
        }
        let n = locs.len();
        let gamma = taper.gamma();
        let index = CellIndex::new(locs, gamma);
        let mut nbrs: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut pairs_total = 0usize;
        for b in 0..n {
            let center = locs.point(b);
            let mut list = Vec::new();
            index.for_each_candidate(center, gamma, |a| {
                if a >= b {
                    let d = euclidean(locs.point(a), center);
                    if d < gamma {
                        list.push((a, d));
                    }
                }
            });
            list.sort_unstable_by_key(|&(a, _)| a);
            pairs_total += list.len();
            nbrs.push(list);
        }
        // lower-triangle count: for l <= k, entries with a >= b when k == l,
        // all neighbors in both directions otherwise
        let full_pairs = 2 * pairs_total - n;
        let needed = p * pairs_total + p * (p - 1) / 2 * full_pairs;
        if needed > nnz_cap {
            return Err(Error::Size {
                what: "tapered covariance",
                needed,
                cap: nnz_cap,
            });
        }
        // neighbors a < b for each column b
        let mut below: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (b, list) in nbrs.iter().enumerate() {
            for &(a, d) in list.iter().skip(1) {
                below[a].push((b, d));
            }
        }
        let order = n * p;
        let mut col_ptr = Vec::with_capacity(order + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::with_capacity(needed);
        let mut dist = Vec::with_capacity(needed);
        let mut pair = Vec::with_capacity(needed);
        let mut tvals = Vec::with_capacity(needed);
        for l in 0..p {
            for b in 0..n {
                for k in l..p {
                    let mut push = |a: usize, d: f64| {
                        row_idx.push(k * n + a);
                        dist.push(d);
                        pair.push((l as u8, k as u8));
                        tvals.push(taper.value_at_distance(d, l, k));
                    };
                    if k > l {
                        for &(a, d) in &below[b] {
                            push(a, d);
                        }
                    }
                    for &(a, d) in &nbrs[b] {
                        push(a, d);
                    }
                }
                col_ptr.push(row_idx.len());
            }
        }
        Ok(Self {
            n_sites: n,
            p,
            gamma,
            col_ptr,
            row_idx,
            dist,
            pair,
            taper: tvals,
        })
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Fraction of the full `np x np` matrix that is stored (both triangles).
    pub fn density(&self) -> f64 {
        let order = (self.n_sites * self.p) as f64;
        (2 * self.nnz() - self.n_sites * self.p) as f64 / (order * order)
    }

    /// Tapered covariance `Sigma o T` for the given parameters.
    pub fn fill(&self, params: &MultiMaternParams) -> Result<SparseSymMatrix> {
        if params.p() != self.p {
            return Err(Error::Dimension {
                expected: self.p,
                found: params.p(),
            });
        }
        let cc = params.cross_covariance();
        let values = self
            .dist
            .iter()
            .zip(&self.pair)
            .zip(&self.taper)
            .map(|((&d, &(k, l)), &t)| cc.eval(d, k as usize, l as usize) * t)
            .collect();
        Ok(SparseSymMatrix {
            n_sites: self.n_sites,
            p: self.p,
            col_ptr: self.col_ptr.clone(),
            row_idx: self.row_idx.clone(),
            values,
        })
    }
}

/// A Cholesky factor from either the sparse or the dense path.
pub enum CovFactor {
    Sparse(CholeskyFactor),
    Dense(dense::DenseCholesky),
}

impl CovFactor {
    pub fn order(&self) -> usize {
        match self {
            Self::Sparse(f) => f.order(),
            Self::Dense(f) => f.order(),
        }
    }

    pub fn logdet(&self) -> f64 {
        match self {
            Self::Sparse(f) => f.logdet(),
            Self::Dense(f) => f.logdet(),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Sparse(f) => f.solve(b),
            Self::Dense(f) => f.solve(b),
        }
    }

    pub fn quad_form(&self, z: &[f64]) -> Result<f64> {
        match self {
            Self::Sparse(f) => f.quad_form(z),
            Self::Dense(f) => f.quad_form(z),
        }
    }
}

/// Sparse `Sigma o T` on `locs`; the taper range must be finite.
pub fn assemble_tapered(
    params: &MultiMaternParams,
    locs: &LocationSet,
    taper: &TaperSpec,
    nnz_cap: usize,
) -> Result<SparseSymMatrix> {
    if params.p() != taper.p() {
        return Err(Error::Dimension {
            expected: params.p(),
            found: taper.p(),
        });
    }
    TaperedLayout::new(locs, taper, nnz_cap)?.fill(params)
}

/// `||Sigma - Sigma o T||_F` over all `(np)^2` entries, without storing
/// either matrix.
pub fn taper_frobenius_discrepancy(
    params: &MultiMaternParams,
    locs: &LocationSet,
    taper: &TaperSpec,
) -> Result<f64> {
    let p = params.p();
    if p != taper.p() {
        return Err(Error::Dimension {
            expected: p,
            found: taper.p(),
        });
    }
    let cc = params.cross_covariance();
    let n = locs.len();
    let mut total = 0.0;
    for a in 0..n {
        for b in a..n {
            let d = euclidean(locs.point(a), locs.point(b));
            let w = if a == b { 1.0 } else { 2.0 };
            for k in 0..p {
                for l in 0..p {
                    let c = cc.eval(d, k, l);
                    let diff = c * (1.0 - taper.value_at_distance(d, k, l));
                    total += w * diff * diff;
                }
            }
        }
    }
    Ok(total.sqrt())
}
