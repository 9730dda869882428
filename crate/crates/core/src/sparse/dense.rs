//! Dense reference path: full covariance assembly, Cholesky and spectrum.

use std::sync::Once;

use faer::linalg::cholesky::llt::factor::LltError;
use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, MatRef, Par, Side};

use crate::covmodel::MultiMaternParams;
use crate::error::{Error, Result};
use crate::geometry::{euclidean, LocationSet};
use crate::taper::TaperSpec;

/// Largest matrix order the dense path accepts by default.
pub const DEFAULT_DENSE_CAP: usize = 6000;

static SEQUENTIAL: Once = Once::new();

fn init() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(Par::Seq));
}

pub fn to_faer(a: &[Vec<f64>]) -> Mat<f64> {
    let n = a.len();
    Mat::from_fn(n, n, |i, j| a[i][j])
}

/// Full `np x np` covariance, optionally tapered, on the stacked index
/// `k * n + a`.
pub fn assemble_dense(
    params: &MultiMaternParams,
    locs: &LocationSet,
    taper: Option<&TaperSpec>,
    cap: usize,
) -> Result<Mat<f64>> {
    let p = params.p();
    if let Some(t) = taper {
        if t.p() != p {
            return Err(Error::Dimension {
                expected: p,
                found: t.p(),
            });
        }
    }
    let n = locs.len();
    let order = n * p;
    if order > cap {
        return Err(Error::Size {
            what: "dense covariance order",
            needed: order,
            cap,
        });
    }
    let cc = params.cross_covariance();
    // column-major buffer; each unordered component pair is evaluated once
    let mut buf = vec![0.0; order * order];
    for b in 0..n {
        for a in b..n {
            let d = euclidean(locs.point(a), locs.point(b));
            for k in 0..p {
                for l in k..p {
                    let t = taper.map_or(1.0, |t| t.value_at_distance(d, k, l));
                    let v = if t == 0.0 { 0.0 } else { cc.eval(d, k, l) * t };
                    let (i1, j1) = (k * n + a, l * n + b);
                    let (i2, j2) = (l * n + a, k * n + b);
                    buf[j1 * order + i1] = v;
                    buf[i1 * order + j1] = v;
                    buf[j2 * order + i2] = v;
                    buf[i2 * order + j2] = v;
                }
            }
        }
    }
    Ok(Mat::from_fn(order, order, |i, j| buf[j * order + i]))
}

/// Dense Cholesky factor of a symmetric positive definite matrix.
pub struct DenseCholesky {
    llt: Llt<f64>,
    logdet: f64,
    n: usize,
}

pub(crate) fn cholesky(a: MatRef<'_, f64>) -> std::result::Result<Llt<f64>, LltError> {
    init();
    a.llt(Side::Lower)
}

impl DenseCholesky {
    pub fn new(a: Mat<f64>) -> Result<Self> {
        let n = a.nrows();
        let llt = cholesky(a.as_ref()).map_err(|e| match e {
            LltError::NonPositivePivot { index } => Error::NotPositiveDefinite { column: index },
        })?;
        let l = llt.L();
        let logdet = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        Ok(Self { llt, logdet, n })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// The lower factor `L` with `A = L L^T`.
    pub fn lower(&self) -> faer::MatRef<'_, f64> {
        self.llt.L()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                found: len,
            });
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check(b.len())?;
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.llt.solve(&rhs);
        Ok((0..self.n).map(|i| x[(i, 0)]).collect())
    }

    /// `z^T A^{-1} z` via `||L^{-1} z||^2`.
    pub fn quad_form(&self, z: &[f64]) -> Result<f64> {
        self.check(z.len())?;
        let l = self.llt.L();
        let mut y = z.to_vec();
        for j in 0..self.n {
            let yj = y[j] / l[(j, j)];
            y[j] = yj;
            for i in j + 1..self.n {
                y[i] -= l[(i, j)] * yj;
            }
        }
        Ok(y.iter().map(|v| v * v).sum())
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Mat<f64>) -> Result<f64> {
    init();
    if a.nrows() == 0 {
        return Err(Error::Dimension { expected: 1, found: 0 });
    }
    let ev = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Parameter(format!("eigenvalue iteration failed: {e:?}")))?;
    Ok(ev.into_iter().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let a = to_faer(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let c = DenseCholesky::new(a.clone()).unwrap();
        assert!((c.logdet() - 8.0f64.ln()).abs() < 1e-14);
        let x = c.solve(&[2.0, 1.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-14 && x[1].abs() < 1e-14);
        let q = c.quad_form(&[2.0, 1.0]).unwrap();
        assert!((q - 1.0).abs() < 1e-14);
        // eigenvalues (7 +- sqrt(17)) / 2
        let lo = min_eigenvalue(&a).unwrap();
        assert!((lo - (7.0 - 17f64.sqrt()) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn indefinite_reports_pivot() {
        let a = to_faer(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 1.0]]);
        match DenseCholesky::new(a) {
            Err(Error::NotPositiveDefinite { column }) => assert_eq!(column, 2),
            _ => panic!("expected failure"),
        }
    }
}
