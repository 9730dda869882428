//! Simple kriging of one component with untapered or tapered weights, and
//! the exact mean squared prediction error of such predictors under a true
//! model.

use rand::Rng;
use rayon::prelude::*;

use crate::covmodel::{CrossCovariance, MultiMaternParams};
use crate::error::{param_err, Error, Result};
use crate::geometry::{euclidean, neighbors_within, LocationSet};
use crate::simulate::replication_rng;
use crate::sparse::dense::{assemble_dense, DenseCholesky, DEFAULT_DENSE_CAP};
use crate::sparse::{assemble_tapered, factorize, CovFactor, DEFAULT_NNZ_CAP};
use crate::taper::TaperSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KrigingMode {
    Untapered,
    Tapered,
}

/// Factored covariance of the observations plus what is needed to build
/// cross-covariance vectors for new sites.
pub struct KrigingSystem {
    mode: KrigingMode,
    locs: LocationSet,
    params: MultiMaternParams,
    taper: Option<TaperSpec>,
    target: usize,
    factor: CovFactor,
}

impl KrigingSystem {
    /// Predicts component `0` with weights from `Sigma_theta`.
    pub fn untapered(locs: LocationSet, params: MultiMaternParams) -> Result<Self> {
        let m = assemble_dense(&params, &locs, None, DEFAULT_DENSE_CAP)?;
        let factor = CovFactor::Dense(DenseCholesky::new(m)?);
        Ok(Self {
            mode: KrigingMode::Untapered,
            locs,
            params,
            taper: None,
            target: 0,
            factor,
        })
    }

    /// Weights from `Sigma_theta o T`. An infinite range gives the untapered
    /// system.
    pub fn tapered(locs: LocationSet, params: MultiMaternParams, taper: TaperSpec) -> Result<Self> {
        if taper.p() != params.p() {
            return Err(Error::Dimension {
                expected: params.p(),
                found: taper.p(),
            });
        }
        if !taper.is_tapered() {
            let mut sys = Self::untapered(locs, params)?;
            sys.taper = Some(taper);
            return Ok(sys);
        }
        let m = assemble_tapered(&params, &locs, &taper, DEFAULT_NNZ_CAP)?;
        let factor = CovFactor::Sparse(factorize(&m)?);
        Ok(Self {
            mode: KrigingMode::Tapered,
            locs,
            params,
            taper: Some(taper),
            target: 0,
            factor,
        })
    }

    /// Predicts component `target` instead of the first one.
    pub fn with_target(mut self, target: usize) -> Result<Self> {
        if target >= self.params.p() {
            return param_err(format!("component {target} out of range"));
        }
        self.target = target;
        Ok(self)
    }

    pub fn mode(&self) -> KrigingMode {
        self.mode
    }

    pub fn locs(&self) -> &LocationSet {
        &self.locs
    }

    pub fn params(&self) -> &MultiMaternParams {
        &self.params
    }

    pub fn factor(&self) -> &CovFactor {
        &self.factor
    }

    fn gamma(&self) -> f64 {
        self.taper.as_ref().map_or(f64::INFINITY, TaperSpec::gamma)
    }

    fn check_site(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.locs.dim() {
            return Err(Error::Dimension {
                expected: self.locs.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Entry `k * n + a` is `c_{tk}(x - x_a)` times the taper factor.
    pub fn cross_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_site(x)?;
        let n = self.locs.len();
        let p = self.params.p();
        let cc = self.params.cross_covariance();
        let gamma = self.gamma();
        let mut out = vec![0.0; n * p];
        for a in 0..n {
            let d = euclidean(x, self.locs.point(a));
            if d >= gamma {
                continue;
            }
            for k in 0..p {
                let t = self.taper.as_ref().map_or(1.0, |t| t.value_at_distance(d, self.target, k));
                out[k * n + a] = cc.eval(d, self.target, k) * t;
            }
        }
        Ok(out)
    }

    /// Kriging weights `M^{-1} c(x)`.
    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.factor.solve(&self.cross_vector(x)?)
    }

    pub fn predict_at(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        if z.len() != self.factor.order() {
            return Err(Error::Dimension {
                expected: self.factor.order(),
                found: z.len(),
            });
        }
        Ok(dot(&self.weights(x)?, z))
    }

    /// Observation sites strictly within the taper range of `x`.
    pub fn neighbors_in_range(&self, x: &[f64]) -> Result<usize> {
        let gamma = self.gamma();
        if gamma.is_infinite() {
            return Ok(self.locs.len());
        }
        Ok(neighbors_within(&self.locs, x, gamma)?.len())
    }

    pub fn exact_mspe(&self, x: &[f64], truth: &MultiMaternParams) -> Result<f64> {
        let w = self.weights(x)?;
        mspe_of_weights(&w, x, self.target, &self.locs, truth)
    }

    pub fn report(&self, x: &[f64], z: &[f64], truth: Option<&MultiMaternParams>) -> Result<PredictionReport> {
        let w = self.weights(x)?;
        if z.len() != w.len() {
            return Err(Error::Dimension {
                expected: w.len(),
                found: z.len(),
            });
        }
        let exact_mspe = match truth {
            Some(t) => Some(mspe_of_weights(&w, x, self.target, &self.locs, t)?),
            None => None,
        };
        Ok(PredictionReport {
            site: x.to_vec(),
            predictor: dot(&w, z),
            exact_mspe,
            neighbors_in_range: self.neighbors_in_range(x)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionReport {
    pub site: Vec<f64>,
    pub predictor: f64,
    pub exact_mspe: Option<f64>,
    pub neighbors_in_range: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// `E (Z_t(x) - w^T Z)^2 = c_tt(0) - 2 w^T sigma(x) + w^T Sigma w` under
/// `truth`, without forming `Sigma`.
pub fn mspe_of_weights(
    w: &[f64],
    x: &[f64],
    target: usize,
    locs: &LocationSet,
    truth: &MultiMaternParams,
) -> Result<f64> {
    let n = locs.len();
    let p = truth.p();
    if w.len() != n * p {
        return Err(Error::Dimension {
            expected: n * p,
            found: w.len(),
        });
    }
    let cc = truth.cross_covariance();
    let mut cross = 0.0;
    for a in 0..n {
        let d = euclidean(x, locs.point(a));
        for k in 0..p {
            cross += w[k * n + a] * cc.eval(d, target, k);
        }
    }
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|a| quad_row(w, a, locs, &cc))
        .collect();
    let quad: f64 = rows.iter().sum();
    Ok(cc.eval(0.0, target, target) - 2.0 * cross + quad)
}

// sum over b <= a and all (k, l) of the symmetric quadratic-form terms
fn quad_row(w: &[f64], a: usize, locs: &LocationSet, cc: &CrossCovariance) -> f64 {
    let n = locs.len();
    let p = cc.p();
    let xa = locs.point(a);
    let mut s = 0.0;
    for b in 0..=a {
        let d = euclidean(xa, locs.point(b));
        let mult = if a == b { 1.0 } else { 2.0 };
        for k in 0..p {
            let wk = w[k * n + a];
            if wk == 0.0 {
                continue;
            }
            for l in 0..p {
                s += mult * wk * w[l * n + b] * cc.eval(d, k, l);
            }
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct MspeRow {
    pub gamma: f64,
    pub mspe_tapered: f64,
    pub mspe_untapered: f64,
    pub ratio: f64,
    pub neighbors_in_range: usize,
}

/// Ratio of the tapered to the untapered exact MSPE at `x` for each taper
/// range. `weights_params` builds the predictors, `truth` scores them.
pub fn mspe_ratio_curve(
    gammas: &[f64],
    taper: &TaperSpec,
    locs: &LocationSet,
    weights_params: &MultiMaternParams,
    truth: &MultiMaternParams,
    x: &[f64],
) -> Result<Vec<MspeRow>> {
    if gammas.is_empty() {
        return param_err("no taper ranges given");
    }
    let base = KrigingSystem::untapered(locs.clone(), weights_params.clone())?;
    let mspe_untapered = base.exact_mspe(x, truth)?;
    gammas
        .iter()
        .map(|&gamma| {
            let spec = taper.with_gamma(gamma)?;
            let (mspe_tapered, neighbors) = if spec.is_tapered() {
                let sys = KrigingSystem::tapered(locs.clone(), weights_params.clone(), spec)?;
                (sys.exact_mspe(x, truth)?, sys.neighbors_in_range(x)?)
            } else {
                (mspe_untapered, locs.len())
            };
            Ok(MspeRow {
                gamma,
                mspe_tapered,
                mspe_untapered,
                ratio: mspe_tapered / mspe_untapered,
                neighbors_in_range: neighbors,
            })
        })
        .collect()
}

/// Uniform distribution on an axis-aligned box.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformDomainSampler {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl UniformDomainSampler {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return param_err("box bounds must have equal, positive length");
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return param_err("box lower bound exceeds upper bound");
        }
        Ok(Self { lower, upper })
    }

    /// The square `[-m s, m s]^2` covered by a grid design.
    pub fn for_grid(m: usize, spacing: f64) -> Self {
        let h = m as f64 * spacing;
        Self {
            lower: vec![-h, -h],
            upper: vec![h, h],
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = replication_rng(seed, u64::MAX);
        (0..n)
            .map(|_| {
                self.lower
                    .iter()
                    .zip(&self.upper)
                    .map(|(l, u)| if l == u { *l } else { rng.random_range(*l..*u) })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SqErrDifference {
    /// `|mean_j (e_untapered(s_j)^2 - e_tapered(s_j)^2)|`
    pub estimate: f64,
    pub std_error: f64,
    pub n_mc: usize,
}

/// Monte Carlo estimate of the difference of integrated squared errors of
/// two predictors, using common sites drawn from the integrating density.
/// `truth[j]` is the realized target component at `sites[j]`.
pub fn integrated_sqerr_difference(
    untapered: &KrigingSystem,
    tapered: &KrigingSystem,
    sites: &[Vec<f64>],
    z: &[f64],
    truth: &[f64],
) -> Result<SqErrDifference> {
    let n_mc = sites.len();
    if n_mc < 2 {
        return param_err("need at least two Monte Carlo sites");
    }
    if truth.len() != n_mc {
        return Err(Error::Dimension {
            expected: n_mc,
            found: truth.len(),
        });
    }
    sqerr_difference_summary(&sqerr_differences(untapered, tapered, sites, z, truth)?)
}

/// Mean absolute value and standard error of per-site squared-error
/// differences.
pub fn sqerr_difference_summary(diffs: &[f64]) -> Result<SqErrDifference> {
    let n_mc = diffs.len();
    if n_mc < 2 {
        return param_err("need at least two Monte Carlo sites");
    }
    let mean = diffs.iter().sum::<f64>() / n_mc as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n_mc - 1) as f64;
    Ok(SqErrDifference {
        estimate: mean.abs(),
        std_error: (var / n_mc as f64).sqrt(),
        n_mc,
    })
}

/// Per-site `e_untapered^2 - e_tapered^2`.
pub fn sqerr_differences(
    untapered: &KrigingSystem,
    tapered: &KrigingSystem,
    sites: &[Vec<f64>],
    z: &[f64],
    truth: &[f64],
) -> Result<Vec<f64>> {
    sites
        .iter()
        .zip(truth)
        .map(|(x, &t)| {
            let eu = untapered.predict_at(x, z)? - t;
            let et = tapered.predict_at(x, z)? - t;
            Ok(eu * eu - et * et)
        })
        .collect()
}

/// Kriging weights of one system at a fixed set of sites, computed once so
/// that many data vectors can be predicted with dot products.
#[derive(Clone, Debug)]
pub struct SitePredictors {
    pub sites: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

impl SitePredictors {
    pub fn new(sys: &KrigingSystem, sites: &[Vec<f64>]) -> Result<Self> {
        let weights = sites.par_iter().map(|x| sys.weights(x)).collect::<Result<_>>()?;
        Ok(Self {
            sites: sites.to_vec(),
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.weights
            .iter()
            .map(|w| {
                if w.len() != z.len() {
                    return Err(Error::Dimension {
                        expected: w.len(),
                        found: z.len(),
                    });
                }
                Ok(dot(w, z))
            })
            .collect()
    }
}
