//! Exact joint Gaussian simulation through a dense Cholesky factor.
//!
//! Replication `r` draws its standard normals from `ChaCha8Rng` seeded with
//! `seed` and set to stream `r`, so every replication can be regenerated on
//! its own and the output does not depend on the number of threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::covmodel::MultiMaternParams;
use crate::error::{param_err, Result};
use crate::geometry::LocationSet;
use crate::sparse::dense::{assemble_dense, DenseCholesky, DEFAULT_DENSE_CAP};

/// Generator for replication `rep` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

#[derive(Clone, Debug)]
pub struct SimulationPlan {
    pub params: MultiMaternParams,
    pub locs: LocationSet,
    /// Sites simulated jointly with `locs`, for example prediction targets.
    pub extra_sites: Vec<Vec<f64>>,
    pub n_rep: usize,
    pub seed: u64,
    pub dense_cap: usize,
}

impl SimulationPlan {
    pub fn new(params: MultiMaternParams, locs: LocationSet, n_rep: usize, seed: u64) -> Self {
        Self {
            params,
            locs,
            extra_sites: Vec::new(),
            n_rep,
            seed,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }

    pub fn with_extra_sites(mut self, extra: Vec<Vec<f64>>) -> Self {
        self.extra_sites = extra;
        self
    }

    pub fn n_obs(&self) -> usize {
        self.locs.len()
    }

    pub fn n_joint(&self) -> usize {
        self.locs.len() + self.extra_sites.len()
    }
}

/// Draws `x = L xi` for a fixed lower factor `L` of a covariance matrix.
pub struct GaussianSampler {
    n: usize,
    // packed lower triangle, row-major
    rows: Vec<f64>,
}

impl GaussianSampler {
    pub fn new(factor: &DenseCholesky) -> Self {
        let l = factor.lower();
        let n = factor.order();
        let mut rows = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                rows.push(l[(i, j)]);
            }
        }
        Self { n, rows }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let xi: Vec<f64> = (0..self.n).map(|_| StandardNormal.sample(rng)).collect();
        let mut out = Vec::with_capacity(self.n);
        let mut start = 0;
        for i in 0..self.n {
            let row = &self.rows[start..start + i + 1];
            out.push(row.iter().zip(&xi).map(|(a, b)| a * b).sum());
            start += i + 1;
        }
        out
    }
}

/// All replications of a plan. Sample `r` has length `n_joint * p`, stacked
/// as `k * n_joint + a` with the extra sites after the observation sites.
pub fn simulate_field(plan: &SimulationPlan) -> Result<Vec<Vec<f64>>> {
    if plan.n_rep == 0 {
        return param_err("n_rep must be at least 1");
    }
    let sampler = joint_sampler(plan)?;
    Ok((0..plan.n_rep)
        .into_par_iter()
        .map(|r| sampler.sample(&mut replication_rng(plan.seed, r as u64)))
        .collect())
}

/// Factorizes the joint covariance of a plan once, for callers that draw
/// replications themselves.
pub fn joint_sampler(plan: &SimulationPlan) -> Result<GaussianSampler> {
    let joint = plan.locs.with_extra_sites(&plan.extra_sites)?;
    let sigma = assemble_dense(&plan.params, &joint, None, plan.dense_cap)?;
    Ok(GaussianSampler::new(&DenseCholesky::new(sigma)?))
}

/// Splits a joint sample into the observation vector (`k * n_obs + a`) and
/// the extra-site values (`k * n_extra + e`).
pub fn split_joint(sample: &[f64], n_obs: usize, n_extra: usize, p: usize) -> (Vec<f64>, Vec<f64>) {
    let nj = n_obs + n_extra;
    debug_assert_eq!(sample.len(), nj * p);
    let mut obs = Vec::with_capacity(n_obs * p);
    let mut extra = Vec::with_capacity(n_extra * p);
    for k in 0..p {
        obs.extend_from_slice(&sample[k * nj..k * nj + n_obs]);
        extra.extend_from_slice(&sample[k * nj + n_obs..(k + 1) * nj]);
    }
    (obs, extra)
}
