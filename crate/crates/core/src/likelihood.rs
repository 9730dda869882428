//! Gaussian negative log-likelihood, exact and one-taper, and its
//! minimization.
//!
//! Both objectives use the normalization
//! `(1/np) [log det M + z^T M^{-1} z]` with `M = Sigma_theta` (untapered,
//! dense path) or `M = Sigma_theta o T` (one-taper, sparse path).

use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::{Arc, OnceLock};

use crate::covmodel::{MultiMaternParams, ParamBox};
use crate::error::{param_err, Error, Result};
use crate::geometry::LocationSet;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::sparse::dense::{assemble_dense, DenseCholesky, DEFAULT_DENSE_CAP};
use crate::sparse::{CovFactor, Ordering, SymbolicCholesky, TaperedLayout, DEFAULT_NNZ_CAP};
use crate::taper::TaperSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveKind {
    Untapered,
    OneTaper,
}

/// Builds and factors the covariance matrix of one model at fixed sites.
/// The sparsity pattern, and its symbolic factorization, are computed once.
pub struct CovarianceBuilder {
    locs: LocationSet,
    template: MultiMaternParams,
    param_box: ParamBox,
    taper: Option<TaperSpec>,
    layout: Option<TaperedLayout>,
    symbolic: OnceLock<Arc<SymbolicCholesky>>,
    dense_cap: usize,
}

impl CovarianceBuilder {
    /// `taper = None` or an infinite range selects the dense path.
    pub fn new(
        locs: LocationSet,
        template: MultiMaternParams,
        param_box: ParamBox,
        taper: Option<TaperSpec>,
    ) -> Result<Self> {
        if let Some(t) = &taper {
            if t.p() != template.p() {
                return Err(Error::Dimension {
                    expected: template.p(),
                    found: t.p(),
                });
            }
        }
        let layout = match &taper {
            Some(t) if t.is_tapered() => Some(TaperedLayout::new(&locs, t, DEFAULT_NNZ_CAP)?),
            _ => None,
        };
        Ok(Self {
            locs,
            template,
            param_box,
            taper,
            layout,
            symbolic: OnceLock::new(),
            dense_cap: DEFAULT_DENSE_CAP,
        })
    }

    pub fn with_dense_cap(mut self, cap: usize) -> Self {
        self.dense_cap = cap;
        self
    }

    pub fn locs(&self) -> &LocationSet {
        &self.locs
    }

    pub fn template(&self) -> &MultiMaternParams {
        &self.template
    }

    pub fn param_box(&self) -> &ParamBox {
        &self.param_box
    }

    pub fn taper(&self) -> Option<&TaperSpec> {
        self.taper.as_ref()
    }

    pub fn is_sparse(&self) -> bool {
        self.layout.is_some()
    }

    pub fn order(&self) -> usize {
        self.locs.len() * self.template.p()
    }

    pub fn params(&self, theta: &[f64]) -> Result<MultiMaternParams> {
        self.param_box.unpack(&self.template, theta, false)
    }

    pub fn factor_params(&self, params: &MultiMaternParams) -> Result<CovFactor> {
        match &self.layout {
            Some(layout) => {
                let matrix = layout.fill(params)?;
                let symbolic = self
                    .symbolic
                    .get_or_init(|| Arc::new(SymbolicCholesky::analyze(&matrix, Ordering::MinimumDegree)));
                Ok(CovFactor::Sparse(symbolic.factorize(&matrix)?))
            }
            None => {
                let m = assemble_dense(params, &self.locs, self.taper.as_ref(), self.dense_cap)?;
                Ok(CovFactor::Dense(DenseCholesky::new(m)?))
            }
        }
    }

    pub fn factor(&self, theta: &[f64]) -> Result<CovFactor> {
        self.factor_params(&self.params(theta)?)
    }
}

/// `(1/np) [log det M + z^T M^{-1} z]` for a factor of `M`.
pub fn normalized_nll(factor: &CovFactor, z: &[f64]) -> Result<f64> {
    let quad = factor.quad_form(z)?;
    Ok((factor.logdet() + quad) / z.len() as f64)
}

/// Negative log-likelihood of one data vector as a function of `theta`.
pub struct Objective {
    kind: ObjectiveKind,
    builder: CovarianceBuilder,
    data: Vec<f64>,
    eval_count: AtomicUsize,
}

impl Objective {
    pub fn untapered(
        locs: LocationSet,
        data: Vec<f64>,
        template: MultiMaternParams,
        param_box: ParamBox,
    ) -> Result<Self> {
        let builder = CovarianceBuilder::new(locs, template, param_box, None)?;
        Self::from_builder(ObjectiveKind::Untapered, builder, data)
    }

    /// The taper range must be finite unless the caller wants the
    /// one-taper objective to coincide with the untapered one.
    pub fn one_taper(
        locs: LocationSet,
        data: Vec<f64>,
        template: MultiMaternParams,
        param_box: ParamBox,
        taper: TaperSpec,
    ) -> Result<Self> {
        let builder = CovarianceBuilder::new(locs, template, param_box, Some(taper))?;
        Self::from_builder(ObjectiveKind::OneTaper, builder, data)
    }

    pub fn from_builder(kind: ObjectiveKind, builder: CovarianceBuilder, data: Vec<f64>) -> Result<Self> {
        if data.len() != builder.order() {
            return Err(Error::Dimension {
                expected: builder.order(),
                found: data.len(),
            });
        }
        Ok(Self {
            kind,
            builder,
            data,
            eval_count: AtomicUsize::new(0),
        })
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn builder(&self) -> &CovarianceBuilder {
        &self.builder
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn eval_count(&self) -> usize {
        self.eval_count.load(AtomicOrdering::Relaxed)
    }

    /// Objective value; parameter vectors that do not give a positive
    /// definite matrix evaluate to `+inf`.
    pub fn neg_loglik(&self, theta: &[f64]) -> f64 {
        self.eval_count.fetch_add(1, AtomicOrdering::Relaxed);
        match self.try_neg_loglik(theta) {
            Ok(v) => v,
            Err(e) => {
                log::debug!("rejected theta {theta:?}: {e}");
                f64::INFINITY
            }
        }
    }

    pub fn try_neg_loglik(&self, theta: &[f64]) -> Result<f64> {
        let factor = self.builder.factor(theta)?;
        normalized_nll(&factor, &self.data)
    }
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    pub nelder_mead: NelderMeadOptions,
    pub keep_trace: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub objective_value: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub trace: Option<Vec<(Vec<f64>, f64)>>,
    /// Set when the fit could not run at all.
    pub error: Option<String>,
}

/// Bounded Nelder-Mead minimization of `obj` from `start`.
pub fn fit_ml(obj: &Objective, start: &[f64], opts: &FitOptions) -> Result<FitResult> {
    let pbox = obj.builder.param_box();
    if start.len() != pbox.dim() {
        return Err(Error::Dimension {
            expected: pbox.dim(),
            found: start.len(),
        });
    }
    if !pbox.contains(start) {
        return param_err("starting value lies outside the box");
    }
    let mut trace = Vec::new();
    let min = nelder_mead(
        |theta| {
            let v = obj.neg_loglik(theta);
            if opts.keep_trace {
                trace.push((theta.to_vec(), v));
            }
            v
        },
        start,
        &pbox.lower,
        &pbox.upper,
        &opts.nelder_mead,
    );
    Ok(FitResult {
        theta_hat: min.x,
        objective_value: min.value,
        evaluations: min.evals,
        converged: min.converged && min.value.is_finite(),
        trace: opts.keep_trace.then_some(trace),
        error: None,
    })
}

/// Fits for each taper range in turn, starting each fit at the previous
/// optimum. `gammas` must be strictly decreasing.
pub fn fit_with_continuation<F>(
    mut make_objective: F,
    gammas: &[f64],
    start: &[f64],
    opts: &FitOptions,
) -> Result<Vec<FitResult>>
where
    F: FnMut(f64) -> Result<Objective>,
{
    if gammas.is_empty() {
        return param_err("no taper ranges given");
    }
    if gammas.windows(2).any(|w| !(w[0] > w[1])) {
        return param_err("taper ranges must be strictly decreasing");
    }
    let mut current = start.to_vec();
    let mut out = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let attempt = make_objective(gamma).and_then(|obj| {
            let warm = obj.builder.param_box().project(&current);
            fit_ml(&obj, &warm, opts)
        });
        match attempt {
            Ok(fit) => {
                if fit.objective_value.is_finite() {
                    current = fit.theta_hat.clone();
                }
                out.push(fit);
            }
            Err(e) => out.push(FitResult {
                theta_hat: current.clone(),
                objective_value: f64::INFINITY,
                evaluations: 0,
                converged: false,
                trace: None,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(out)
}

/// Deterministic set of parameter vectors for the likelihood comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaGrid {
    pub points: Vec<Vec<f64>>,
}

impl ThetaGrid {
    /// Full `3^q` lattice `center_i * {1 - rel, 1, 1 + rel}`, projected onto
    /// the box.
    pub fn lattice(center: &[f64], rel: f64, pbox: &ParamBox) -> Self {
        let q = center.len();
        let total = 3usize.pow(q as u32);
        let points = (0..total)
            .map(|mut idx| {
                let theta: Vec<f64> = (0..q)
                    .map(|i| {
                        let level = (idx % 3) as f64 - 1.0;
                        idx /= 3;
                        center[i] * (1.0 + level * rel)
                    })
                    .collect();
                pbox.project(&theta)
            })
            .collect();
        Self { points }
    }

    /// The center plus the `2q` points moving one coordinate by `+-rel`.
    pub fn axial(center: &[f64], rel: f64, pbox: &ParamBox) -> Self {
        let mut points = vec![pbox.project(center)];
        for i in 0..center.len() {
            for sign in [-1.0, 1.0] {
                let mut theta = center.to_vec();
                theta[i] *= 1.0 + sign * rel;
                points.push(pbox.project(&theta));
            }
        }
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodGap {
    /// `max_theta |L_theta - Lbar_theta|` for each data vector.
    pub per_replication: Vec<f64>,
    /// Grid points skipped because a matrix was not positive definite.
    pub skipped: usize,
}

/// Largest absolute difference between the untapered and one-taper
/// objectives over `grid`, for each data vector. Each grid point is
/// factored once for all data vectors.
pub fn likelihood_gap(
    grid: &ThetaGrid,
    data: &[Vec<f64>],
    locs: &LocationSet,
    template: &MultiMaternParams,
    pbox: &ParamBox,
    taper: &TaperSpec,
) -> Result<LikelihoodGap> {
    if grid.is_empty() {
        return param_err("empty parameter grid");
    }
    let exact = CovarianceBuilder::new(locs.clone(), template.clone(), pbox.clone(), None)?;
    let tapered = CovarianceBuilder::new(locs.clone(), template.clone(), pbox.clone(), Some(taper.clone()))?;
    for z in data {
        if z.len() != exact.order() {
            return Err(Error::Dimension {
                expected: exact.order(),
                found: z.len(),
            });
        }
    }
    let mut gaps = vec![0.0f64; data.len()];
    let mut skipped = 0;
    for theta in &grid.points {
        let pair = exact.factor(theta).and_then(|f| Ok((f, tapered.factor(theta)?)));
        let (fe, ft) = match pair {
            Ok(p) => p,
            Err(Error::NotPositiveDefinite { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        for (gap, z) in gaps.iter_mut().zip(data) {
            let d = (normalized_nll(&fe, z)? - normalized_nll(&ft, z)?).abs();
            *gap = gap.max(d);
        }
    }
    if skipped == grid.len() {
        return param_err("no grid point gives positive definite matrices");
    }
    Ok(LikelihoodGap {
        per_replication: gaps,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covmodel::{preset_model, Preset, SymMatrix};
    use crate::geometry::{sample_perturbed_grid, GridDesign};
    use crate::simulate::{simulate_field, SimulationPlan};
    use crate::taper::TaperFamily;

    fn scalar_params(sill: f64) -> MultiMaternParams {
        MultiMaternParams::new(
            SymMatrix::filled(1, 1.0),
            SymMatrix::filled(1, sill),
            SymMatrix::filled(1, 0.5),
        )
        .unwrap()
    }

    #[test]
    fn scalar_case() {
        let locs = LocationSet::new(&[vec![0.0, 0.0]], 0.0).unwrap();
        let pbox = ParamBox::default_for(1);
        let obj = Objective::untapered(locs, vec![1.5], scalar_params(1.0), pbox).unwrap();
        // sill 2 -> variance s = 4
        let v = obj.neg_loglik(&[1.0, 2.0]);
        assert!((v - (4f64.ln() + 1.5 * 1.5 / 4.0)).abs() < 1e-14);
        assert_eq!(obj.eval_count(), 1);
    }

    #[test]
    fn iid_variance_has_closed_form_minimizer() {
        // Sites far apart relative to the range give Sigma = s I.
        let pts: Vec<Vec<f64>> = (0..100).map(|i| vec![1000.0 * i as f64, 0.0]).collect();
        let locs = LocationSet::new(&pts, 0.0).unwrap();
        let z: Vec<f64> = (0..100).map(|i| ((i * 37 % 17) as f64 - 8.0) / 4.0).collect();
        let s_hat = z.iter().map(|v| v * v).sum::<f64>() / 100.0;
        let pbox = ParamBox::new(
            vec![ParamBox::default_for(1).names[1]],
            vec![0.01],
            vec![10.0],
        )
        .unwrap();
        let obj = Objective::untapered(locs, z, scalar_params(1.0), pbox).unwrap();
        let opts = FitOptions {
            nelder_mead: NelderMeadOptions {
                f_tol: 1e-15,
                x_tol: 1e-12,
                ..Default::default()
            },
            keep_trace: true,
        };
        let fit = fit_ml(&obj, &[1.0], &opts).unwrap();
        let sill_hat = fit.theta_hat[0];
        // the objective is flat near its minimum: x is only accurate to ~sqrt(eps)
        assert!((sill_hat * sill_hat - s_hat).abs() < 1e-6 * s_hat, "{} vs {s_hat}", sill_hat * sill_hat);
        assert_eq!(fit.trace.unwrap().len(), fit.evaluations);
    }

    fn model_a_setup(m: usize) -> (LocationSet, MultiMaternParams, ParamBox, Vec<f64>) {
        let model = preset_model(Preset::A);
        let locs = sample_perturbed_grid(&GridDesign::new(m, 1.0), 0).unwrap();
        let plan = SimulationPlan::new(model.params_true.clone(), locs.clone(), 1, 42);
        let z = simulate_field(&plan).unwrap().remove(0);
        (locs, model.params_true, model.param_box, z)
    }

    #[test]
    fn one_taper_matches_dense_masked_oracle() {
        let (locs, params, pbox, z) = model_a_setup(6);
        let taper = TaperSpec::new(TaperFamily::Wendland1, 2, 4.0).unwrap();
        let obj = Objective::one_taper(locs.clone(), z.clone(), params.clone(), pbox.clone(), taper.clone()).unwrap();
        assert!(obj.builder().is_sparse());
        let theta = pbox.pack(&params);
        let got = obj.neg_loglik(&theta);
        let dense = DenseCholesky::new(assemble_dense(&params, &locs, Some(&taper), 6000).unwrap()).unwrap();
        let want = (dense.logdet() + dense.quad_form(&z).unwrap()) / z.len() as f64;
        assert!((got - want).abs() < 1e-8);
    }

    #[test]
    fn infinite_taper_equals_untapered() {
        let (locs, params, pbox, z) = model_a_setup(4);
        let inf = TaperSpec::new(TaperFamily::Wendland1, 2, f64::INFINITY).unwrap();
        let a = Objective::untapered(locs.clone(), z.clone(), params.clone(), pbox.clone()).unwrap();
        let b = Objective::one_taper(locs, z, params.clone(), pbox.clone(), inf).unwrap();
        let theta = pbox.pack(&params);
        assert!((a.neg_loglik(&theta) - b.neg_loglik(&theta)).abs() < 1e-10);
    }

    #[test]
    fn invalid_theta_is_infinite() {
        let (locs, params, pbox, z) = model_a_setup(3);
        let obj = Objective::untapered(locs, z, params.clone(), pbox.clone()).unwrap();
        let mut theta = pbox.pack(&params);
        theta[4] = 3.0;
        assert_eq!(obj.neg_loglik(&theta), f64::INFINITY);
    }

    #[test]
    fn continuation_validates_and_warm_starts() {
        let (locs, params, pbox, z) = model_a_setup(3);
        let start = pbox.pack(&params);
        let opts = FitOptions {
            nelder_mead: NelderMeadOptions {
                max_evals: 60,
                ..Default::default()
            },
            keep_trace: true,
        };
        let make = |g: f64| {
            let t = TaperSpec::new(TaperFamily::Wendland1, 2, g)?;
            Objective::one_taper(locs.clone(), z.clone(), params.clone(), pbox.clone(), t)
        };
        assert!(fit_with_continuation(make, &[4.0, 6.0], &start, &opts).is_err());
        assert!(fit_with_continuation(make, &[], &start, &opts).is_err());
        let fits = fit_with_continuation(make, &[f64::INFINITY, 4.0], &start, &opts).unwrap();
        assert_eq!(fits.len(), 2);
        let second_start = &fits[1].trace.as_ref().unwrap()[0].0;
        assert_eq!(second_start, &fits[0].theta_hat);
        for f in &fits {
            assert!(pbox.contains(&f.theta_hat));
        }
    }

    #[test]
    fn gap_vanishes_without_taper() {
        let (locs, params, pbox, z) = model_a_setup(3);
        let grid = ThetaGrid::axial(&pbox.pack(&params), 0.2, &pbox);
        assert_eq!(grid.len(), 13);
        let inf = TaperSpec::new(TaperFamily::Wendland1, 2, f64::INFINITY).unwrap();
        let gap = likelihood_gap(&grid, &[z.clone()], &locs, &params, &pbox, &inf).unwrap();
        assert!(gap.per_replication[0] < 1e-10);
        let t = TaperSpec::new(TaperFamily::Wendland1, 2, 2.0).unwrap();
        let gap = likelihood_gap(&grid, &[z], &locs, &params, &pbox, &t).unwrap();
        assert!(gap.per_replication[0] > 0.0);
    }

    #[test]
    fn lattice_size_and_center() {
        let pbox = ParamBox::default_for(2);
        let c = vec![5.0, 3.0, 4.0, 1.0, 0.6, 1.0];
        let g = ThetaGrid::lattice(&c, 0.2, &pbox);
        assert_eq!(g.len(), 729);
        assert!(g.points.contains(&c));
        assert!(g.points.iter().all(|p| pbox.contains(p)));
    }
}
