//! Config-driven scenario runner.
//!
//! A scenario file is a flat `key = value` list (see [`Config`]). Recognized
//! keys:
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `name` | scenario name, also the output file stem | required |
//! | `mode` | `simulate`, `estimate`, `mspe_curve`, `predict`, `theorem1`, `theorem2` | required |
//! | `model` | preset `A` or `B` | `A` |
//! | `taper.family` | `i`, `ii`, `iii`, `iv` | `i` |
//! | `taper.gamma` | comma list of taper ranges, `inf` allowed | required except for `simulate` |
//! | `m` | comma list of grid half-counts (`n = 4 m^2`) | `10` |
//! | `delta`, `spacing` | sampling design | `1`, `1` |
//! | `seed`, `n_rep` | base seed and replications | `0`, `100` |
//! | `site` | prediction site | `0,0` |
//! | `plugin` | predict with one-taper estimates instead of the truth | `false` |
//! | `n_mc` | Monte Carlo sites for `theorem2` | `50` |
//! | `gap.grid`, `gap.rel` | `lattice` or `axial` grid, relative half-width | `lattice`, `0.2` |
//! | `fit.max_evals`, `fit.initial_step`, `fit.f_tol`, `fit.x_tol` | optimizer settings | see [`NelderMeadOptions`] |
//! | `dense_cap` | largest dense matrix order | `6000` |
//! | `rho.kl`, `sigma.kl`, `nu.kl` | true parameter overrides | preset |
//! | `box.rho.kl`, `box.sigma.kl` | `lower,upper` box overrides | default box |
//!
//! For `theorem1` and `theorem2` the lists `m` and `taper.gamma` are zipped
//! into a ladder of `(n, gamma)` steps and must have equal length. For the
//! other modes every `m` is combined with every `gamma`.
//!
//! Output schemas (one row per replication and taper range unless noted):
//!
//! * `simulate`: `scenario,seed,n,rep,site,x1,x2,component,value`
//! * `estimate`: `scenario,seed,n,rep,gamma,<free parameters>,objective,evaluations,converged,status`
//! * `mspe_curve`: `scenario,seed,n,rep,gamma,mspe_tapered,mspe_untapered,ratio,neighbors_in_range,status`
//! * `predict`: `scenario,seed,n,rep,gamma,x1,x2,predictor,truth,sq_error,exact_mspe,neighbors_in_range,status`
//! * `theorem1`: `scenario,seed,n,rep,gamma,gap,grid_points,skipped,status`
//! * `theorem2`: `scenario,seed,n,rep,gamma,isqerr_diff,std_error,n_mc,pointwise_sqerr_diff,status`
//!
//! `status` is `ok`, `not_converged` or `error: <message>`; failed rows keep
//! their place so the table always has the expected shape.

pub mod config;
pub mod table;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::covmodel::{preset_model, ModelConfig, MultiMaternParams, ParamBox, Preset};
use crate::error::{Error, Result};
use crate::geometry::{sample_perturbed_grid, GridDesign, LocationSet};
use crate::likelihood::{
    fit_with_continuation, likelihood_gap, FitOptions, FitResult, Objective, ThetaGrid,
};
use crate::optim::NelderMeadOptions;
use crate::predict::{mspe_ratio_curve, sqerr_difference_summary, KrigingSystem, SitePredictors, UniformDomainSampler};
use crate::simulate::{joint_sampler, replication_rng, split_joint, GaussianSampler, SimulationPlan};
use crate::sparse::dense::DEFAULT_DENSE_CAP;
use crate::taper::{format_gamma, parse_gamma, TaperFamily, TaperSpec};

pub use config::Config;
pub use table::{fmt_f64, median, quantile, summarize, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Simulate,
    Estimate,
    MspeCurve,
    Predict,
    Theorem1,
    Theorem2,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "simulate" => Ok(Mode::Simulate),
            "estimate" | "fit" => Ok(Mode::Estimate),
            "mspe_curve" | "mspe-curve" => Ok(Mode::MspeCurve),
            "predict" => Ok(Mode::Predict),
            "theorem1" => Ok(Mode::Theorem1),
            "theorem2" => Ok(Mode::Theorem2),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Simulate => "simulate",
            Mode::Estimate => "estimate",
            Mode::MspeCurve => "mspe_curve",
            Mode::Predict => "predict",
            Mode::Theorem1 => "theorem1",
            Mode::Theorem2 => "theorem2",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridKind {
    Lattice,
    Axial,
}

const KNOWN_KEYS: &[&str] = &[
    "name",
    "mode",
    "model",
    "taper.family",
    "taper.gamma",
    "m",
    "delta",
    "spacing",
    "seed",
    "n_rep",
    "site",
    "plugin",
    "n_mc",
    "gap.grid",
    "gap.rel",
    "fit.max_evals",
    "fit.initial_step",
    "fit.f_tol",
    "fit.x_tol",
    "dense_cap",
];

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub preset: Preset,
    pub model: ModelConfig,
    pub family: TaperFamily,
    pub gammas: Vec<f64>,
    pub ms: Vec<usize>,
    pub delta: f64,
    pub spacing: f64,
    pub seed: u64,
    pub n_rep: usize,
    pub site: Vec<f64>,
    pub plugin: bool,
    pub n_mc: usize,
    pub gap_grid: GridKind,
    pub gap_rel: f64,
    pub fit: FitOptions,
    pub dense_cap: usize,
    pub config_hash: String,
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<&str> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::Config(format!("'{key}' must not be empty")));
    }
    items.iter().map(|s| parse_num(key, s)).collect()
}

fn parse_gammas(value: &str) -> Result<Vec<f64>> {
    let items: Vec<&str> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::Config("'taper.gamma' must list at least one taper range".into()));
    }
    items.into_iter().map(parse_gamma).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::Config(format!("bad boolean '{other}' for '{key}'"))),
    }
}

impl Scenario {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let req = |key: &str| cfg.get(key).ok_or_else(|| Error::Config(format!("missing key '{key}'")));
        let name = req("name")?.to_string();
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(Error::Config(format!("bad scenario name '{name}'")));
        }
        let mode: Mode = req("mode")?.parse()?;
        let preset: Preset = cfg.get("model").unwrap_or("A").parse()?;
        let family: TaperFamily = cfg.get("taper.family").unwrap_or("i").parse()?;
        if family == TaperFamily::Custom {
            return Err(Error::Config("custom taper tables are not available in scenarios".into()));
        }

        let base = preset_model(preset);
        let mut truth = base.params_true.clone();
        let mut pbox = base.param_box.clone();
        for key in cfg.keys() {
            if KNOWN_KEYS.contains(&key) {
                continue;
            }
            let value = cfg.get(key).unwrap_or_default();
            if let Some(pname) = key.strip_prefix("box.") {
                let bounds: Vec<f64> = parse_list(key, value)?;
                let i = pbox
                    .names
                    .iter()
                    .position(|n| n.to_string() == pname)
                    .ok_or_else(|| Error::Config(format!("unknown box parameter '{pname}'")))?;
                if bounds.len() != 2 {
                    return Err(Error::Config(format!("'{key}' needs 'lower,upper'")));
                }
                pbox.lower[i] = bounds[0];
                pbox.upper[i] = bounds[1];
                continue;
            }
            if !truth.apply_entry(key, parse_num(key, value)?)? {
                return Err(Error::Config(format!("unknown key '{key}'")));
            }
        }
        let pbox = ParamBox::new(pbox.names, pbox.lower, pbox.upper)?;
        truth.validate()?;
        let model = ModelConfig::new(base.d, truth, pbox)?;

        let gammas = match cfg.get("taper.gamma") {
            Some(v) => parse_gammas(v)?,
            None if mode == Mode::Simulate => vec![f64::INFINITY],
            None => return Err(Error::Config("missing key 'taper.gamma'".into())),
        };
        TaperSpec::new(family, model.params_true.p(), gammas[0])?;
        let ms: Vec<usize> = parse_list("m", cfg.get("m").unwrap_or("10"))?;
        if ms.contains(&0) {
            return Err(Error::Config("'m' entries must be at least 1".into()));
        }
        if matches!(mode, Mode::Theorem1 | Mode::Theorem2) && ms.len() != gammas.len() {
            return Err(Error::Config(format!(
                "ladder modes need as many 'm' entries ({}) as taper ranges ({})",
                ms.len(),
                gammas.len()
            )));
        }
        let delta: f64 = parse_num("delta", cfg.get("delta").unwrap_or("1"))?;
        let spacing: f64 = parse_num("spacing", cfg.get("spacing").unwrap_or("1"))?;
        if !(delta > 0.0 && delta <= 1.0) || !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Config("need 0 < delta <= 1 and spacing > 0".into()));
        }
        let seed: u64 = parse_num("seed", cfg.get("seed").unwrap_or("0"))?;
        let n_rep: usize = parse_num("n_rep", cfg.get("n_rep").unwrap_or("100"))?;
        if n_rep == 0 {
            return Err(Error::Config("'n_rep' must be at least 1".into()));
        }
        let site: Vec<f64> = parse_list("site", cfg.get("site").unwrap_or("0,0"))?;
        if site.len() != base.d {
            return Err(Error::Config(format!("'site' needs {} coordinates", base.d)));
        }
        let plugin = parse_bool("plugin", cfg.get("plugin").unwrap_or("false"))?;
        if plugin && mode != Mode::Predict {
            return Err(Error::Config("'plugin' is only supported in predict mode".into()));
        }
        let n_mc: usize = parse_num("n_mc", cfg.get("n_mc").unwrap_or("50"))?;
        if mode == Mode::Theorem2 && n_mc < 2 {
            return Err(Error::Config("'n_mc' must be at least 2".into()));
        }
        let gap_grid = match cfg.get("gap.grid").unwrap_or("lattice") {
            "lattice" => GridKind::Lattice,
            "axial" => GridKind::Axial,
            other => return Err(Error::Config(format!("unknown grid '{other}'"))),
        };
        let gap_rel: f64 = parse_num("gap.rel", cfg.get("gap.rel").unwrap_or("0.2"))?;
        if !(gap_rel > 0.0 && gap_rel < 1.0) {
            return Err(Error::Config("'gap.rel' must lie in (0, 1)".into()));
        }
        let d = NelderMeadOptions::default();
        let fit = FitOptions {
            nelder_mead: NelderMeadOptions {
                max_evals: cfg.get("fit.max_evals").map_or(Ok(d.max_evals), |v| parse_num("fit.max_evals", v))?,
                initial_step: cfg
                    .get("fit.initial_step")
                    .map_or(Ok(d.initial_step), |v| parse_num("fit.initial_step", v))?,
                f_tol: cfg.get("fit.f_tol").map_or(Ok(d.f_tol), |v| parse_num("fit.f_tol", v))?,
                x_tol: cfg.get("fit.x_tol").map_or(Ok(d.x_tol), |v| parse_num("fit.x_tol", v))?,
            },
            keep_trace: false,
        };
        let dense_cap: usize = cfg
            .get("dense_cap")
            .map_or(Ok(DEFAULT_DENSE_CAP), |v| parse_num("dense_cap", v))?;

        Ok(Self {
            name,
            mode,
            preset,
            model,
            family,
            gammas,
            ms,
            delta,
            spacing,
            seed,
            n_rep,
            site,
            plugin,
            n_mc,
            gap_grid,
            gap_rel,
            fit,
            dense_cap,
            config_hash: cfg.hash(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_config(&Config::from_file(path)?)
    }

    pub fn truth(&self) -> &MultiMaternParams {
        &self.model.params_true
    }

    fn taper(&self, gamma: f64) -> Result<TaperSpec> {
        TaperSpec::new(self.family, self.truth().p(), gamma)
    }

    fn design(&self, m: usize) -> GridDesign {
        GridDesign {
            m,
            delta: self.delta,
            spacing: self.spacing,
        }
    }

    /// Locations of replication `rep` on the `m` grid; the same for every
    /// replication when `delta = 1`.
    pub fn locations(&self, m: usize, rep: u64) -> Result<LocationSet> {
        sample_perturbed_grid(&self.design(m), derive_seed(self.seed, STREAM_LOCATIONS ^ m as u64, rep))
    }

    fn shared_locations(&self) -> bool {
        self.delta == 1.0
    }

    fn data_seed(&self, m: usize) -> u64 {
        derive_seed(self.seed, STREAM_DATA, m as u64)
    }

    fn sampler(&self, locs: &LocationSet, extra: Vec<Vec<f64>>) -> Result<GaussianSampler> {
        let mut plan = SimulationPlan::new(self.truth().clone(), locs.clone(), 1, self.seed).with_extra_sites(extra);
        plan.dense_cap = self.dense_cap;
        joint_sampler(&plan)
    }

    /// Output columns and the group/value columns of the summary table.
    pub fn summary_spec(&self) -> (Vec<&'static str>, Vec<String>) {
        let v = |names: &[&str]| names.iter().map(|s| s.to_string()).collect();
        match self.mode {
            Mode::Simulate => (vec!["n", "component"], v(&["value"])),
            Mode::Estimate => {
                let mut cols: Vec<String> = self.model.param_box.names.iter().map(|n| n.to_string()).collect();
                cols.push("objective".into());
                (vec!["n", "gamma"], cols)
            }
            Mode::MspeCurve => (vec!["n", "gamma"], v(&["mspe_tapered", "ratio", "neighbors_in_range"])),
            Mode::Predict => (vec!["n", "gamma"], v(&["sq_error", "exact_mspe"])),
            Mode::Theorem1 => (vec!["n", "gamma"], v(&["gap"])),
            Mode::Theorem2 => (vec!["n", "gamma"], v(&["isqerr_diff", "pointwise_sqerr_diff"])),
        }
    }
}

const STREAM_LOCATIONS: u64 = 0x6c6f_6361_7469_6f6e;
const STREAM_DATA: u64 = 0x6461_7461_0000_0000;
const STREAM_MC: u64 = 0x6d6f_6e74_6563_6172;

/// Mixes a base seed with a stream tag and an index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_add(1).wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn status_of(res: &Result<()>) -> String {
    match res {
        Ok(()) => "ok".into(),
        Err(e) => format!("error: {e}"),
    }
}

fn nan_cells(k: usize) -> Vec<String> {
    vec![fmt_f64(f64::NAN); k]
}

struct RowPrefix<'a> {
    s: &'a Scenario,
    n: usize,
    rep: usize,
}

impl RowPrefix<'_> {
    fn cells(&self, gamma: Option<f64>) -> Vec<String> {
        let mut v = vec![
            self.s.name.clone(),
            self.s.seed.to_string(),
            self.n.to_string(),
            self.rep.to_string(),
        ];
        if let Some(g) = gamma {
            v.push(format_gamma(g));
        }
        v
    }
}

/// Runs a scenario. Replications run in parallel; rows come back in a fixed
/// order, so the table does not depend on the thread count.
pub fn run_scenario(s: &Scenario) -> Result<Table> {
    match s.mode {
        Mode::Simulate => run_simulate(s),
        Mode::Estimate => run_estimate(s),
        Mode::MspeCurve => run_mspe_curve(s),
        Mode::Predict => run_predict(s),
        Mode::Theorem1 => run_theorem1(s),
        Mode::Theorem2 => run_theorem2(s),
    }
}

fn run_simulate(s: &Scenario) -> Result<Table> {
    let mut t = Table::new(&["scenario", "seed", "n", "rep", "site", "x1", "x2", "component", "value"]);
    let p = s.truth().p();
    for &m in &s.ms {
        let blocks: Vec<Result<Vec<Vec<String>>>> = (0..s.n_rep)
            .into_par_iter()
            .map(|rep| {
                let locs = s.locations(m, rep as u64)?;
                let sampler = s.sampler(&locs, Vec::new())?;
                let z = sampler.sample(&mut replication_rng(s.data_seed(m), rep as u64));
                let n = locs.len();
                let prefix = RowPrefix { s, n, rep };
                let mut rows = Vec::with_capacity(n * p);
                for a in 0..n {
                    let x = locs.point(a);
                    for k in 0..p {
                        let mut row = prefix.cells(None);
                        row.extend([a.to_string(), fmt_f64(x[0]), fmt_f64(x[1]), (k + 1).to_string()]);
                        row.push(fmt_f64(z[k * n + a]));
                        rows.push(row);
                    }
                }
                Ok(rows)
            })
            .collect();
        for block in blocks {
            for row in block? {
                t.push(row)?;
            }
        }
    }
    Ok(t)
}

fn continuation_order(gammas: &[f64]) -> Vec<f64> {
    let mut g = gammas.to_vec();
    g.sort_by(|a, b| b.total_cmp(a));
    g.dedup();
    g
}

fn fit_rows(s: &Scenario, locs: &LocationSet, z: &[f64]) -> Result<Vec<(f64, FitResult)>> {
    let order = continuation_order(&s.gammas);
    let template = s.truth().clone();
    let pbox = s.model.param_box.clone();
    let fits = fit_with_continuation(
        |gamma| {
            let taper = s.taper(gamma)?;
            Objective::one_taper(locs.clone(), z.to_vec(), template.clone(), pbox.clone(), taper)
        },
        &order,
        &s.model.theta0(),
        &s.fit,
    )?;
    Ok(order.into_iter().zip(fits).collect())
}

fn run_estimate(s: &Scenario) -> Result<Table> {
    let names: Vec<String> = s.model.param_box.names.iter().map(|n| n.to_string()).collect();
    let mut cols: Vec<&str> = vec!["scenario", "seed", "n", "rep", "gamma"];
    cols.extend(names.iter().map(String::as_str));
    cols.extend(["objective", "evaluations", "converged", "status"]);
    let mut t = Table::new(&cols);
    let q = names.len();
    for &m in &s.ms {
        let shared = if s.shared_locations() {
            let locs = s.locations(m, 0)?;
            let sampler = s.sampler(&locs, Vec::new())?;
            Some((locs, sampler))
        } else {
            None
        };
        let blocks: Vec<Vec<Vec<String>>> = (0..s.n_rep)
            .into_par_iter()
            .map(|rep| {
                let n = s.design(m).n_points();
                let prefix = RowPrefix { s, n, rep };
                let attempt = (|| {
                    let own;
                    let (locs, sampler) = match &shared {
                        Some((l, sm)) => (l, sm),
                        None => {
                            let l = s.locations(m, rep as u64)?;
                            let sm = s.sampler(&l, Vec::new())?;
                            own = (l, sm);
                            (&own.0, &own.1)
                        }
                    };
                    let z = sampler.sample(&mut replication_rng(s.data_seed(m), rep as u64));
                    fit_rows(s, locs, &z)
                })();
                match attempt {
                    Ok(fits) => s
                        .gammas
                        .iter()
                        .map(|&g| {
                            let (_, fit) = fits.iter().find(|(fg, _)| *fg == g).expect("every gamma is fitted");
                            let mut row = prefix.cells(Some(g));
                            row.extend(fit.theta_hat.iter().map(|&v| fmt_f64(v)));
                            row.push(fmt_f64(fit.objective_value));
                            row.push(fit.evaluations.to_string());
                            row.push(fit.converged.to_string());
                            row.push(match (&fit.error, fit.converged) {
                                (Some(e), _) => format!("error: {e}"),
                                (None, true) => "ok".into(),
                                (None, false) => "not_converged".into(),
                            });
                            row
                        })
                        .collect(),
                    Err(e) => {
                        let status = status_of(&Err(e));
                        s.gammas
                            .iter()
                            .map(|&g| {
                                let mut row = prefix.cells(Some(g));
                                row.extend(nan_cells(q + 1));
                                row.extend(["0".to_string(), "false".to_string(), status.clone()]);
                                row
                            })
                            .collect()
                    }
                }
            })
            .collect();
        for block in blocks {
            for row in block {
                t.push(row)?;
            }
        }
    }
    Ok(t)
}

fn run_mspe_curve(s: &Scenario) -> Result<Table> {
    let mut t = Table::new(&[
        "scenario",
        "seed",
        "n",
        "rep",
        "gamma",
        "mspe_tapered",
        "mspe_untapered",
        "ratio",
        "neighbors_in_range",
        "status",
    ]);
    let draws = if s.shared_locations() { 1 } else { s.n_rep };
    let taper = s.taper(s.gammas[0])?;
    for &m in &s.ms {
        let blocks: Vec<Vec<Vec<String>>> = (0..draws)
            .into_par_iter()
            .map(|rep| {
                let prefix = RowPrefix { s, n: s.design(m).n_points(), rep };
                let curve = s
                    .locations(m, rep as u64)
                    .and_then(|locs| mspe_ratio_curve(&s.gammas, &taper, &locs, s.truth(), s.truth(), &s.site));
                match curve {
                    Ok(rows) => rows
                        .into_iter()
                        .map(|r| {
                            let mut row = prefix.cells(Some(r.gamma));
                            row.extend([
                                fmt_f64(r.mspe_tapered),
                                fmt_f64(r.mspe_untapered),
                                fmt_f64(r.ratio),
                                r.neighbors_in_range.to_string(),
                                "ok".into(),
                            ]);
                            row
                        })
                        .collect(),
                    Err(e) => {
                        let status = status_of(&Err(e));
                        s.gammas
                            .iter()
                            .map(|&g| {
                                let mut row = prefix.cells(Some(g));
                                row.extend(nan_cells(3));
                                row.extend(["0".to_string(), status.clone()]);
                                row
                            })
                            .collect()
                    }
                }
            })
            .collect();
        for block in blocks {
            for row in block {
                t.push(row)?;
            }
        }
    }
    Ok(t)
}

fn run_predict(s: &Scenario) -> Result<Table> {
    let mut t = Table::new(&[
        "scenario",
        "seed",
        "n",
        "rep",
        "gamma",
        "x1",
        "x2",
        "predictor",
        "truth",
        "sq_error",
        "exact_mspe",
        "neighbors_in_range",
        "status",
    ]);
    let p = s.truth().p();
    for &m in &s.ms {
        let shared_locs = if s.shared_locations() {
            let locs = s.locations(m, 0)?;
            let sampler = s.sampler(&locs, vec![s.site.clone()])?;
            Some((locs, sampler))
        } else {
            None
        };
        // With fixed locations and true parameters the systems do not depend
        // on the replication.
        let shared_systems: Option<Vec<Result<KrigingSystem>>> = match (&shared_locs, s.plugin) {
            (Some((locs, _)), false) => Some(
                s.gammas
                    .iter()
                    .map(|&g| KrigingSystem::tapered(locs.clone(), s.truth().clone(), s.taper(g)?))
                    .collect(),
            ),
            _ => None,
        };
        let blocks: Vec<Vec<Vec<String>>> = (0..s.n_rep)
            .into_par_iter()
            .map(|rep| {
                let n = s.design(m).n_points();
                let prefix = RowPrefix { s, n, rep };
                let setup = (|| {
                    let own;
                    let (locs, sampler) = match &shared_locs {
                        Some((l, sm)) => (l, sm),
                        None => {
                            let l = s.locations(m, rep as u64)?;
                            let sm = s.sampler(&l, vec![s.site.clone()])?;
                            own = (l, sm);
                            (&own.0, &own.1)
                        }
                    };
                    let joint = sampler.sample(&mut replication_rng(s.data_seed(m), rep as u64));
                    let (z, extra) = split_joint(&joint, n, 1, p);
                    let fits = if s.plugin { Some(fit_rows(s, locs, &z)?) } else { None };
                    Ok((locs.clone(), z, extra[0], fits))
                })();
                let (locs, z, truth_val, fits) = match setup {
                    Ok(v) => v,
                    Err(e) => {
                        let status = status_of(&Err(e));
                        return s
                            .gammas
                            .iter()
                            .map(|&g| {
                                let mut row = prefix.cells(Some(g));
                                row.extend([fmt_f64(s.site[0]), fmt_f64(s.site[1])]);
                                row.extend(nan_cells(4));
                                row.extend(["0".to_string(), status.clone()]);
                                row
                            })
                            .collect();
                    }
                };
                s.gammas
                    .iter()
                    .enumerate()
                    .map(|(gi, &g)| {
                        let mut row = prefix.cells(Some(g));
                        row.extend([fmt_f64(s.site[0]), fmt_f64(s.site[1])]);
                        let report = (|| {
                            let own;
                            let sys = match &shared_systems {
                                Some(systems) => systems[gi].as_ref().map_err(|e| Error::Config(e.to_string()))?,
                                None => {
                                    let params = match &fits {
                                        Some(f) => {
                                            let (_, fit) = f.iter().find(|(fg, _)| *fg == g).expect("every gamma is fitted");
                                            s.model.param_box.unpack(s.truth(), &fit.theta_hat, false)?
                                        }
                                        None => s.truth().clone(),
                                    };
                                    own = KrigingSystem::tapered(locs.clone(), params, s.taper(g)?)?;
                                    &own
                                }
                            };
                            sys.report(&s.site, &z, Some(s.truth()))
                        })();
                        match report {
                            Ok(r) => {
                                let err = r.predictor - truth_val;
                                row.extend([
                                    fmt_f64(r.predictor),
                                    fmt_f64(truth_val),
                                    fmt_f64(err * err),
                                    fmt_f64(r.exact_mspe.unwrap_or(f64::NAN)),
                                    r.neighbors_in_range.to_string(),
                                    "ok".into(),
                                ]);
                            }
                            Err(e) => {
                                row.extend(nan_cells(4));
                                row.extend(["0".to_string(), status_of(&Err(e))]);
                            }
                        }
                        row
                    })
                    .collect()
            })
            .collect();
        for block in blocks {
            for row in block {
                t.push(row)?;
            }
        }
    }
    Ok(t)
}

fn run_theorem1(s: &Scenario) -> Result<Table> {
    let mut t = Table::new(&["scenario", "seed", "n", "rep", "gamma", "gap", "grid_points", "skipped", "status"]);
    let theta0 = s.model.theta0();
    let pbox = &s.model.param_box;
    let grid = match s.gap_grid {
        GridKind::Lattice => ThetaGrid::lattice(&theta0, s.gap_rel, pbox),
        GridKind::Axial => ThetaGrid::axial(&theta0, s.gap_rel, pbox),
    };
    for (&m, &g) in s.ms.iter().zip(&s.gammas) {
        let n = s.design(m).n_points();
        let result = (|| {
            let locs = s.locations(m, 0)?;
            let sampler = s.sampler(&locs, Vec::new())?;
            let data: Vec<Vec<f64>> = (0..s.n_rep)
                .into_par_iter()
                .map(|rep| sampler.sample(&mut replication_rng(s.data_seed(m), rep as u64)))
                .collect();
            likelihood_gap(&grid, &data, &locs, s.truth(), pbox, &s.taper(g)?)
        })();
        for rep in 0..s.n_rep {
            let mut row = RowPrefix { s, n, rep }.cells(Some(g));
            match &result {
                Ok(gap) => row.extend([
                    fmt_f64(gap.per_replication[rep]),
                    grid.len().to_string(),
                    gap.skipped.to_string(),
                    "ok".into(),
                ]),
                Err(e) => row.extend([
                    fmt_f64(f64::NAN),
                    grid.len().to_string(),
                    "0".into(),
                    format!("error: {e}"),
                ]),
            }
            t.push(row)?;
        }
    }
    Ok(t)
}

fn run_theorem2(s: &Scenario) -> Result<Table> {
    let mut t = Table::new(&[
        "scenario",
        "seed",
        "n",
        "rep",
        "gamma",
        "isqerr_diff",
        "std_error",
        "n_mc",
        "pointwise_sqerr_diff",
        "status",
    ]);
    let p = s.truth().p();
    for (&m, &g) in s.ms.iter().zip(&s.gammas) {
        let n = s.design(m).n_points();
        let setup = (|| {
            let locs = s.locations(m, 0)?;
            let mc_sites = UniformDomainSampler::for_grid(m, s.spacing).sample(s.n_mc, derive_seed(s.seed, STREAM_MC, m as u64));
            let mut sites = vec![s.site.clone()];
            sites.extend(mc_sites);
            let sampler = s.sampler(&locs, sites.clone())?;
            let untapered = KrigingSystem::untapered(locs.clone(), s.truth().clone())?;
            let tapered = KrigingSystem::tapered(locs.clone(), s.truth().clone(), s.taper(g)?)?;
            let bank_u = SitePredictors::new(&untapered, &sites)?;
            let bank_t = SitePredictors::new(&tapered, &sites)?;
            Ok::<_, Error>((sampler, bank_u, bank_t))
        })();
        let rows: Vec<Vec<String>> = (0..s.n_rep)
            .into_par_iter()
            .map(|rep| {
                let mut row = RowPrefix { s, n, rep }.cells(Some(g));
                let cells = setup
                    .as_ref()
                    .map_err(|e| Error::Config(e.to_string()))
                    .and_then(|(sampler, bank_u, bank_t)| {
                        let joint = sampler.sample(&mut replication_rng(s.data_seed(m), rep as u64));
                        let (z, truth) = split_joint(&joint, n, bank_u.len(), p);
                        let (pu, pt) = (bank_u.predict(&z)?, bank_t.predict(&z)?);
                        // index 0 is the prediction site, the rest are the Monte Carlo sites
                        let diffs: Vec<f64> = (0..bank_u.len())
                            .map(|j| (pu[j] - truth[j]).powi(2) - (pt[j] - truth[j]).powi(2))
                            .collect();
                        Ok::<_, Error>((sqerr_difference_summary(&diffs[1..])?, diffs[0].abs()))
                    });
                match cells {
                    Ok((diff, pointwise)) => row.extend([
                        fmt_f64(diff.estimate),
                        fmt_f64(diff.std_error),
                        diff.n_mc.to_string(),
                        fmt_f64(pointwise),
                        "ok".into(),
                    ]),
                    Err(e) => {
                        row.extend(nan_cells(2));
                        row.push(s.n_mc.to_string());
                        row.push(fmt_f64(f64::NAN));
                        row.push(format!("error: {e}"));
                    }
                }
                row
            })
            .collect();
        for row in rows {
            t.push(row)?;
        }
    }
    Ok(t)
}

/// Paths written by [`write_outputs`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputPaths {
    pub table: PathBuf,
    pub summary: PathBuf,
    pub meta: PathBuf,
}

/// Writes `<name>.csv`, `<name>.summary.csv` and `<name>.meta.json` into
/// `dir`.
pub fn write_outputs(s: &Scenario, table: &Table, dir: &Path) -> Result<OutputPaths> {
    fs::create_dir_all(dir)?;
    let paths = OutputPaths {
        table: dir.join(format!("{}.csv", s.name)),
        summary: dir.join(format!("{}.summary.csv", s.name)),
        meta: dir.join(format!("{}.meta.json", s.name)),
    };
    table.write_csv(fs::File::create(&paths.table)?)?;
    let (groups, values) = s.summary_spec();
    let values: Vec<&str> = values.iter().map(String::as_str).collect();
    summarize(table, &groups, &values)?.write_csv(fs::File::create(&paths.summary)?)?;
    let meta = serde_json::json!({
        "scenario": s.name,
        "mode": s.mode.to_string(),
        "model": s.preset.to_string(),
        "taper_family": s.family.to_string(),
        "seed": s.seed,
        "n_rep": s.n_rep,
        "config_sha256": s.config_hash,
        "version": env!("CARGO_PKG_VERSION"),
        "rows": table.len(),
        "columns": table.columns,
    });
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&paths.meta, text + "\n")?;
    Ok(paths)
}
