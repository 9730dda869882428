//! Multivariate Matérn direct and cross covariances and the parameter space.
//!
//! Component pairs are addressed 0-based in code and 1-based in names
//! (`rho.12` is the range between components 0 and 1). The covariance between
//! components `k` and `l` at distance `r` is
//! `sigma_kl^2 * 2^(1-nu)/Gamma(nu) * (r/rho)^nu * K_nu(r/rho)`.

use std::fmt;
use std::str::FromStr;

use statrs::function::gamma::ln_gamma;

use crate::bessel::bessel_k_scaled;
use crate::error::{param_err, Error, Result};
use crate::geometry::LocationSet;
use crate::sparse::dense::{assemble_dense, min_eigenvalue, DEFAULT_DENSE_CAP};

/// Symmetric `p x p` matrix with full storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    p: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn filled(p: usize, value: f64) -> Self {
        Self {
            p,
            data: vec![value; p * p],
        }
    }

    /// Builds from the upper triangle in row order `(11, 12, .., 1p, 22, ..)`.
    pub fn from_upper(p: usize, upper: &[f64]) -> Result<Self> {
        if upper.len() != p * (p + 1) / 2 {
            return Err(Error::Dimension {
                expected: p * (p + 1) / 2,
                found: upper.len(),
            });
        }
        let mut m = Self::filled(p, 0.0);
        for ((k, l), &v) in upper_pairs(p).zip(upper) {
            m.set(k, l, v);
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.data[k * self.p + l]
    }

    pub fn set(&mut self, k: usize, l: usize, v: f64) {
        self.data[k * self.p + l] = v;
        self.data[l * self.p + k] = v;
    }

    pub fn upper(&self) -> Vec<f64> {
        upper_pairs(self.p).map(|(k, l)| self.get(k, l)).collect()
    }
}

/// Upper-triangle index pairs `(k, l)`, `k <= l`, in row order.
pub fn upper_pairs(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..p).flat_map(move |k| (k..p).map(move |l| (k, l)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Exponential,
    Whittle32,
    General { log_norm: f64 },
}

/// One direct or cross Matérn covariance function of distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaternKernel {
    variance: f64,
    range: f64,
    nu: f64,
    shape: Shape,
}

impl MaternKernel {
    pub fn new(sill: f64, range: f64, nu: f64) -> Self {
        let shape = if nu == 0.5 {
            Shape::Exponential
        } else if nu == 1.5 {
            Shape::Whittle32
        } else {
            Self::general_shape(nu)
        };
        Self {
            variance: sill * sill,
            range,
            nu,
            shape,
        }
    }

    fn general_shape(nu: f64) -> Shape {
        Shape::General {
            log_norm: (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu),
        }
    }

    /// Same kernel, always evaluated through the Bessel function.
    pub fn without_closed_form(mut self) -> Self {
        self.shape = Self::general_shape(self.nu);
        self
    }

    #[inline]
    pub fn eval(&self, dist: f64) -> f64 {
        let x = dist / self.range;
        if x == 0.0 {
            return self.variance;
        }
        let corr = match self.shape {
            Shape::Exponential => (-x).exp(),
            Shape::Whittle32 => (1.0 + x) * (-x).exp(),
            Shape::General { log_norm } => {
                let ks = bessel_k_scaled(self.nu, x);
                if ks == 0.0 || !ks.is_finite() {
                    return if ks == 0.0 { 0.0 } else { self.variance };
                }
                (log_norm + self.nu * x.ln() + ks.ln() - x).exp()
            }
        };
        self.variance * corr
    }
}

/// Parameters of a `p`-variate Matérn model: symmetric ranges, sills and
/// smoothness.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiMaternParams {
    pub rho: SymMatrix,
    pub sill: SymMatrix,
    pub nu: SymMatrix,
}

impl MultiMaternParams {
    pub fn new(rho: SymMatrix, sill: SymMatrix, nu: SymMatrix) -> Result<Self> {
        let params = Self { rho, sill, nu };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.rho.dim();
        if p == 0 || self.sill.dim() != p || self.nu.dim() != p {
            return param_err("range, sill and smoothness matrices must share a positive size");
        }
        for (k, l) in upper_pairs(p) {
            let (r, s, v) = (self.rho.get(k, l), self.sill.get(k, l), self.nu.get(k, l));
            if !(r > 0.0 && r.is_finite()) {
                return param_err(format!("rho.{}{} must be positive, got {r}", k + 1, l + 1));
            }
            if !(v > 0.0 && v.is_finite()) {
                return param_err(format!("nu.{}{} must be positive, got {v}", k + 1, l + 1));
            }
            if !s.is_finite() || (k == l && !(s > 0.0)) {
                return param_err(format!("sigma.{}{} is invalid: {s}", k + 1, l + 1));
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.rho.dim()
    }

    pub fn kernel(&self, k: usize, l: usize) -> MaternKernel {
        MaternKernel::new(self.sill.get(k, l), self.rho.get(k, l), self.nu.get(k, l))
    }

    /// Precomputed kernels for repeated evaluation.
    pub fn cross_covariance(&self) -> CrossCovariance {
        let p = self.p();
        let kernels = (0..p * p).map(|i| self.kernel(i / p, i % p)).collect();
        CrossCovariance { p, kernels }
    }

    /// Covariance between components `k` and `l` at Euclidean distance `dist`.
    pub fn cov_at(&self, dist: f64, k: usize, l: usize) -> f64 {
        self.kernel(k, l).eval(dist)
    }

    /// Flat `rho.kl` / `sigma.kl` / `nu.kl` entries.
    pub fn to_entries(&self) -> Vec<(String, f64)> {
        let p = self.p();
        let mut out = Vec::new();
        for (prefix, m) in [("rho", &self.rho), ("sigma", &self.sill), ("nu", &self.nu)] {
            for (k, l) in upper_pairs(p) {
                out.push((format!("{prefix}.{}{}", k + 1, l + 1), m.get(k, l)));
            }
        }
        out
    }

    /// Applies one `rho.kl` / `sigma.kl` / `nu.kl` entry. Returns `false` when
    /// the key is not a parameter key.
    pub fn apply_entry(&mut self, key: &str, value: f64) -> Result<bool> {
        let Some((prefix, idx)) = key.split_once('.') else {
            return Ok(false);
        };
        let target = match prefix {
            "rho" => &mut self.rho,
            "sigma" => &mut self.sill,
            "nu" => &mut self.nu,
            _ => return Ok(false),
        };
        let (k, l) = parse_pair(idx, target.dim())
            .ok_or_else(|| Error::Config(format!("bad component index in '{key}'")))?;
        target.set(k, l, value);
        Ok(true)
    }
}

fn parse_pair(idx: &str, p: usize) -> Option<(usize, usize)> {
    let digits: Vec<usize> = idx
        .chars()
        .map(|c| c.to_digit(10).map(|d| d as usize))
        .collect::<Option<_>>()?;
    match digits[..] {
        [k, l] if (1..=p).contains(&k) && (1..=p).contains(&l) => Some((k - 1, l - 1)),
        _ => None,
    }
}

/// Kernels of all component pairs.
#[derive(Clone, Debug)]
pub struct CrossCovariance {
    p: usize,
    kernels: Vec<MaternKernel>,
}

impl CrossCovariance {
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn eval(&self, dist: f64, k: usize, l: usize) -> f64 {
        self.kernels[k * self.p + l].eval(dist)
    }
}

/// Covariance `c_kl(h)` for a lag vector `h`.
pub fn matern_cov(h: &[f64], k: usize, l: usize, params: &MultiMaternParams) -> Result<f64> {
    if h.iter().any(|x| !x.is_finite()) {
        return param_err("lag vector must be finite");
    }
    let p = params.p();
    if k >= p || l >= p {
        return param_err(format!("component index out of range for p = {p}"));
    }
    let dist = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(params.cov_at(dist, k, l))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Range,
    Sill,
}

/// A free parameter: a range or sill of component pair `(k, l)`, `k <= l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamName {
    pub kind: ParamKind,
    pub k: usize,
    pub l: usize,
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.kind {
            ParamKind::Range => "rho",
            ParamKind::Sill => "sigma",
        };
        write!(f, "{prefix}.{}{}", self.k + 1, self.l + 1)
    }
}

/// The box of free parameters. Smoothness is never free.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBox {
    pub names: Vec<ParamName>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(names: Vec<ParamName>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            return param_err("a parameter box needs at least one free parameter");
        }
        if lower.len() != names.len() || upper.len() != names.len() {
            return Err(Error::Dimension {
                expected: names.len(),
                found: lower.len().min(upper.len()),
            });
        }
        for (i, name) in names.iter().enumerate() {
            if !(lower[i] < upper[i]) || !lower[i].is_finite() || !upper[i].is_finite() {
                return param_err(format!("empty or unbounded box for {name}"));
            }
        }
        Ok(Self {
            names,
            lower,
            upper,
        })
    }

    /// All ranges then all sills, each in upper-triangle order. Ranges lie in
    /// `[0.1, 50]`, direct sills in `[0.01, 10]`, cross sills in `[-5, 5]`.
    pub fn default_for(p: usize) -> Self {
        let mut names = Vec::new();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for (k, l) in upper_pairs(p) {
            names.push(ParamName {
                kind: ParamKind::Range,
                k,
                l,
            });
            lower.push(0.1);
            upper.push(50.0);
        }
        for (k, l) in upper_pairs(p) {
            names.push(ParamName {
                kind: ParamKind::Sill,
                k,
                l,
            });
            let (lo, hi) = if k == l { (0.01, 10.0) } else { (-5.0, 5.0) };
            lower.push(lo);
            upper.push(hi);
        }
        Self {
            names,
            lower,
            upper,
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| *t >= *lo && *t <= *hi)
    }

    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (lo, hi))| t.clamp(*lo, *hi))
            .collect()
    }

    pub fn pack(&self, params: &MultiMaternParams) -> Vec<f64> {
        self.names
            .iter()
            .map(|n| match n.kind {
                ParamKind::Range => params.rho.get(n.k, n.l),
                ParamKind::Sill => params.sill.get(n.k, n.l),
            })
            .collect()
    }

    /// Writes `theta` into a copy of `template` (which supplies the fixed
    /// smoothness and any non-free entries). With `strict`, values outside
    /// the box are rejected.
    pub fn unpack(
        &self,
        template: &MultiMaternParams,
        theta: &[f64],
        strict: bool,
    ) -> Result<MultiMaternParams> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: theta.len(),
            });
        }
        if strict && !self.contains(theta) {
            return param_err(format!("parameter vector {theta:?} lies outside the box"));
        }
        let mut out = template.clone();
        for (n, &v) in self.names.iter().zip(theta) {
            match n.kind {
                ParamKind::Range => out.rho.set(n.k, n.l, v),
                ParamKind::Sill => out.sill.set(n.k, n.l, v),
            }
        }
        out.validate()?;
        Ok(out)
    }
}

/// The two bivariate presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Exponential direct and cross covariances.
    A,
    /// Smoothness 3/2, 1, 1/2.
    B,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Preset::A),
            "B" | "b" => Ok(Preset::B),
            other => Err(Error::Config(format!("unknown model preset '{other}'"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::A => "A",
            Preset::B => "B",
        })
    }
}

/// True parameters and estimation box of a simulation model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub params_true: MultiMaternParams,
    pub param_box: ParamBox,
}

impl ModelConfig {
    pub fn new(d: usize, params_true: MultiMaternParams, param_box: ParamBox) -> Result<Self> {
        let theta0 = param_box.pack(&params_true);
        let interior = theta0
            .iter()
            .zip(param_box.lower.iter().zip(&param_box.upper))
            .all(|(t, (lo, hi))| t > lo && t < hi);
        if !interior {
            return param_err("true parameters must lie strictly inside the box");
        }
        Ok(Self {
            d,
            params_true,
            param_box,
        })
    }

    pub fn theta0(&self) -> Vec<f64> {
        self.param_box.pack(&self.params_true)
    }
}

pub fn preset_model(preset: Preset) -> ModelConfig {
    let (rho, sill, nu) = match preset {
        Preset::A => ([5.0, 3.0, 4.0], [1.0, 0.6, 1.0], [0.5, 0.5, 0.5]),
        Preset::B => ([3.0, 3.0, 4.0], [1.0, 0.7, 1.0], [1.5, 1.0, 0.5]),
    };
    let params = MultiMaternParams::new(
        SymMatrix::from_upper(2, &rho).expect("preset size"),
        SymMatrix::from_upper(2, &sill).expect("preset size"),
        SymMatrix::from_upper(2, &nu).expect("preset size"),
    )
    .expect("preset parameters are valid");
    ModelConfig::new(2, params, ParamBox::default_for(2)).expect("preset lies inside the box")
}

/// Smallest eigenvalue of the dense covariance matrix on `locs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Validity {
    pub valid: bool,
    pub min_eigenvalue: f64,
}

/// Assembles the dense `np x np` covariance and reports whether its smallest
/// eigenvalue reaches `tol`.
pub fn check_validity(params: &MultiMaternParams, locs: &LocationSet, tol: f64) -> Result<Validity> {
    check_validity_capped(params, locs, tol, DEFAULT_DENSE_CAP)
}

pub fn check_validity_capped(
    params: &MultiMaternParams,
    locs: &LocationSet,
    tol: f64,
    cap: usize,
) -> Result<Validity> {
    let sigma = assemble_dense(params, locs, None, cap)?;
    let min_eigenvalue = min_eigenvalue(&sigma)?;
    Ok(Validity {
        valid: min_eigenvalue >= tol,
        min_eigenvalue,
    })
}
