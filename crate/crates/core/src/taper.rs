//! Compactly supported taper matrix functions.
//!
//! Every entry vanishes for scaled distance `r = |h| / gamma >= 1`, which is
//! what makes tapered covariance matrices sparse. `gamma = inf` disables
//! tapering (all entries are identically one).

use std::fmt;
use std::str::FromStr;

use crate::error::{param_err, Error, Result};

/// Univariate compactly supported shapes on `r in [0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaperShape {
    /// `(1-r)^4 (1+4r)`
    Wendland1,
    /// `(1-r)^6 (1+6r+35r^2/3)`
    Wendland2,
    /// `(1-r)^2 (1+r/2)`
    Spherical,
    /// `(1-r)^5 (1+5r+r^2)`
    Quintic,
    /// `(1-r)^5 (1+5r)`
    QuinticLinear,
}

impl TaperShape {
    #[inline]
    pub fn eval(self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - r;
        match self {
            TaperShape::Wendland1 => s.powi(4) * (1.0 + 4.0 * r),
            TaperShape::Wendland2 => s.powi(6) * (1.0 + 6.0 * r + 35.0 * r * r / 3.0),
            TaperShape::Spherical => s * s * (1.0 + 0.5 * r),
            TaperShape::Quintic => s.powi(5) * (1.0 + 5.0 * r + r * r),
            TaperShape::QuinticLinear => s.powi(5) * (1.0 + 5.0 * r),
        }
    }
}

/// One taper entry `scale * shape(r)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaperEntry {
    pub shape: TaperShape,
    pub scale: f64,
}

impl TaperEntry {
    pub fn unit(shape: TaperShape) -> Self {
        Self { shape, scale: 1.0 }
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        self.scale * self.shape.eval(r)
    }
}

/// Named taper families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaperFamily {
    /// (i)
    Wendland1,
    /// (ii)
    Wendland2,
    /// (iii)
    Spherical,
    /// (iv): bivariate, with cross entries scaled by `sqrt(6/7)`.
    MultivariateIv,
    /// User-supplied table.
    Custom,
}

impl FromStr for TaperFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "i" | "1" | "wendland1" => Ok(TaperFamily::Wendland1),
            "ii" | "2" | "wendland2" => Ok(TaperFamily::Wendland2),
            "iii" | "3" | "spherical" => Ok(TaperFamily::Spherical),
            "iv" | "4" | "multivariate_iv" => Ok(TaperFamily::MultivariateIv),
            "custom" => Ok(TaperFamily::Custom),
            other => Err(Error::Config(format!("unknown taper family '{other}'"))),
        }
    }
}

impl fmt::Display for TaperFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaperFamily::Wendland1 => "i",
            TaperFamily::Wendland2 => "ii",
            TaperFamily::Spherical => "iii",
            TaperFamily::MultivariateIv => "iv",
            TaperFamily::Custom => "custom",
        })
    }
}

/// A `p x p` taper matrix function with taper range `gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaperSpec {
    p: usize,
    family: TaperFamily,
    entries: Vec<TaperEntry>,
    gamma: f64,
}

impl TaperSpec {
    /// A named family for `p` components. Family (iv) exists only for `p = 2`.
    pub fn new(family: TaperFamily, p: usize, gamma: f64) -> Result<Self> {
        let uniform = |shape| vec![TaperEntry::unit(shape); p * p];
        let entries = match family {
            TaperFamily::Wendland1 => uniform(TaperShape::Wendland1),
            TaperFamily::Wendland2 => uniform(TaperShape::Wendland2),
            TaperFamily::Spherical => uniform(TaperShape::Spherical),
            TaperFamily::MultivariateIv => {
                if p != 2 {
                    return param_err("taper family (iv) is defined for two components only");
                }
                let cross = TaperEntry {
                    shape: TaperShape::Quintic,
                    scale: (6.0f64 / 7.0).sqrt(),
                };
                vec![
                    TaperEntry::unit(TaperShape::Quintic),
                    cross,
                    cross,
                    TaperEntry::unit(TaperShape::QuinticLinear),
                ]
            }
            TaperFamily::Custom => {
                return param_err("use TaperSpec::custom for user-supplied tables");
            }
        };
        Self::build(p, family, entries, gamma)
    }

    /// A user-supplied symmetric table, row-major `p x p`. Validity of the
    /// resulting taper matrix is the caller's responsibility.
    pub fn custom(p: usize, entries: Vec<TaperEntry>, gamma: f64) -> Result<Self> {
        if entries.len() != p * p {
            return Err(Error::Dimension {
                expected: p * p,
                found: entries.len(),
            });
        }
        for k in 0..p {
            for l in 0..k {
                if entries[k * p + l] != entries[l * p + k] {
                    return param_err("custom taper table must be symmetric");
                }
            }
        }
        if entries.iter().any(|e| !(e.scale.abs() <= 1.0)) {
            return param_err("taper entries must be bounded by one");
        }
        Self::build(p, TaperFamily::Custom, entries, gamma)
    }

    fn build(p: usize, family: TaperFamily, entries: Vec<TaperEntry>, gamma: f64) -> Result<Self> {
        if p == 0 {
            return param_err("taper needs at least one component");
        }
        if !(gamma > 0.0) {
            return param_err(format!("taper range must be positive, got {gamma}"));
        }
        Ok(Self {
            p,
            family,
            entries,
            gamma,
        })
    }

    /// Same family with another range.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::build(self.p, self.family, self.entries.clone(), gamma)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn family(&self) -> TaperFamily {
        self.family
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_tapered(&self) -> bool {
        self.gamma.is_finite()
    }

    /// Euclidean support radius of all entries; infinite when untapered.
    pub fn support_radius(&self) -> f64 {
        self.gamma
    }

    pub fn entry(&self, k: usize, l: usize) -> TaperEntry {
        self.entries[k * self.p + l]
    }

    /// `t_kl(dist / gamma)`.
    #[inline]
    pub fn value_at_distance(&self, dist: f64, k: usize, l: usize) -> f64 {
        if !self.gamma.is_finite() {
            return 1.0;
        }
        self.entries[k * self.p + l].eval(dist / self.gamma)
    }

    /// `t_kl(h / gamma)` for a lag vector.
    pub fn taper_value(&self, h: &[f64], k: usize, l: usize) -> Result<f64> {
        if h.iter().any(|x| !x.is_finite()) {
            return param_err("lag vector must be finite");
        }
        if k >= self.p || l >= self.p {
            return param_err(format!("component index out of range for p = {}", self.p));
        }
        let dist = h.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(self.value_at_distance(dist, k, l))
    }

    /// Checks `t_kl(0) = 1` and `|t_kl| <= 1` on a probe grid.
    pub fn validate_condition4(&self) -> Condition4Report {
        let mut offending = Vec::new();
        for k in 0..self.p {
            for l in k..self.p {
                let e = self.entry(k, l);
                let at_zero_ok = (e.eval(0.0) - 1.0).abs() <= 1e-12;
                let bounded = (0..=2000).all(|i| e.eval(i as f64 / 2000.0).abs() <= 1.0 + 1e-12);
                if !(at_zero_ok && bounded) {
                    offending.push((k, l));
                }
            }
        }
        Condition4Report {
            holds: offending.is_empty(),
            offending,
        }
    }

    /// Whether the unit-at-origin requirement is known to fail for this taper.
    pub fn violates_condition4(&self) -> bool {
        !self.validate_condition4().holds
    }
}

/// Outcome of [`TaperSpec::validate_condition4`]. Offending pairs are
/// 0-based `(k, l)` with `k <= l`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Condition4Report {
    pub holds: bool,
    pub offending: Vec<(usize, usize)>,
}

/// Parses a taper range; `inf` (any case) means no tapering.
pub fn parse_gamma(s: &str) -> Result<f64> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
        return Ok(f64::INFINITY);
    }
    let g: f64 = t
        .parse()
        .map_err(|_| Error::Config(format!("bad taper range '{t}'")))?;
    if !(g > 0.0) {
        return Err(Error::Config(format!("taper range must be positive, got {g}")));
    }
    Ok(g)
}

pub fn format_gamma(gamma: f64) -> String {
    if gamma.is_finite() {
        gamma.to_string()
    } else {
        "inf".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FAMILIES: [TaperFamily; 4] = [
        TaperFamily::Wendland1,
        TaperFamily::Wendland2,
        TaperFamily::Spherical,
        TaperFamily::MultivariateIv,
    ];

    #[test]
    fn family_iv_cross_entry_at_origin() {
        let t = TaperSpec::new(TaperFamily::MultivariateIv, 2, 4.0).unwrap();
        let v = t.taper_value(&[0.0, 0.0], 0, 1).unwrap();
        assert!((v - (6.0f64 / 7.0).sqrt()).abs() < 1e-15);
        assert!((v - 0.925_820_1).abs() < 1e-7);
    }

    #[test]
    fn zero_at_support_boundary() {
        for f in FAMILIES {
            let t = TaperSpec::new(f, 2, 4.0).unwrap();
            for (k, l) in [(0, 0), (0, 1), (1, 1)] {
                assert_eq!(t.taper_value(&[4.0, 0.0], k, l).unwrap(), 0.0);
                assert_eq!(t.taper_value(&[3.0, 3.0], k, l).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn wendland1_midpoint() {
        let t = TaperSpec::new(TaperFamily::Wendland1, 1, 2.0).unwrap();
        assert!((t.taper_value(&[1.0], 0, 0).unwrap() - 0.1875).abs() < 1e-15);
    }

    #[test]
    fn support_radius_reports_gamma() {
        for g in [4.0, 10.0, f64::INFINITY] {
            let t = TaperSpec::new(TaperFamily::Wendland2, 2, g).unwrap();
            assert_eq!(t.support_radius(), g);
        }
        let t = TaperSpec::new(TaperFamily::Spherical, 2, f64::INFINITY).unwrap();
        assert_eq!(t.taper_value(&[1e6, 0.0], 0, 1).unwrap(), 1.0);
        assert!(TaperSpec::new(TaperFamily::Spherical, 2, 0.0).is_err());
    }

    #[test]
    fn condition4_report() {
        for f in [TaperFamily::Wendland1, TaperFamily::Wendland2, TaperFamily::Spherical] {
            assert!(TaperSpec::new(f, 2, 5.0).unwrap().validate_condition4().holds);
        }
        let iv = TaperSpec::new(TaperFamily::MultivariateIv, 2, 5.0).unwrap();
        let rep = iv.validate_condition4();
        assert!(!rep.holds);
        assert_eq!(rep.offending, vec![(0, 1)]);
        assert!(iv.violates_condition4());
        assert!(TaperSpec::new(TaperFamily::MultivariateIv, 3, 5.0).is_err());
    }

    #[test]
    fn univariate_shapes_are_nonincreasing() {
        for shape in [
            TaperShape::Wendland1,
            TaperShape::Wendland2,
            TaperShape::Spherical,
            TaperShape::Quintic,
            TaperShape::QuinticLinear,
        ] {
            let mut prev = shape.eval(0.0);
            assert_eq!(prev, 1.0);
            for i in 1..=10_000 {
                let v = shape.eval(i as f64 / 10_000.0);
                assert!(v <= prev + 1e-15 && v >= 0.0);
                prev = v;
            }
        }
    }

    #[test]
    fn family_iv_is_positive_semidefinite_along_a_sweep() {
        let t = TaperSpec::new(TaperFamily::MultivariateIv, 2, 1.0).unwrap();
        for i in 0..=1000 {
            let h = [i as f64 / 1000.0, 0.0];
            let a = t.taper_value(&h, 0, 0).unwrap();
            let b = t.taper_value(&h, 0, 1).unwrap();
            let c = t.taper_value(&h, 1, 1).unwrap();
            // 2x2 symmetric PSD iff trace >= 0 and det >= 0
            assert!(a + c >= 0.0);
            assert!(a * c - b * b >= -1e-15, "r={}: det {}", h[0], a * c - b * b);
        }
    }

    #[test]
    fn symmetric_in_components_and_lag() {
        for f in FAMILIES {
            let t = TaperSpec::new(f, 2, 3.0).unwrap();
            for i in 0..100 {
                let h = [0.02 * i as f64, 0.01 * i as f64];
                let neg = [-h[0], -h[1]];
                assert_eq!(
                    t.taper_value(&h, 0, 1).unwrap(),
                    t.taper_value(&neg, 1, 0).unwrap()
                );
            }
        }
    }

    #[test]
    fn custom_tables() {
        let e = TaperEntry::unit(TaperShape::Wendland1);
        let half = TaperEntry {
            shape: TaperShape::Wendland1,
            scale: 0.5,
        };
        assert!(TaperSpec::custom(2, vec![e, half, half, e], 3.0).is_ok());
        assert!(TaperSpec::custom(2, vec![e, half, e, e], 3.0).is_err());
        assert!(TaperSpec::custom(2, vec![e; 3], 3.0).is_err());
    }

    #[test]
    fn gamma_parsing() {
        assert_eq!(parse_gamma("inf").unwrap(), f64::INFINITY);
        assert_eq!(parse_gamma(" Inf ").unwrap(), f64::INFINITY);
        assert_eq!(parse_gamma("4").unwrap(), 4.0);
        assert!(parse_gamma("-1").is_err());
        assert!(parse_gamma("x").is_err());
        assert_eq!(format_gamma(f64::INFINITY), "inf");
        assert_eq!(format_gamma(10.0), "10");
        assert_eq!("iii".parse::<TaperFamily>().unwrap(), TaperFamily::Spherical);
    }
}
