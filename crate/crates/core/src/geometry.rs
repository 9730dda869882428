//! Observation and prediction location sets.
//!
//! Points are stored flat (`n * dim` coordinates). Covariance and taper
//! arguments use the Euclidean norm; the minimum-separation guarantee of a
//! [`LocationSet`] is stated in the max-norm.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{param_err, Error, Result};

/// Norm used for distance queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    /// `max_i |x_i|`
    Max,
    Euclidean,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn max_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn distance(a: &[f64], b: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::Max => max_norm(a, b),
        Norm::Euclidean => euclidean(a, b),
    }
}

/// `n` distinct sites in `R^dim` with a guaranteed max-norm separation.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationSet {
    dim: usize,
    coords: Vec<f64>,
    min_sep: f64,
}

impl LocationSet {
    /// Builds a location set from explicit points.
    ///
    /// Fails if the set is empty, the points have inconsistent dimensions,
    /// two points coincide, or a pair is closer than `min_sep` in max-norm.
    pub fn new(points: &[Vec<f64>], min_sep: f64) -> Result<Self> {
        let Some(first) = points.first() else {
            return param_err("a location set needs at least one point");
        };
        let dim = first.len();
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, min_sep)
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>, min_sep: f64) -> Result<Self> {
        if dim == 0 {
            return param_err("dimension must be positive");
        }
        if coords.is_empty() || coords.len() % dim != 0 {
            return param_err(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return param_err("coordinates must be finite");
        }
        if !(min_sep >= 0.0) || !min_sep.is_finite() {
            return param_err("min_sep must be a finite nonnegative number");
        }
        let set = Self {
            dim,
            coords,
            min_sep,
        };
        set.check_separation()?;
        Ok(set)
    }

    // Distinctness is checked through the same cell index as the separation
    // bound; cells have side `min_sep` (or 1 when only distinctness matters).
    fn check_separation(&self) -> Result<()> {
        let cell = if self.min_sep > 0.0 { self.min_sep } else { 1.0 };
        let index = CellIndex::new(self, cell);
        for a in 0..self.len() {
            let pa = self.point(a);
            let mut bad = None;
            index.for_each_candidate(pa, cell, |b| {
                if b > a && bad.is_none() {
                    let d = max_norm(pa, self.point(b));
                    if d == 0.0 || d < self.min_sep {
                        bad = Some((b, d));
                    }
                }
            });
            if let Some((b, d)) = bad {
                return param_err(format!(
                    "points {a} and {b} are {d} apart in max-norm (required separation {})",
                    self.min_sep
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn min_sep(&self) -> f64 {
        self.min_sep
    }

    pub fn point(&self, a: usize) -> &[f64] {
        &self.coords[a * self.dim..(a + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Appends extra sites (e.g. prediction sites) and re-validates.
    pub fn with_extra_sites(&self, extra: &[Vec<f64>]) -> Result<Self> {
        let mut coords = self.coords.clone();
        for p in extra {
            if p.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    found: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(self.dim, coords, 0.0)
    }

    /// Writes the points as CSV with header `x1,...,xd`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((1..=self.dim).map(|i| format!("x{i}")))?;
        for p in self.points() {
            w.write_record(p.iter().map(|c| c.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads points written by [`LocationSet::write_csv`].
    pub fn read_csv<R: Read>(reader: R, min_sep: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let dim = headers.len();
        for (i, h) in headers.iter().enumerate() {
            if h.trim() != format!("x{}", i + 1) {
                return Err(Error::Config(format!(
                    "unexpected location column '{h}', expected x{}",
                    i + 1
                )));
            }
        }
        let mut coords = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for field in rec.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad coordinate '{field}'")))?;
                coords.push(v);
            }
        }
        Self::from_flat(dim, coords, min_sep)
    }
}

/// Uniform-cell spatial hash used for fixed-radius neighbor searches.
pub(crate) struct CellIndex {
    dim: usize,
    cell: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl CellIndex {
    pub(crate) fn new(locs: &LocationSet, cell: f64) -> Self {
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (a, p) in locs.points().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(a);
        }
        Self {
            dim: locs.dim(),
            cell,
            cells,
        }
    }

    fn key(p: &[f64], cell: f64) -> Vec<i64> {
        p.iter().map(|c| (c / cell).floor() as i64).collect()
    }

    /// Calls `f` for every indexed point in cells that may lie within
    /// `radius` of `center` (a superset of the true neighbors, unordered).
    pub(crate) fn for_each_candidate(&self, center: &[f64], radius: f64, mut f: impl FnMut(usize)) {
        let lo: Vec<i64> = center
            .iter()
            .map(|c| ((c - radius) / self.cell).floor() as i64)
            .collect();
        let hi: Vec<i64> = center
            .iter()
            .map(|c| ((c + radius) / self.cell).floor() as i64)
            .collect();
        let mut key = lo.clone();
        loop {
            if let Some(bucket) = self.cells.get(&key) {
                bucket.iter().for_each(|&b| f(b));
            }
            // odometer increment over the cell box
            let mut axis = 0;
            loop {
                if axis == self.dim {
                    return;
                }
                if key[axis] < hi[axis] {
                    key[axis] += 1;
                    break;
                }
                key[axis] = lo[axis];
                axis += 1;
            }
        }
    }
}

/// Perturbed-grid sampling design on `4m^2` squares in the plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridDesign {
    /// Half-grid count per axis.
    pub m: usize,
    /// Guaranteed minimum max-norm separation, in units of `spacing`.
    pub delta: f64,
    /// Distance between neighboring square centers.
    pub spacing: f64,
}

impl GridDesign {
    pub fn new(m: usize, delta: f64) -> Self {
        Self {
            m,
            delta,
            spacing: 1.0,
        }
    }

    pub fn n_points(&self) -> usize {
        4 * self.m * self.m
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return param_err("grid half-count m must be at least 1");
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return param_err(format!("delta must lie in (0, 1], got {}", self.delta));
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return param_err(format!("spacing must be positive, got {}", self.spacing));
        }
        Ok(())
    }

    /// Square centers `(±(r-1/2), ±(s-1/2)) * spacing`, row by row from the
    /// lower-left corner.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        let m = self.m as f64;
        let side = 2 * self.m;
        let mut out = Vec::with_capacity(side * side);
        for iy in 0..side {
            for ix in 0..side {
                out.push([
                    (ix as f64 - m + 0.5) * self.spacing,
                    (iy as f64 - m + 0.5) * self.spacing,
                ]);
            }
        }
        out
    }
}

/// Draws one point uniformly from each axis-aligned square of side
/// `(1 - delta) * spacing` around the grid centers. `delta = 1` returns the
/// centers themselves, independently of `seed`.
pub fn sample_perturbed_grid(design: &GridDesign, seed: u64) -> Result<LocationSet> {
    design.validate()?;
    let half = 0.5 * (1.0 - design.delta) * design.spacing;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(2 * design.n_points());
    for c in design.centers() {
        for axis in c {
            let jitter = if half > 0.0 {
                rng.random_range(-half..=half)
            } else {
                0.0
            };
            coords.push(axis + jitter);
        }
    }
    // Rounding in the jitter can shave a few ulps off the separation bound.
    let min_sep = design.delta * design.spacing * (1.0 - 1e-12);
    LocationSet::from_flat(2, coords, min_sep)
}

/// Exact minimum distance over all pairs.
pub fn min_pairwise_distance(locs: &LocationSet, norm: Norm) -> Result<f64> {
    let n = locs.len();
    if n < 2 {
        return param_err("minimum pairwise distance needs at least two points");
    }
    let mut best = f64::INFINITY;
    for a in 0..n {
        let pa = locs.point(a);
        for b in (a + 1)..n {
            best = best.min(distance(pa, locs.point(b), norm));
        }
    }
    Ok(best)
}

/// Indices `a` with `|x_a - center| < radius` (Euclidean), ascending.
/// `radius = f64::INFINITY` selects every point.
pub fn neighbors_within(locs: &LocationSet, center: &[f64], radius: f64) -> Result<Vec<usize>> {
    if center.len() != locs.dim() {
        return Err(Error::Dimension {
            expected: locs.dim(),
            found: center.len(),
        });
    }
    if !(radius > 0.0) {
        return param_err(format!("radius must be positive, got {radius}"));
    }
    Ok(locs
        .points()
        .enumerate()
        .filter(|(_, p)| euclidean(p, center) < radius)
        .map(|(a, _)| a)
        .collect())
}
