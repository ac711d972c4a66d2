use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{param, EsdError, Result};

pub const DEFAULT_GRID_POINTS: usize = 4096;

/// Uniform mesh `lo, lo + h, …, hi` with `h = (hi − lo)/(n_points − 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, n_points: usize) -> Result<Self> {
        let spec = Self { lo, hi, n_points };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.hi > self.lo) {
            return Err(param("grid", format!("need lo < hi, got [{}, {}]", self.lo, self.hi)));
        }
        if self.n_points < 2 {
            return Err(param("grid", "need at least two points"));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }
}

/// Density values on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.n_points {
            return Err(EsdError::Shape(format!(
                "{} values on a {}-point grid",
                values.len(),
                spec.n_points
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = spec.points().into_iter().map(f).collect();
        Self::new(spec, values)
    }

    /// Riemann sum `h Σ_i p_i`.
    pub fn integral(&self) -> f64 {
        self.spec.step() * self.values.iter().sum::<f64>()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "x,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{:?},{:?}", self.spec.point(i), v)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `[min − 0.5, max + 0.5]` over the samples and the reference support, with
/// [`DEFAULT_GRID_POINTS`] points.
pub fn default_kl_grid(samples: &[f64], support: (f64, f64)) -> Result<GridSpec> {
    let lo = samples.iter().copied().fold(support.0, f64::min);
    let hi = samples.iter().copied().fold(support.1, f64::max);
    GridSpec::new(lo - 0.5, hi + 0.5, DEFAULT_GRID_POINTS)
}
