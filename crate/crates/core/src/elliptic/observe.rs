use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, EsdError, Result};
use crate::rng::{derive_seed, stream};

use super::fem::SolutionField;

/// Where the solution is observed and how noisy the readings are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    pub locations: Vec<[f64; 2]>,
    pub rel_noise_var: f64,
    pub seed: u64,
}

impl ObservationSpec {
    pub fn new(locations: Vec<[f64; 2]>, rel_noise_var: f64, seed: u64) -> Result<Self> {
        let spec = Self { locations, rel_noise_var, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// `count` locations drawn uniformly from `(0.1, 0.9)²`.
    pub fn random(count: usize, rel_noise_var: f64, seed: u64) -> Result<Self> {
        let mut rng = stream(derive_seed(seed, "pde/locations"), 0);
        let locations = (0..count)
            .map(|_| [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)])
            .collect();
        Self::new(locations, rel_noise_var, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.locations.is_empty() {
            return Err(param("locations", "need at least one observation location"));
        }
        if self.locations.iter().flatten().any(|c| !(*c > 0.0 && *c < 1.0)) {
            return Err(param("locations", "every location must lie strictly inside the unit square"));
        }
        if !(self.rel_noise_var >= 0.0 && self.rel_noise_var.is_finite()) {
            return Err(param("rel_noise_var", "must be a nonnegative real"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Relative noise `ε` for sample `index`, one entry per location.
    pub fn noise(&self, index: u64) -> Vec<f64> {
        let sd = self.rel_noise_var.sqrt();
        let mut rng = stream(derive_seed(self.seed, "pde/noise"), index);
        (0..self.len()).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
    }
}

/// Noise-free solution values at the observation locations.
pub fn observe_clean(u: &SolutionField, locations: &[[f64; 2]]) -> Result<Vec<f64>> {
    locations.iter().map(|[x, y]| u.interpolate(*x, *y)).collect()
}

/// `û_i = u(x_i) (1 + ε_i)` with the given relative noise.
pub fn apply_relative_noise(clean: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if clean.len() != noise.len() {
        return Err(EsdError::Shape(format!("{} values for {} noise draws", clean.len(), noise.len())));
    }
    Ok(clean.iter().zip(noise).map(|(u, e)| u * (1.0 + e)).collect())
}

/// Noisy observation of `u` using the noise stream of sample `index`.
pub fn observe_solution(u: &SolutionField, spec: &ObservationSpec, index: u64) -> Result<Vec<f64>> {
    apply_relative_noise(&observe_clean(u, &spec.locations)?, &spec.noise(index))
}
