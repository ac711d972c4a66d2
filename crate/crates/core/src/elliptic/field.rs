use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, EsdError, Result};
use crate::rng::stream;

/// Coefficients `b_ml` of the log-permeability expansion, stored m-major:
/// `(1,1), (1,2), …, (1,L), (2,1), …`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermeabilityCoefficients {
    m: usize,
    l: usize,
    b: Vec<f64>,
}

impl PermeabilityCoefficients {
    pub fn new(m: usize, l: usize, b: Vec<f64>) -> Result<Self> {
        if m == 0 || l == 0 {
            return Err(param("M, L", "expansion orders must be at least 1"));
        }
        if b.len() != m * l {
            return Err(EsdError::Shape(format!("{} coefficients for M = {m}, L = {l}", b.len())));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(EsdError::Domain("coefficients must be finite".into()));
        }
        Ok(Self { m, l, b })
    }

    pub fn zeros(m: usize, l: usize) -> Result<Self> {
        Self::new(m, l, vec![0.0; m * l])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// `b_ml` with 1-based indices.
    pub fn get(&self, m: usize, l: usize) -> f64 {
        self.b[(m - 1) * self.l + (l - 1)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.b
    }

    /// Coefficients of the field reflected across the diagonal, `b'_lm = b_ml`.
    pub fn transposed(&self) -> Self {
        let mut b = vec![0.0; self.b.len()];
        for mi in 0..self.m {
            for li in 0..self.l {
                b[li * self.m + mi] = self.b[mi * self.l + li];
            }
        }
        Self { m: self.l, l: self.m, b }
    }
}

/// Independent draws with `b_ml ~ N(0, 1/(m + l))`; draw `i` uses stream `i`.
pub fn sample_coefficients(m: usize, l: usize, count: usize, seed: u64) -> Result<Vec<PermeabilityCoefficients>> {
    if m == 0 || l == 0 {
        return Err(param("M, L", "expansion orders must be at least 1"));
    }
    (0..count)
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let b = (1..=m)
                .flat_map(|mi| (1..=l).map(move |li| (mi, li)))
                .map(|(mi, li)| {
                    let z: f64 = rng.sample(StandardNormal);
                    z / ((mi + li) as f64).sqrt()
                })
                .collect();
            PermeabilityCoefficients::new(m, l, b)
        })
        .collect()
}

/// `k(x, y) = Σ_m Σ_l b_ml sin(2πmx) sin(2πly)`.
pub fn log_permeability(b: &PermeabilityCoefficients, x: f64, y: f64) -> f64 {
    let sy: Vec<f64> = (1..=b.l).map(|l| (2.0 * PI * l as f64 * y).sin()).collect();
    (1..=b.m)
        .map(|m| {
            let sx = (2.0 * PI * m as f64 * x).sin();
            sx * sy.iter().enumerate().map(|(li, s)| b.b[(m - 1) * b.l + li] * s).sum::<f64>()
        })
        .sum()
}
