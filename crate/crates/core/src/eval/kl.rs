use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EsdError, Result};

use super::grid::{default_kl_grid, DensityGrid};
use super::kde::{kde_density, Bandwidth};
use super::reference::Mixture1d;

/// Lower clamp applied to the approximating density before taking logs.
pub const KL_FLOOR: f64 = 1e-12;

/// `h Σ p_ref log(p_ref / max(p_other, KL_FLOOR))`, clamped at zero.
pub fn kl_riemann(p_ref: &DensityGrid, p_other: &DensityGrid) -> Result<f64> {
    if p_ref.spec != p_other.spec {
        return Err(EsdError::Shape("KL densities live on different grids".into()));
    }
    let sum: f64 = p_ref
        .values
        .iter()
        .zip(&p_other.values)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q.max(KL_FLOOR)).ln())
        .sum();
    Ok((sum * p_ref.spec.step()).max(0.0))
}

/// KL from an analytic 1-D mixture to the KDE of `samples` on the default grid.
pub fn kl_samples_vs_mixture(samples: &[f64], reference: &Mixture1d, bandwidth: Bandwidth) -> Result<f64> {
    let grid = default_kl_grid(samples, reference.support())?;
    let p_ref = reference.density_grid(&grid)?;
    let p_kde = kde_density(samples, &grid, bandwidth)?;
    kl_riemann(&p_ref, &p_kde)
}

/// One row of the bimodal ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    pub case: String,
    pub k: usize,
    pub sigma_u2: f64,
    pub sigma_y2: f64,
    pub dtau: f64,
    pub e_exact: f64,
    pub e_gmm: f64,
    pub e_bgmm: f64,
}

pub fn write_kl_reports_csv(path: &Path, rows: &[KlReport]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "case,K,sigma_u2,sigma_y2,dtau,e_exact,e_gmm,e_bgmm")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:?},{:?},{:?},{:e},{:e},{:e}",
            r.case, r.k, r.sigma_u2, r.sigma_y2, r.dtau, r.e_exact, r.e_gmm, r.e_bgmm
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::GridSpec;
    use crate::math::normal_pdf;

    #[test]
    fn gaussian_shift_and_scale() {
        let grid = GridSpec::new(-8.0, 9.0, 10_000).unwrap();
        let p = DensityGrid::from_fn(grid, |x| normal_pdf(x, 0.0, 1.0)).unwrap();
        let q = DensityGrid::from_fn(grid, |x| normal_pdf(x, 1.0, 1.0)).unwrap();
        assert!((kl_riemann(&p, &q).unwrap() - 0.5).abs() < 1e-3);
        let q = DensityGrid::from_fn(grid, |x| normal_pdf(x, 0.0, 4.0)).unwrap();
        let expected = 0.5 * (4f64.ln() + 0.25 - 1.0);
        assert!((kl_riemann(&p, &q).unwrap() - expected).abs() < 1e-3);
        assert!((expected - 0.3181).abs() < 1e-4);
        assert_eq!(kl_riemann(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_grids_fail() {
        let a = DensityGrid::new(GridSpec::new(0.0, 1.0, 3).unwrap(), vec![1.0; 3]).unwrap();
        let b = DensityGrid::new(GridSpec::new(0.0, 2.0, 3).unwrap(), vec![1.0; 3]).unwrap();
        assert!(kl_riemann(&a, &b).is_err());
    }
}
