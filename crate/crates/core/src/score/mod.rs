//! Diffusion schedule and exact conditional scores.
//!
//! Two evaluation routes are provided: the block-spherical closed form used for
//! sampling and the dense-covariance route built from Cholesky solves, which
//! serves as an independent cross-check.

mod dense;
mod mixture;
mod schedule;
mod spherical;

pub use dense::{
    component_weights_general, exact_score_general, reverse_kernel_params, DenseScore,
    ReverseKernelParams,
};
pub use mixture::{bayes_gmm_posterior, propagate_mixture_to_time, GaussianMixture, MixtureJson};
pub use schedule::{alpha_beta2, schedule, NoiseSchedule, ScheduleValues};
pub use spherical::{
    component_weights_spherical, exact_score_spherical, spherical_scalars, ComponentWeights,
    SphericalScalars, SphericalScore, TRUNCATION_GAP,
};

use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{EsdError, Result};

/// Score of the diffused posterior `∇_z log p_{Z_t|Y}(z | y)`.
pub trait ConditionalScore: Sync {
    /// State dimension `d_x`.
    fn dim(&self) -> usize;

    /// Observation dimension `d_y`.
    fn obs_dim(&self) -> usize;

    fn score(&self, z: &[f64], y: &[f64], t: f64, out: &mut [f64]) -> Result<()>;

    /// Row-wise scores; implementations may override with a batched kernel.
    fn score_batch(
        &self,
        z: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        t: f64,
        mut out: ArrayViewMut2<'_, f64>,
    ) -> Result<()> {
        check_batch(self.dim(), self.obs_dim(), &z, &y, &out)?;
        let mut buf = vec![0.0; self.dim()];
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let zi = z.row(i).to_vec();
            let yi = y.row(i).to_vec();
            self.score(&zi, &yi, t, &mut buf)?;
            row.assign(&ndarray::ArrayView1::from(&buf[..]));
        }
        Ok(())
    }
}

pub(crate) fn check_batch(
    dx: usize,
    dy: usize,
    z: &ArrayView2<'_, f64>,
    y: &ArrayView2<'_, f64>,
    out: &ArrayViewMut2<'_, f64>,
) -> Result<()> {
    if z.ncols() != dx || out.ncols() != dx || y.ncols() != dy {
        return Err(EsdError::Shape(format!(
            "batch columns z={} y={} out={}, expected {dx}/{dy}/{dx}",
            z.ncols(),
            y.ncols(),
            out.ncols()
        )));
    }
    if z.nrows() != y.nrows() || z.nrows() != out.nrows() {
        return Err(EsdError::Shape("batch row counts differ".into()));
    }
    Ok(())
}
