use nalgebra::{DMatrix, DVector};

use crate::error::{EsdError, Result};
use crate::gmm_prior::{DenseGmmPrior, ObservationModel};
use crate::math::{all_finite, LN_2PI};

use super::schedule::schedule;
use super::spherical::ComponentWeights;
use super::ConditionalScore;

/// Reverse-kernel quantities of one mixture component at `(z_t, y, t)`.
#[derive(Debug, Clone)]
pub struct ReverseKernelParams {
    /// `μ_{0|t,k} = μ_k + J_k (z − α μ_k)`.
    pub mu_0t: DVector<f64>,
    /// `Σ_{0|t,k} = Σ_k − α² Σ_k A_k⁻¹ Σ_k = β² Σ_k A_k⁻¹`.
    pub cov_0t: DMatrix<f64>,
    /// `J_k = α Σ_k A_k⁻¹`, the Jacobian of `μ_{0|t,k}` in `z`.
    pub jacobian: DMatrix<f64>,
    /// Kalman mean `Σ̂_k m_k` of `Z_0` given `(z_t, k, y)`.
    pub kalman_mean: DVector<f64>,
    /// `Σ̂_k = (Hᵀ Σ_Y⁻¹ H + Σ_{0|t,k}⁻¹)⁻¹`.
    pub weight_aux_cov: DMatrix<f64>,
    /// `m_k = Hᵀ Σ_Y⁻¹ y + Σ_{0|t,k}⁻¹ μ_{0|t,k}`.
    pub weight_aux_mean: DVector<f64>,
    /// Lower Cholesky factor of `Σ_{0|t,k}`.
    pub chol: DMatrix<f64>,
    /// `S_{Z_t|ξ}(z | k) = −A_k⁻¹ (z − α μ_k)`.
    pub prior_score: DVector<f64>,
    /// `Hᵀ (H Σ_{0|t,k} Hᵀ + Σ_Y)⁻¹ (y − H μ_{0|t,k})`.
    pub likelihood_score: DVector<f64>,
    /// Unnormalized log-weight, up to a constant shared by all components.
    pub log_weight: f64,
}

fn log_det(chol_l: &DMatrix<f64>) -> f64 {
    2.0 * chol_l.diagonal().iter().map(|x| x.ln()).sum::<f64>()
}

/// Computes every reverse-kernel quantity of component `k` with Cholesky solves.
pub fn reverse_kernel_params(
    prior: &DenseGmmPrior,
    k: usize,
    obs: &ObservationModel,
    z: &[f64],
    y: &[f64],
    t: f64,
) -> Result<ReverseKernelParams> {
    let mix = prior.mixture();
    let d = mix.dim();
    let sch = schedule(t)?;
    let (alpha, beta2) = (sch.alpha, sch.beta2);
    let mu = &mix.means()[k];
    let sigma = &mix.covariances()[k];
    let z = DVector::from_column_slice(z);
    let y = DVector::from_column_slice(y);
    let h = obs.h();
    let noise = obs.noise_covariance();
    let singular = || EsdError::Singular { component: k };

    let a = sigma * (alpha * alpha) + DMatrix::identity(d, d) * beta2;
    let chol_a = a.cholesky().ok_or_else(singular)?;
    let resid = &z - mu * alpha;
    let a_inv_resid = chol_a.solve(&resid);
    let prior_score = -&a_inv_resid;
    let log_forward = -0.5 * (d as f64 * LN_2PI + log_det(&chol_a.l()) + resid.dot(&a_inv_resid));

    // Σ and A commute, so Σ A⁻¹ = (A⁻¹ Σ)ᵀ is symmetric.
    let a_inv_sigma = chol_a.solve(sigma);
    let sigma_a_inv = symmetrize(&a_inv_sigma.transpose());
    let jacobian = &sigma_a_inv * alpha;
    let mu_0t = mu + &jacobian * &resid;
    let cov_0t = &sigma_a_inv * beta2;

    let chol_0t = cov_0t.clone().cholesky().ok_or_else(singular)?;
    let chol_y = noise.clone().cholesky().ok_or_else(singular)?;
    let ht_noise_inv_h = h.transpose() * chol_y.solve(h);
    let cov_0t_inv = chol_0t.solve(&DMatrix::identity(d, d));
    let precision = symmetrize(&(ht_noise_inv_h + cov_0t_inv));
    let chol_p = precision.cholesky().ok_or_else(singular)?;
    let weight_aux_mean = h.transpose() * chol_y.solve(&y) + chol_0t.solve(&mu_0t);
    let kalman_mean = chol_p.solve(&weight_aux_mean);
    let weight_aux_cov = chol_p.inverse();

    let quad = mu_0t.dot(&chol_0t.solve(&mu_0t)) - weight_aux_mean.dot(&kalman_mean);
    let log_weight = mix.weights()[k].ln() + log_forward - 0.5 * log_det(&chol_0t.l())
        - 0.5 * log_det(&chol_p.l())
        - 0.5 * quad;

    let innov = symmetrize(&(h * &cov_0t * h.transpose() + &noise));
    let chol_innov = innov.cholesky().ok_or_else(singular)?;
    let likelihood_score = h.transpose() * chol_innov.solve(&(&y - h * &mu_0t));

    Ok(ReverseKernelParams {
        mu_0t,
        cov_0t,
        jacobian,
        kalman_mean,
        weight_aux_cov,
        weight_aux_mean,
        chol: chol_0t.l(),
        prior_score,
        likelihood_score,
        log_weight,
    })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check(z: &[f64], y: &[f64], t: f64, prior: &DenseGmmPrior, obs: &ObservationModel) -> Result<()> {
    if z.len() != prior.d_x() || obs.d_x() != prior.d_x() || y.len() != obs.d_y() {
        return Err(EsdError::Shape(format!(
            "state {} / observation {} for prior d_x={} and operator {}x{}",
            z.len(),
            y.len(),
            prior.d_x(),
            obs.d_y(),
            obs.d_x()
        )));
    }
    if !all_finite(z) || !all_finite(y) || !(0.0..1.0).contains(&t) {
        return Err(EsdError::Domain(format!(
            "score needs finite inputs and t in [0, 1), got t = {t}"
        )));
    }
    Ok(())
}

fn all_params(
    z: &[f64],
    y: &[f64],
    t: f64,
    prior: &DenseGmmPrior,
    obs: &ObservationModel,
) -> Result<(Vec<ReverseKernelParams>, ComponentWeights)> {
    check(z, y, t, prior, obs)?;
    let params = (0..prior.k())
        .map(|k| reverse_kernel_params(prior, k, obs, z, y, t))
        .collect::<Result<Vec<_>>>()?;
    let weights = ComponentWeights::from_log_weights(params.iter().map(|p| p.log_weight).collect())?;
    Ok((params, weights))
}

/// Component probabilities `p(k | z_t, y)` from the dense reverse-kernel algebra.
pub fn component_weights_general(
    z: &[f64],
    y: &[f64],
    t: f64,
    prior: &DenseGmmPrior,
    obs: &ObservationModel,
) -> Result<ComponentWeights> {
    Ok(all_params(z, y, t, prior, obs)?.1)
}

/// `Σ_k p(k | z_t, y) (S_{Z_t|ξ}(z|k) + J_k S_{Y|Z_0})` for a dense prior and general `H`.
pub fn exact_score_general(
    z: &[f64],
    y: &[f64],
    t: f64,
    prior: &DenseGmmPrior,
    obs: &ObservationModel,
) -> Result<Vec<f64>> {
    let (params, weights) = all_params(z, y, t, prior, obs)?;
    let mut score = DVector::zeros(prior.d_x());
    for (p, w) in params.iter().zip(&weights.weights) {
        score += (&p.prior_score + &p.jacobian * &p.likelihood_score) * *w;
    }
    Ok(score.as_slice().to_vec())
}

/// [`ConditionalScore`] backed by [`exact_score_general`].
#[derive(Debug, Clone)]
pub struct DenseScore {
    prior: DenseGmmPrior,
    obs: ObservationModel,
}

impl DenseScore {
    pub fn new(prior: DenseGmmPrior, obs: ObservationModel) -> Result<Self> {
        if prior.d_x() != obs.d_x() {
            return Err(EsdError::Shape(format!(
                "prior dimension {} but operator acts on {}",
                prior.d_x(),
                obs.d_x()
            )));
        }
        Ok(Self { prior, obs })
    }
}

impl ConditionalScore for DenseScore {
    fn dim(&self) -> usize {
        self.prior.d_x()
    }

    fn obs_dim(&self) -> usize {
        self.obs.d_y()
    }

    fn score(&self, z: &[f64], y: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let s = exact_score_general(z, y, t, &self.prior, &self.obs)?;
        if out.len() != s.len() {
            return Err(EsdError::Shape("output buffer length".into()));
        }
        out.copy_from_slice(&s);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm_prior::ObservationNoise;
    use crate::score::GaussianMixture;

    fn single(d: usize) -> DenseGmmPrior {
        DenseGmmPrior::new(
            vec![1.0],
            vec![DVector::from_fn(d, |i, _| 0.3 * i as f64 - 0.2)],
            vec![DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.2 })],
        )
        .unwrap()
    }

    #[test]
    fn t_zero_is_singular() {
        let prior = single(2);
        let obs = ObservationModel::conditional(1, 1, 0.1).unwrap();
        match exact_score_general(&[0.1, 0.2], &[0.0], 0.0, &prior, &obs) {
            Err(EsdError::Singular { component }) => assert_eq!(component, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vanishing_likelihood_gives_prior_score() {
        let prior = single(3);
        let obs = ObservationModel::new(
            DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
            ObservationNoise::Spherical(1e6),
        )
        .unwrap();
        let z = [0.4, -0.3, 1.1];
        let t = 0.4;
        let s = exact_score_general(&z, &[2.0], t, &prior, &obs).unwrap();
        let p = reverse_kernel_params(&prior, 0, &obs, &z, &[2.0], t).unwrap();
        for (a, b) in s.iter().zip(p.prior_score.iter()) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn kalman_mean_matches_innovation_form() {
        let prior = single(3);
        let h = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, -0.3, 1.0]);
        let obs = ObservationModel::new(h.clone(), ObservationNoise::Spherical(0.2)).unwrap();
        let (z, y) = ([0.2, 0.7, -0.4], [0.5, -1.0]);
        let p = reverse_kernel_params(&prior, 0, &obs, &z, &y, 0.6).unwrap();
        let expected = &p.mu_0t + &p.cov_0t * &p.likelihood_score;
        assert!((&p.kalman_mean - expected).amax() < 1e-12);
        let mix = GaussianMixture::new(vec![1.0], vec![p.mu_0t.clone()], vec![p.cov_0t.clone()]);
        assert!(mix.is_ok());
    }
}
