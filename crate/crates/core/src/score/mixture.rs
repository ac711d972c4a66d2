use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{EsdError, Result};
use crate::gmm_prior::{DenseGmmPrior, ObservationModel};
use crate::math::{log_sum_exp, LN_2PI};

use super::schedule::alpha_beta2;

/// Weighted Gaussian mixture with dense covariances.
///
/// Cholesky factors and normalizing constants are cached at construction.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    factors: Vec<Cholesky<f64, Dyn>>,
    log_norms: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let m = weights.len();
        if m == 0 || means.len() != m || covariances.len() != m {
            return Err(EsdError::Shape(format!(
                "mixture has {m} weights, {} means, {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(EsdError::Numeric("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !crate::math::sums_to_one(total, weights.len()) {
            return Err(EsdError::Numeric(format!("mixture weights sum to {total}")));
        }
        let d = means[0].len();
        let mut factors = Vec::with_capacity(m);
        let mut log_norms = Vec::with_capacity(m);
        for (k, (mu, cov)) in means.iter().zip(&covariances).enumerate() {
            if mu.len() != d || cov.nrows() != d || cov.ncols() != d {
                return Err(EsdError::Shape(format!("component {k} has inconsistent dimensions")));
            }
            let scale = cov.amax().max(f64::MIN_POSITIVE);
            if (cov - cov.transpose()).amax() > 1e-10 * scale {
                return Err(EsdError::Numeric(format!("covariance {k} is not symmetric")));
            }
            let chol = cov.clone().cholesky().ok_or(EsdError::Singular { component: k })?;
            let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
            log_norms.push(-0.5 * (d as f64 * LN_2PI + log_det));
            factors.push(chol);
        }
        Ok(Self {
            weights,
            means,
            covariances,
            factors,
            log_norms,
        })
    }

    /// Builds a mixture from unnormalized log-weights.
    pub fn from_log_weights(
        log_weights: &[f64],
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let lse = log_sum_exp(log_weights);
        if !lse.is_finite() {
            return Err(EsdError::Numeric("all mixture log-weights are -inf".into()));
        }
        let mut weights: Vec<f64> = log_weights.iter().map(|l| (l - lse).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(weights, means, covariances)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    fn component_log_terms(&self, x: &DVector<f64>) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let r = x - &self.means[k];
                let sol = self.factors[k].solve(&r);
                self.weights[k].ln() + self.log_norms[k] - 0.5 * r.dot(&sol)
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        log_sum_exp(&self.component_log_terms(&x))
    }

    /// Posterior component probabilities at `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        let mut terms = self.component_log_terms(&x);
        crate::math::softmax_in_place(&mut terms);
        terms
    }

    /// `∇ log p(x) = Σ_m r_m Σ_m⁻¹ (μ_m − x)`.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        self.log_density_and_score(x).1
    }

    pub fn log_density_and_score(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let xv = DVector::from_column_slice(x);
        let mut terms = self.component_log_terms(&xv);
        let lse = crate::math::softmax_in_place(&mut terms);
        let mut score = DVector::zeros(self.dim());
        for (k, r) in terms.iter().enumerate() {
            if *r == 0.0 {
                continue;
            }
            let diff = &self.means[k] - &xv;
            score += self.factors[k].solve(&diff) * *r;
        }
        (lse, score.as_slice().to_vec())
    }

    /// Mixture over the selected coordinates.
    pub fn marginal(&self, dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&i| i >= self.dim()) {
            return Err(EsdError::Shape(format!("invalid marginal dimensions {dims:?}")));
        }
        let means = self
            .means
            .iter()
            .map(|mu| DVector::from_iterator(dims.len(), dims.iter().map(|&i| mu[i])))
            .collect();
        let covs = self
            .covariances
            .iter()
            .map(|c| DMatrix::from_fn(dims.len(), dims.len(), |a, b| c[(dims[a], dims[b])]))
            .collect();
        Self::new(self.weights.clone(), means, covs)
    }

    /// Component-wise affine map `x ↦ A x + b`.
    pub fn affine(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        let means = self.means.iter().map(|mu| a * mu + b).collect();
        let covs = self
            .covariances
            .iter()
            .map(|c| {
                let m = a * c * a.transpose();
                (&m + m.transpose()) * 0.5
            })
            .collect();
        Self::new(self.weights.clone(), means, covs)
    }
}

/// JSON encoding of a [`GaussianMixture`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureJson {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl From<&GaussianMixture> for MixtureJson {
    fn from(mix: &GaussianMixture) -> Self {
        Self {
            weights: mix.weights.clone(),
            means: mix.means.iter().map(|m| m.as_slice().to_vec()).collect(),
            covariances: mix
                .covariances
                .iter()
                .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
        }
    }
}

impl TryFrom<MixtureJson> for GaussianMixture {
    type Error = EsdError;

    fn try_from(json: MixtureJson) -> Result<Self> {
        let means = json.means.iter().map(|m| DVector::from_column_slice(m)).collect();
        let mut covs = Vec::with_capacity(json.covariances.len());
        for rows in &json.covariances {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(EsdError::Shape("covariance rows must be square".into()));
            }
            covs.push(DMatrix::from_fn(n, n, |i, j| rows[i][j]));
        }
        GaussianMixture::new(json.weights, means, covs)
    }
}

impl Serialize for GaussianMixture {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MixtureJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianMixture {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let json = MixtureJson::deserialize(d)?;
        GaussianMixture::try_from(json).map_err(serde::de::Error::custom)
    }
}

/// Law of `α_t X + β_t ε` for `X` distributed as `mix`: means scale by `α_t`,
/// covariances become `β_t² I + α_t² Σ`.
pub fn propagate_mixture_to_time(mix: &GaussianMixture, t: f64) -> Result<GaussianMixture> {
    let (alpha, beta2) = alpha_beta2(t)?;
    let d = mix.dim();
    let means = mix.means.iter().map(|m| m * alpha).collect();
    let covs = mix
        .covariances
        .iter()
        .map(|c| c * (alpha * alpha) + DMatrix::identity(d, d) * beta2)
        .collect();
    GaussianMixture::new(mix.weights.clone(), means, covs)
}

/// Exact posterior of a Gaussian-mixture prior under a linear-Gaussian observation.
pub fn bayes_gmm_posterior(
    prior: &DenseGmmPrior,
    obs: &ObservationModel,
    y: &[f64],
) -> Result<GaussianMixture> {
    let mix = prior.mixture();
    if obs.d_x() != mix.dim() || y.len() != obs.d_y() {
        return Err(EsdError::Shape(format!(
            "prior dim {}, operator {}x{}, observation length {}",
            mix.dim(),
            obs.d_y(),
            obs.d_x(),
            y.len()
        )));
    }
    let h = obs.h();
    let noise = obs.noise_covariance();
    let y = DVector::from_column_slice(y);
    let dy = obs.d_y() as f64;
    let mut log_w = Vec::with_capacity(mix.len());
    let mut means = Vec::with_capacity(mix.len());
    let mut covs = Vec::with_capacity(mix.len());
    for k in 0..mix.len() {
        let sigma = &mix.covariances[k];
        let h_sigma = h * sigma;
        let innov_cov = &h_sigma * h.transpose() + &noise;
        let chol = innov_cov.cholesky().ok_or(EsdError::Singular { component: k })?;
        let resid = &y - h * &mix.means[k];
        let gain_t = chol.solve(&h_sigma);
        let mean = &mix.means[k] + gain_t.transpose() * &resid;
        let cov = sigma - h_sigma.transpose() * &gain_t;
        let cov = (&cov + cov.transpose()) * 0.5;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let quad = resid.dot(&chol.solve(&resid));
        log_w.push(mix.weights[k].ln() - 0.5 * (dy * LN_2PI + log_det + quad));
        means.push(mean);
        covs.push(cov);
    }
    GaussianMixture::from_log_weights(&log_w, means, covs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard(d: usize) -> GaussianMixture {
        GaussianMixture::new(vec![1.0], vec![DVector::zeros(d)], vec![DMatrix::identity(d, d)])
            .unwrap()
    }

    #[test]
    fn standard_normal_score_is_negative_identity() {
        let mix = standard(3);
        let x = [0.3, -1.2, 2.0];
        let s = mix.score(&x);
        for (a, b) in s.iter().zip(&x) {
            assert!((a + b).abs() < 1e-14);
        }
        let expected = -0.5 * (3.0 * LN_2PI + x.iter().map(|v| v * v).sum::<f64>());
        assert!((mix.log_density(&x) - expected).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_has_zero_score_at_midpoint() {
        let mix = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![-1.0, -2.0])],
            vec![DMatrix::identity(2, 2) * 0.3; 2],
        )
        .unwrap();
        let s = mix.score(&[0.0, 0.0]);
        assert!(s.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn propagation_endpoints() {
        let mix = GaussianMixture::new(
            vec![1.0],
            vec![DVector::from_vec(vec![2.0, -4.0])],
            vec![DMatrix::identity(2, 2)],
        )
        .unwrap();
        let half = propagate_mixture_to_time(&mix, 0.5).unwrap();
        assert_eq!(half.means()[0].as_slice(), &[1.0, -2.0]);
        assert!((half.covariances()[0][(0, 0)] - 0.75).abs() < 1e-15);
        let one = propagate_mixture_to_time(&mix, 1.0).unwrap();
        assert_eq!(one.means()[0].as_slice(), &[0.0, 0.0]);
        assert_eq!(one.covariances()[0], DMatrix::identity(2, 2));
        let zero = propagate_mixture_to_time(&mix, 0.0).unwrap();
        assert_eq!(zero.means()[0], mix.means()[0]);
        assert_eq!(zero.covariances()[0], mix.covariances()[0]);
    }

    #[test]
    fn scalar_kalman_update() {
        let prior = DenseGmmPrior::from_mixture(standard(2));
        let obs = ObservationModel::conditional(1, 1, 1.0).unwrap();
        let post = bayes_gmm_posterior(&prior, &obs, &[1.0]).unwrap();
        let (m, c) = (&post.means()[0], &post.covariances()[0]);
        assert!((m[1] - 0.5).abs() < 1e-15);
        assert!((c[(1, 1)] - 0.5).abs() < 1e-15);
        assert!(m[0].abs() < 1e-15);
        assert!((c[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let mix = GaussianMixture::new(
            vec![0.25, 0.75],
            vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![0.0, -1.0])],
            vec![
                DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
                DMatrix::identity(2, 2),
            ],
        )
        .unwrap();
        let text = serde_json::to_string(&mix).unwrap();
        let back: GaussianMixture = serde_json::from_str(&text).unwrap();
        assert_eq!(back.weights(), mix.weights());
        assert_eq!(back.covariances()[0], mix.covariances()[0]);
    }
}
