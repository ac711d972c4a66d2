use ndarray::{linalg::general_mat_mul, s, Array2, ArrayView2, ArrayViewMut2};
use serde::Serialize;

use crate::error::{positive, EsdError, Result};
use crate::gmm_prior::SphericalGmmPrior;
use crate::math::{all_finite, exp_kernel, log_sum_exp};

use super::schedule::alpha_beta2;
use super::{check_batch, ConditionalScore};

/// Components whose log-weight falls this far below the running maximum are
/// skipped when truncation is enabled; their relative contribution is below
/// `e^{-45} ≈ 3e-20`.
pub const TRUNCATION_GAP: f64 = 45.0;

const CHUNK: usize = 512;

/// Per-block reverse-kernel coefficients at time `t`, with
/// `c = β_t² + α_t² σ²`: `s1 = β_t²/c`, `s2 = α_t σ²/c`, `s3 = σ² β_t²/c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SphericalScalars {
    pub alpha: f64,
    pub beta2: f64,
    pub cu: f64,
    pub cv: f64,
    pub s1u: f64,
    pub s2u: f64,
    pub s3u: f64,
    pub s1v: f64,
    pub s2v: f64,
    pub s3v: f64,
}

pub fn spherical_scalars(t: f64, sigma_u2: f64, sigma_v2: f64) -> Result<SphericalScalars> {
    positive("sigma_u2", sigma_u2)?;
    positive("sigma_v2", sigma_v2)?;
    let (alpha, beta2) = alpha_beta2(t)?;
    let cu = beta2 + alpha * alpha * sigma_u2;
    let cv = beta2 + alpha * alpha * sigma_v2;
    Ok(SphericalScalars {
        alpha,
        beta2,
        cu,
        cv,
        s1u: beta2 / cu,
        s2u: alpha * sigma_u2 / cu,
        s3u: sigma_u2 * beta2 / cu,
        s1v: beta2 / cv,
        s2v: alpha * sigma_v2 / cv,
        s3v: sigma_v2 * beta2 / cv,
    })
}

/// Posterior component probabilities together with their unnormalized logs.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentWeights {
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ComponentWeights {
    pub fn from_log_weights(log_weights: Vec<f64>) -> Result<Self> {
        let lse = log_sum_exp(&log_weights);
        if !lse.is_finite() {
            return Err(EsdError::Numeric(
                "component log-weights do not normalize".into(),
            ));
        }
        let weights = log_weights.iter().map(|l| (l - lse).exp()).collect();
        Ok(Self {
            log_weights,
            weights,
        })
    }
}

fn check_inputs(z: &[f64], y: &[f64], t: f64, prior: &SphericalGmmPrior, sigma_y2: f64) -> Result<()> {
    positive("sigma_y2", sigma_y2)?;
    if z.len() != prior.d_x() || y.len() != prior.d_v() {
        return Err(EsdError::Shape(format!(
            "state length {} and observation length {} for d_x={}, d_v={}",
            z.len(),
            y.len(),
            prior.d_x(),
            prior.d_v()
        )));
    }
    if !all_finite(z) || !all_finite(y) || !(0.0..1.0).contains(&t) {
        return Err(EsdError::Domain(format!(
            "score needs finite inputs and t in [0, 1), got t = {t}"
        )));
    }
    Ok(())
}

/// Log-weights `log π_k − ½‖z^u − α u_k‖²/c_u − ½‖z^v − α v_k‖²/c_v
/// − ½‖μ^v_{0|t,k} − y‖²/(σ_Y² + s3v)`, with `μ^v_{0|t,k} = s1v v_k + s2v z^v`.
pub fn component_weights_spherical(
    z: &[f64],
    y: &[f64],
    t: f64,
    prior: &SphericalGmmPrior,
    sigma_y2: f64,
) -> Result<ComponentWeights> {
    check_inputs(z, y, t, prior, sigma_y2)?;
    let sc = spherical_scalars(t, prior.sigma_u2(), prior.sigma_v2())?;
    ComponentWeights::from_log_weights(spherical_log_weights(z, y, &sc, prior, sigma_y2))
}

fn spherical_log_weights(
    z: &[f64],
    y: &[f64],
    sc: &SphericalScalars,
    prior: &SphericalGmmPrior,
    sigma_y2: f64,
) -> Vec<f64> {
    let du = prior.d_u();
    let (zu, zv) = z.split_at(du);
    let lik_var = sigma_y2 + sc.s3v;
    prior
        .means()
        .rows()
        .into_iter()
        .zip(prior.weights())
        .map(|(mu, pi)| {
            let mu = mu.as_slice().expect("prior means are contiguous");
            let (uk, vk) = mu.split_at(du);
            let qu: f64 = zu.iter().zip(uk).map(|(z, u)| (z - sc.alpha * u).powi(2)).sum();
            let qv: f64 = zv.iter().zip(vk).map(|(z, v)| (z - sc.alpha * v).powi(2)).sum();
            let ql: f64 = zv
                .iter()
                .zip(vk)
                .zip(y)
                .map(|((z, v), y)| (sc.s1v * v + sc.s2v * z - y).powi(2))
                .sum();
            pi.ln() - 0.5 * (qu / sc.cu + qv / sc.cv + ql / lik_var)
        })
        .collect()
}

/// Exact score of `p_{Z_t|Y}` for the block-spherical prior with `H = [0 | I]`.
pub fn exact_score_spherical(
    z: &[f64],
    y: &[f64],
    t: f64,
    prior: &SphericalGmmPrior,
    sigma_y2: f64,
) -> Result<Vec<f64>> {
    check_inputs(z, y, t, prior, sigma_y2)?;
    let sc = spherical_scalars(t, prior.sigma_u2(), prior.sigma_v2())?;
    let weights =
        ComponentWeights::from_log_weights(spherical_log_weights(z, y, &sc, prior, sigma_y2))?;
    let du = prior.d_u();
    let lik_var = sigma_y2 + sc.s3v;
    let mut score = vec![0.0; z.len()];
    for (mu, w) in prior.means().rows().into_iter().zip(&weights.weights) {
        if *w == 0.0 {
            continue;
        }
        for (j, (s, m)) in score.iter_mut().zip(mu.iter()).enumerate() {
            let prior_term = -(z[j] - sc.alpha * m) / if j < du { sc.cu } else { sc.cv };
            let lik_term = if j < du {
                0.0
            } else {
                let mean_0t = sc.s1v * m + sc.s2v * z[j];
                -sc.s2v * (mean_0t - y[j - du]) / lik_var
            };
            *s += w * (prior_term + lik_term);
        }
    }
    Ok(score)
}

/// Batched evaluator of the spherical score for sampling.
///
/// Log-weights are expanded as `μ̃_k · g(z, y, t)` with the augmented row
/// `μ̃_k = (μ_k, ‖u_k‖², ‖v_k‖², log π_k)`, so the cost per component is one
/// short dot product and one exponential. Low-dimensional problems run a fused
/// per-state loop over column-major data; wider ones use two matrix products
/// per chunk of components. Normalization is an online log-sum-exp over chunks.
#[derive(Debug, Clone)]
pub struct SphericalScore {
    augmented: Array2<f64>,
    columns: Vec<f64>,
    d_u: usize,
    d_v: usize,
    sigma_u2: f64,
    sigma_v2: f64,
    sigma_y2: f64,
    truncate: bool,
}

/// Widest augmented row handled by the fused per-state loop.
const NARROW_WIDTH: usize = 8;
const LANES: usize = 8;

impl SphericalScore {
    pub fn new(prior: &SphericalGmmPrior, sigma_y2: f64) -> Result<Self> {
        positive("sigma_y2", sigma_y2)?;
        let (du, d, k) = (prior.d_u(), prior.d_x(), prior.k());
        let mut augmented = Array2::zeros((k, d + 3));
        for (i, mu) in prior.means().rows().into_iter().enumerate() {
            let mut row = augmented.row_mut(i);
            row.slice_mut(s![..d]).assign(&mu);
            row[d] = mu.slice(s![..du]).iter().map(|x| x * x).sum();
            row[d + 1] = mu.slice(s![du..]).iter().map(|x| x * x).sum();
            row[d + 2] = prior.weights()[i].ln();
        }
        let columns = augmented.t().iter().copied().collect();
        Ok(Self {
            augmented,
            columns,
            d_u: du,
            d_v: prior.d_v(),
            sigma_u2: prior.sigma_u2(),
            sigma_v2: prior.sigma_v2(),
            sigma_y2,
            truncate: false,
        })
    }

    /// Enables skipping of components more than [`TRUNCATION_GAP`] below the maximum log-weight.
    pub fn with_truncation(mut self, truncate: bool) -> Self {
        self.truncate = truncate;
        self
    }

    pub fn truncation(&self) -> bool {
        self.truncate
    }

    pub fn sigma_y2(&self) -> f64 {
        self.sigma_y2
    }

    fn d_x(&self) -> usize {
        self.d_u + self.d_v
    }

    /// Coefficient rows `g` such that row `i` of `G μ̃ᵀ` holds the log-weights of state `i`
    /// up to a constant.
    fn coefficients(
        &self,
        z: &ArrayView2<'_, f64>,
        y: &ArrayView2<'_, f64>,
        sc: &SphericalScalars,
    ) -> Array2<f64> {
        let (b, du, d) = (z.nrows(), self.d_u, self.d_x());
        let lik_var = self.sigma_y2 + sc.s3v;
        let mut g = Array2::zeros((b, d + 3));
        for i in 0..b {
            for j in 0..du {
                g[[i, j]] = sc.alpha / sc.cu * z[[i, j]];
            }
            for j in 0..self.d_v {
                let zv = z[[i, du + j]];
                let r = sc.s2v * zv - y[[i, j]];
                g[[i, du + j]] = sc.alpha / sc.cv * zv - sc.s1v / lik_var * r;
            }
            g[[i, d]] = -0.5 * sc.alpha * sc.alpha / sc.cu;
            g[[i, d + 1]] = -0.5 * (sc.alpha * sc.alpha / sc.cv + sc.s1v * sc.s1v / lik_var);
            g[[i, d + 2]] = 1.0;
        }
        g
    }

    /// Posterior-weighted mean of the component means, `Σ_k p(k | z, y) μ_k`, row by row.
    fn weighted_means(&self, g: &Array2<f64>) -> Array2<f64> {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: AVX2 and FMA support were verified at runtime just above.
            return unsafe { self.weighted_means_avx2(g) };
        }
        self.weighted_means_impl::<false>(g)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn weighted_means_avx2(&self, g: &Array2<f64>) -> Array2<f64> {
        self.weighted_means_impl::<true>(g)
    }

    #[inline(always)]
    fn weighted_means_impl<const FMA: bool>(&self, g: &Array2<f64>) -> Array2<f64> {
        if g.ncols() <= NARROW_WIDTH {
            self.weighted_means_narrow::<FMA>(g)
        } else {
            self.weighted_means_wide::<FMA>(g)
        }
    }

    #[inline(always)]
    fn weighted_means_narrow<const FMA: bool>(&self, g: &Array2<f64>) -> Array2<f64> {
        let (k, width, d) = (self.augmented.nrows(), g.ncols(), self.d_x());
        let mut out = Array2::zeros((g.nrows(), d));
        let mut buf = vec![0.0; CHUNK.min(k)];
        for (gi, mut oi) in g.rows().into_iter().zip(out.rows_mut()) {
            let mut run = OnlineNormalizer::new(d);
            for k0 in (0..k).step_by(CHUNK) {
                let k1 = (k0 + CHUNK).min(k);
                let lw = &mut buf[..k1 - k0];
                let first = &self.columns[k0..k1];
                let g0 = gi[0];
                for (b, x) in lw.iter_mut().zip(first) {
                    *b = g0 * x;
                }
                for c in 1..width {
                    let gc = gi[c];
                    let col = &self.columns[c * k + k0..c * k + k1];
                    for (b, x) in lw.iter_mut().zip(col) {
                        *b = if FMA { gc.mul_add(*x, *b) } else { *b + gc * x };
                    }
                }
                let chunk_max = lane_max(lw);
                run.absorb_max(chunk_max);
                if self.truncate && chunk_max - run.max < -TRUNCATION_GAP {
                    continue;
                }
                run.sum += exp_pass::<FMA>(lw, run.max, self.truncate);
                for (j, a) in run.acc.iter_mut().enumerate() {
                    *a += lane_dot::<FMA>(lw, &self.columns[j * k + k0..j * k + k1]);
                }
            }
            run.finish(oi.as_slice_mut().expect("fresh array rows are contiguous"));
        }
        out
    }

    #[inline(always)]
    fn weighted_means_wide<const FMA: bool>(&self, g: &Array2<f64>) -> Array2<f64> {
        let (b, k, d) = (g.nrows(), self.augmented.nrows(), self.d_x());
        let mut runs: Vec<OnlineNormalizer> = (0..b).map(|_| OnlineNormalizer::new(0)).collect();
        let mut acc = Array2::<f64>::zeros((b, d));
        let mut buf = Array2::<f64>::zeros((b, CHUNK.min(k)));
        for k0 in (0..k).step_by(CHUNK) {
            let k1 = (k0 + CHUNK).min(k);
            let block = self.augmented.slice(s![k0..k1, ..]);
            let mut lw = buf.slice_mut(s![.., ..k1 - k0]);
            general_mat_mul(1.0, g, &block.t(), 0.0, &mut lw);
            for ((mut row, run), mut acc_row) in lw.rows_mut().into_iter().zip(&mut runs).zip(acc.rows_mut()) {
                let row = row.as_slice_mut().expect("buffer rows are contiguous");
                let rescale = run.absorb_max(lane_max(row));
                if rescale != 1.0 {
                    acc_row.mapv_inplace(|v| v * rescale);
                }
                run.sum += exp_pass::<FMA>(row, run.max, self.truncate);
            }
            general_mat_mul(1.0, &lw, &block.slice(s![.., ..d]), 1.0, &mut acc);
        }
        for (mut row, run) in acc.rows_mut().into_iter().zip(&runs) {
            let inv = 1.0 / run.sum;
            row.mapv_inplace(|v| v * inv);
        }
        acc
    }
}

/// Running maximum, rescaled sum of exponentials, and weighted accumulator.
struct OnlineNormalizer {
    max: f64,
    sum: f64,
    acc: Vec<f64>,
}

impl OnlineNormalizer {
    fn new(d: usize) -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            acc: vec![0.0; d],
        }
    }

    /// Raises the running maximum, rescaling what was accumulated so far; returns the factor.
    #[inline(always)]
    fn absorb_max(&mut self, chunk_max: f64) -> f64 {
        if chunk_max <= self.max {
            return 1.0;
        }
        let rescale = if self.sum > 0.0 { (self.max - chunk_max).exp() } else { 1.0 };
        self.sum *= rescale;
        self.acc.iter_mut().for_each(|a| *a *= rescale);
        self.max = chunk_max;
        rescale
    }

    fn finish(&self, out: &mut [f64]) {
        let inv = 1.0 / self.sum;
        for (o, a) in out.iter_mut().zip(&self.acc) {
            *o = a * inv;
        }
    }
}

#[inline(always)]
fn lane_max(x: &[f64]) -> f64 {
    let mut m = [f64::NEG_INFINITY; LANES];
    let chunks = x.chunks_exact(LANES);
    let rest = chunks.remainder();
    for c in chunks {
        for l in 0..LANES {
            if c[l] > m[l] {
                m[l] = c[l];
            }
        }
    }
    m.iter().chain(rest).copied().fold(f64::NEG_INFINITY, |a, b| if b > a { b } else { a })
}

#[inline(always)]
fn lane_dot<const FMA: bool>(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            s[l] = if FMA { x[l].mul_add(y[l], s[l]) } else { s[l] + x[l] * y[l] };
        }
    }
    s.iter().sum::<f64>() + tail
}

/// Replaces `x` by `exp(x − m)` (zeroing entries below the truncation gap when
/// requested) and returns the sum.
#[inline(always)]
fn exp_pass<const FMA: bool>(x: &mut [f64], m: f64, truncate: bool) -> f64 {
    let floor = if truncate { -TRUNCATION_GAP } else { f64::NEG_INFINITY };
    let mut s = [0.0; LANES];
    let mut chunks = x.chunks_exact_mut(LANES);
    for c in &mut chunks {
        for l in 0..LANES {
            let d = c[l] - m;
            let e = exp_kernel::<FMA>(d);
            let e = if d < floor { 0.0 } else { e };
            c[l] = e;
            s[l] += e;
        }
    }
    let mut tail = 0.0;
    for v in chunks.into_remainder() {
        let d = *v - m;
        *v = if d < floor { 0.0 } else { exp_kernel::<FMA>(d) };
        tail += *v;
    }
    s.iter().sum::<f64>() + tail
}

impl ConditionalScore for SphericalScore {
    fn dim(&self) -> usize {
        self.d_x()
    }

    fn obs_dim(&self) -> usize {
        self.d_v
    }

    fn score(&self, z: &[f64], y: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let d = self.d_x();
        let zv = ArrayView2::from_shape((1, z.len()), z)
            .map_err(|e| EsdError::Shape(e.to_string()))?;
        let yv = ArrayView2::from_shape((1, y.len()), y)
            .map_err(|e| EsdError::Shape(e.to_string()))?;
        if out.len() != d {
            return Err(EsdError::Shape(format!("output length {} for d_x={d}", out.len())));
        }
        let ov = ArrayViewMut2::from_shape((1, d), out).expect("length checked");
        self.score_batch(zv, yv, t, ov)
    }

    fn score_batch(
        &self,
        z: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        t: f64,
        mut out: ArrayViewMut2<'_, f64>,
    ) -> Result<()> {
        check_batch(self.d_x(), self.d_v, &z, &y, &out)?;
        if !(0.0..1.0).contains(&t) || z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(EsdError::Domain(format!(
                "score needs finite inputs and t in [0, 1), got t = {t}"
            )));
        }
        let sc = spherical_scalars(t, self.sigma_u2, self.sigma_v2)?;
        let mean = self.weighted_means(&self.coefficients(&z, &y, &sc));
        let lik_var = self.sigma_y2 + sc.s3v;
        let du = self.d_u;
        for i in 0..z.nrows() {
            for j in 0..du {
                out[[i, j]] = -(z[[i, j]] - sc.alpha * mean[[i, j]]) / sc.cu;
            }
            for j in du..self.d_x() {
                let zj = z[[i, j]];
                let mj = mean[[i, j]];
                let mean_0t = sc.s1v * mj + sc.s2v * zj;
                out[[i, j]] = -(zj - sc.alpha * mj) / sc.cv - sc.s2v * (mean_0t - y[[i, j - du]]) / lik_var;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm_prior::{build_spherical_prior, JointDataset};
    use ndarray::array;

    #[test]
    fn scalar_endpoints_and_midpoint() {
        let s = spherical_scalars(0.0, 0.3, 0.7).unwrap();
        assert_eq!((s.s1u, s.s2u, s.s3u), (0.0, 1.0, 0.0));
        assert_eq!((s.s1v, s.s2v, s.s3v), (0.0, 1.0, 0.0));
        let s = spherical_scalars(1.0, 0.3, 0.7).unwrap();
        assert_eq!((s.s1u, s.s2u, s.s3u), (1.0, 0.0, 0.3));
        assert_eq!((s.s1v, s.s2v, s.s3v), (1.0, 0.0, 0.7));
        let s = spherical_scalars(0.5, 0.1, 0.1).unwrap();
        assert!((s.cu - 0.525).abs() < 1e-15);
        assert!((s.s1u - 0.952_380_952_380_952_4).abs() < 1e-12);
        assert!((s.s2u - 0.095_238_095_238_095_24).abs() < 1e-12);
        assert!((s.s3u - 0.095_238_095_238_095_24).abs() < 1e-12);
    }

    #[test]
    fn single_component_weight_is_one() {
        let data = JointDataset::new(array![[0.4]], array![[-0.2]]).unwrap();
        let prior = build_spherical_prior(&data, 0.1, 0.2).unwrap();
        let w = component_weights_spherical(&[1.0, 2.0], &[0.5], 0.3, &prior, 0.01).unwrap();
        assert_eq!(w.weights, vec![1.0]);
    }

    #[test]
    fn centered_problem_has_zero_score() {
        let data = JointDataset::new(array![[0.0]], array![[0.0]]).unwrap();
        let prior = build_spherical_prior(&data, 1.0, 1.0).unwrap();
        for t in [0.0, 0.2, 0.9] {
            let s = exact_score_spherical(&[0.0, 0.0], &[0.0], t, &prior, 1.0).unwrap();
            assert_eq!(s, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn equidistant_components_share_weight() {
        let data = JointDataset::new(array![[1.0], [-1.0]], array![[0.5], [0.5]]).unwrap();
        let prior = build_spherical_prior(&data, 0.2, 0.2).unwrap();
        let w = component_weights_spherical(&[0.0, 0.3], &[0.5], 0.4, &prior, 0.1).unwrap();
        assert!((w.weights[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_endpoint_and_nan() {
        let data = JointDataset::new(array![[0.0]], array![[0.0]]).unwrap();
        let prior = build_spherical_prior(&data, 1.0, 1.0).unwrap();
        assert!(exact_score_spherical(&[0.0, 0.0], &[0.0], 1.0, &prior, 1.0).is_err());
        assert!(exact_score_spherical(&[f64::NAN, 0.0], &[0.0], 0.5, &prior, 1.0).is_err());
    }
}
