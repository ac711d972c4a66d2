//! Forward-Euler integration of the reverse-time probability-flow ODE and
//! labeled-dataset generation for amortized training.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, EsdError, Result};
use crate::gmm_prior::{read_f64_block, write_f64_block, SphericalGmmPrior};
use crate::rng::{derive_seed, fill_standard_normal, stream};
use crate::score::{ConditionalScore, NoiseSchedule, SphericalScore};

const LABELED_MAGIC: u32 = u32::from_le_bytes(*b"ESDL");

/// Step count, seed, and batching of the reverse integrator.
///
/// The grid is `t_i = 1 − i/n_steps`, `i = 1..n_steps`; the Gaussian initial
/// state sits at `t_1` and `n_steps − 1` Euler steps reach `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReverseOdeConfig {
    pub n_steps: usize,
    pub seed: u64,
    /// States advanced together through one batched score call.
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Skip components far below the dominant log-weight (see [`crate::score::TRUNCATION_GAP`]).
    #[serde(default)]
    pub truncate: bool,
}

fn default_batch() -> usize {
    64
}

impl Default for ReverseOdeConfig {
    fn default() -> Self {
        Self {
            n_steps: 1000,
            seed: 0,
            batch: default_batch(),
            truncate: false,
        }
    }
}

impl ReverseOdeConfig {
    pub fn new(n_steps: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            n_steps,
            seed,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 2 {
            return Err(param("n_steps", format!("need at least 2, got {}", self.n_steps)));
        }
        if self.batch == 0 {
            return Err(param("batch", "must be positive"));
        }
        Ok(())
    }

    pub fn dtau(&self) -> f64 {
        1.0 / self.n_steps as f64
    }

    /// Time of grid point `i` (`t_0 = 1`, `t_{n_steps} = 0`).
    pub fn time(&self, i: usize) -> f64 {
        (self.n_steps - i) as f64 / self.n_steps as f64
    }
}

/// Integrates one state from `t = 1 − Δτ` to `t = 0`.
pub fn integrate_reverse(
    z_init: &[f64],
    y: &[f64],
    cfg: &ReverseOdeConfig,
    score: &dyn ConditionalScore,
) -> Result<Vec<f64>> {
    let mut z = Array2::from_shape_vec((1, z_init.len()), z_init.to_vec())
        .map_err(|e| EsdError::Shape(e.to_string()))?;
    let y = ArrayView2::from_shape((1, y.len()), y).map_err(|e| EsdError::Shape(e.to_string()))?;
    integrate_reverse_batch(&mut z, y, cfg, score)?;
    Ok(z.into_raw_vec_and_offset().0)
}

/// Integrates the rows of `z` in place; row `i` is conditioned on row `i` of `y`.
pub fn integrate_reverse_batch(
    z: &mut Array2<f64>,
    y: ArrayView2<'_, f64>,
    cfg: &ReverseOdeConfig,
    score: &dyn ConditionalScore,
) -> Result<()> {
    cfg.validate()?;
    if z.ncols() != score.dim() || y.ncols() != score.obs_dim() || y.nrows() != z.nrows() {
        return Err(EsdError::Shape(format!(
            "states {:?} and observations {:?} for score dims {}/{}",
            z.dim(),
            y.dim(),
            score.dim(),
            score.obs_dim()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(EsdError::Domain("initial state is not finite".into()));
    }
    let dtau = cfg.dtau();
    let mut s = Array2::zeros(z.dim());
    for step in 1..cfg.n_steps {
        let t = cfg.time(step);
        score.score_batch(z.view(), y, t, s.view_mut())?;
        let b = NoiseSchedule::drift(t);
        let half_sigma2 = 0.5 * NoiseSchedule::diffusion2(t);
        let mut finite = true;
        Zip::from(&mut *z).and(&s).for_each(|zi, si| {
            *zi -= dtau * (b * *zi - half_sigma2 * si);
            finite &= zi.is_finite();
        });
        if !finite {
            return Err(EsdError::Divergence { step });
        }
    }
    Ok(())
}

/// Standard-normal initial states; row `i` comes from stream `i` of `seed`.
pub fn initial_states(seed: u64, n: usize, d: usize) -> Array2<f64> {
    let mut z = Array2::zeros((n, d));
    for (i, mut row) in z.rows_mut().into_iter().enumerate() {
        let mut rng = stream(seed, i as u64);
        fill_standard_normal(&mut rng, row.as_slice_mut().expect("standard layout"));
    }
    z
}

/// Integrates many states in parallel, batch by batch.
///
/// Batches are fixed slices of consecutive rows, so the output does not depend
/// on the number of worker threads.
pub fn integrate_many(
    z0: &Array2<f64>,
    y: ArrayView2<'_, f64>,
    cfg: &ReverseOdeConfig,
    score: &dyn ConditionalScore,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    let n = z0.nrows();
    let starts: Vec<usize> = (0..n).step_by(cfg.batch).collect();
    let parts = starts
        .par_iter()
        .map(|&start| {
            let end = (start + cfg.batch).min(n);
            let mut z = z0.slice(s![start..end, ..]).to_owned();
            integrate_reverse_batch(&mut z, y.slice(s![start..end, ..]), cfg, score)?;
            Ok(z)
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    if views.is_empty() {
        return Ok(Array2::zeros((0, z0.ncols())));
    }
    Ok(ndarray::concatenate(Axis(0), &views).expect("batches share column count"))
}

/// Posterior draws: the `U` block plus the full `t = 0` states.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub u: Array2<f64>,
    pub states: Array2<f64>,
}

/// Seed of the Gaussian noise stream under a top-level sampler seed.
pub fn noise_seed(seed: u64) -> u64 {
    derive_seed(seed, "reverse-ode/noise")
}

/// Maps `n` standard-normal draws to samples of `p(u | y)` under the spherical prior.
pub fn sample_posterior(
    y: &[f64],
    n: usize,
    prior: &SphericalGmmPrior,
    sigma_y2: f64,
    cfg: &ReverseOdeConfig,
) -> Result<PosteriorSamples> {
    let score = SphericalScore::new(prior, sigma_y2)?.with_truncation(cfg.truncate);
    sample_posterior_with(&score, prior.d_u(), y, n, cfg)
}

/// [`sample_posterior`] for any score evaluator whose first `d_u` coordinates form the `U` block.
pub fn sample_posterior_with(
    score: &dyn ConditionalScore,
    d_u: usize,
    y: &[f64],
    n: usize,
    cfg: &ReverseOdeConfig,
) -> Result<PosteriorSamples> {
    if y.len() != score.obs_dim() {
        return Err(EsdError::Shape(format!(
            "observation length {} but score expects {}",
            y.len(),
            score.obs_dim()
        )));
    }
    let z0 = initial_states(noise_seed(cfg.seed), n, score.dim());
    let ys = Array2::from_shape_fn((n, y.len()), |(_, j)| y[j]);
    let states = integrate_many(&z0, ys.view(), cfg, score)?;
    Ok(PosteriorSamples {
        u: states.slice(s![.., ..d_u]).to_owned(),
        states,
    })
}

/// Supplies the conditioning value of labeled row `j`.
pub trait ObservationSource: Sync {
    fn d_v(&self) -> usize;

    /// Deterministic draw for row `j` under `seed`.
    fn draw(&self, j: usize, seed: u64) -> Vec<f64>;
}

/// Resamples training `v` rows and adds `N(0, σ_Y² I)` noise, mimicking draws from `p_Y`.
#[derive(Debug, Clone)]
pub struct ResampledObservations {
    v: Array2<f64>,
    sigma_y2: f64,
}

impl ResampledObservations {
    pub fn new(v: Array2<f64>, sigma_y2: f64) -> Result<Self> {
        crate::error::positive("sigma_y2", sigma_y2)?;
        if v.nrows() == 0 {
            return Err(EsdError::InsufficientData("no v rows to resample".into()));
        }
        Ok(Self { v, sigma_y2 })
    }
}

impl ObservationSource for ResampledObservations {
    fn d_v(&self) -> usize {
        self.v.ncols()
    }

    fn draw(&self, j: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, j as u64);
        let row = rng.random_range(0..self.v.nrows());
        let sd = self.sigma_y2.sqrt();
        let mut noise = vec![0.0; self.d_v()];
        fill_standard_normal(&mut rng, &mut noise);
        self.v.row(row).iter().zip(&noise).map(|(v, e)| v + sd * e).collect()
    }
}

/// Cycles through a user-supplied list of conditioning values.
#[derive(Debug, Clone)]
pub struct FixedObservations {
    ys: Vec<Vec<f64>>,
}

impl FixedObservations {
    pub fn new(ys: Vec<Vec<f64>>) -> Result<Self> {
        let d = ys.first().map(Vec::len).unwrap_or(0);
        if d == 0 || ys.iter().any(|y| y.len() != d) {
            return Err(param("y_values", "need a nonempty list of equal-length vectors"));
        }
        Ok(Self { ys })
    }
}

impl ObservationSource for FixedObservations {
    fn d_v(&self) -> usize {
        self.ys[0].len()
    }

    fn draw(&self, j: usize, _seed: u64) -> Vec<f64> {
        self.ys[j % self.ys.len()].clone()
    }
}

/// Triples `(u, z, y)` for supervised training of the amortized sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub u: Array2<f64>,
    pub z: Array2<f64>,
    pub y: Array2<f64>,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn new(u: Array2<f64>, z: Array2<f64>, y: Array2<f64>, seed: u64) -> Result<Self> {
        let j = u.nrows();
        if z.nrows() != j || y.nrows() != j || j == 0 {
            return Err(EsdError::Shape(format!(
                "row counts u={}, z={}, y={}",
                u.nrows(),
                z.nrows(),
                y.nrows()
            )));
        }
        if z.ncols() != u.ncols() + y.ncols() {
            return Err(EsdError::Shape(format!(
                "z has {} columns, expected d_u + d_v = {}",
                z.ncols(),
                u.ncols() + y.ncols()
            )));
        }
        Ok(Self { u, z, y, seed })
    }

    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.nrows() == 0
    }

    pub fn d_u(&self) -> usize {
        self.u.ncols()
    }

    pub fn d_v(&self) -> usize {
        self.y.ncols()
    }
}

/// Draws `j` conditioning values and noise vectors and integrates each pair.
///
/// Row `i` uses noise stream `i` of [`noise_seed`] and observation stream `i`
/// of a separate derived seed.
pub fn generate_labeled_dataset(
    y_source: &dyn ObservationSource,
    j: usize,
    prior: &SphericalGmmPrior,
    sigma_y2: f64,
    cfg: &ReverseOdeConfig,
) -> Result<LabeledDataset> {
    let score = SphericalScore::new(prior, sigma_y2)?.with_truncation(cfg.truncate);
    generate_labeled_dataset_with(y_source, j, &score, prior.d_u(), cfg)
}

pub fn generate_labeled_dataset_with(
    y_source: &dyn ObservationSource,
    j: usize,
    score: &dyn ConditionalScore,
    d_u: usize,
    cfg: &ReverseOdeConfig,
) -> Result<LabeledDataset> {
    if j == 0 {
        return Err(param("j", "need at least one labeled row"));
    }
    if y_source.d_v() != score.obs_dim() {
        return Err(EsdError::Shape(format!(
            "observation source has d_v={} but score expects {}",
            y_source.d_v(),
            score.obs_dim()
        )));
    }
    let y_seed = derive_seed(cfg.seed, "labels/y");
    let rows: Vec<Vec<f64>> = (0..j).into_par_iter().map(|i| y_source.draw(i, y_seed)).collect();
    let y = Array2::from_shape_fn((j, y_source.d_v()), |(i, c)| rows[i][c]);
    let z = initial_states(noise_seed(cfg.seed), j, score.dim());
    let states = integrate_many(&z, y.view(), cfg, score)?;
    LabeledDataset::new(states.slice(s![.., ..d_u]).to_owned(), z, y, cfg.seed)
}

pub fn write_labeled_dataset(path: &Path, data: &LabeledDataset) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&LABELED_MAGIC.to_le_bytes())?;
    for d in [data.len(), data.d_u(), data.d_v()] {
        let d = u32::try_from(d).map_err(|_| EsdError::Schema("dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&data.seed.to_le_bytes())?;
    for block in [&data.u, &data.z, &data.y] {
        write_f64_block(&mut w, block.as_standard_layout().iter())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labeled_dataset(path: &Path) -> Result<LabeledDataset> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut word = [0u8; 4];
    let mut header = [0u32; 4];
    for h in header.iter_mut() {
        r.read_exact(&mut word)?;
        *h = u32::from_le_bytes(word);
    }
    if header[0] != LABELED_MAGIC {
        return Err(EsdError::Schema("bad magic number in labeled dataset".into()));
    }
    let (j, du, dv) = (header[1] as usize, header[2] as usize, header[3] as usize);
    let mut seed = [0u8; 8];
    r.read_exact(&mut seed)?;
    let block = |r: &mut BufReader<fs::File>, cols: usize| -> Result<Array2<f64>> {
        let v = read_f64_block(r, j * cols)?;
        Ok(Array2::from_shape_vec((j, cols), v).expect("length checked"))
    };
    let u = block(&mut r, du)?;
    let z = block(&mut r, du + dv)?;
    let y = block(&mut r, dv)?;
    LabeledDataset::new(u, z, y, u64::from_le_bytes(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct ZeroScore(usize);

    impl ConditionalScore for ZeroScore {
        fn dim(&self) -> usize {
            self.0
        }

        fn obs_dim(&self) -> usize {
            1
        }

        fn score(&self, _z: &[f64], _y: &[f64], _t: f64, out: &mut [f64]) -> Result<()> {
            out.fill(0.0);
            Ok(())
        }
    }

    #[test]
    fn pure_drift_scales_by_step_count() {
        let z0 = [0.3, -1.5];
        for n in [2, 10, 1000] {
            let cfg = ReverseOdeConfig::new(n, 0).unwrap();
            let z = integrate_reverse(&z0, &[0.0], &cfg, &ZeroScore(2)).unwrap();
            for (a, b) in z.iter().zip(&z0) {
                assert!((a - n as f64 * b).abs() < 1e-9 * n as f64);
            }
        }
    }

    #[test]
    fn grid_endpoints() {
        let cfg = ReverseOdeConfig::new(8, 0).unwrap();
        assert_eq!(cfg.time(0), 1.0);
        assert_eq!(cfg.time(1), 0.875);
        assert_eq!(cfg.time(8), 0.0);
        assert!(ReverseOdeConfig::new(1, 0).is_err());
    }
}
