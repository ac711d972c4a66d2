//! Joint training data, normalization, and the Gaussian-mixture prior with its
//! linear-Gaussian observation model.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, positive, EsdError, Result};
use crate::math::LN_2PI;
use crate::score::GaussianMixture;

const DATASET_MAGIC: u32 = u32::from_le_bytes(*b"ESD1");

/// Paired samples `(u_k, v_k)`, stored as two row-aligned matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDataset {
    u: Array2<f64>,
    v: Array2<f64>,
}

impl JointDataset {
    pub fn new(u: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        if u.nrows() != v.nrows() {
            return Err(EsdError::Shape(format!(
                "u has {} rows but v has {}",
                u.nrows(),
                v.nrows()
            )));
        }
        if u.nrows() == 0 || u.ncols() == 0 || v.ncols() == 0 {
            return Err(EsdError::InsufficientData(
                "dataset needs at least one row and nonempty u and v blocks".into(),
            ));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(EsdError::Domain("dataset contains non-finite values".into()));
        }
        Ok(Self { u, v })
    }

    /// Splits a `K × (d_u + d_v)` matrix after column `d_u`.
    pub fn from_joint(x: ArrayView2<f64>, d_u: usize) -> Result<Self> {
        if d_u == 0 || d_u >= x.ncols() {
            return Err(EsdError::Schema(format!(
                "cannot split {} columns with d_u = {d_u}",
                x.ncols()
            )));
        }
        Self::new(
            x.slice(s![.., ..d_u]).to_owned(),
            x.slice(s![.., d_u..]).to_owned(),
        )
    }

    pub fn k(&self) -> usize {
        self.u.nrows()
    }

    pub fn d_u(&self) -> usize {
        self.u.ncols()
    }

    pub fn d_v(&self) -> usize {
        self.v.ncols()
    }

    pub fn d_x(&self) -> usize {
        self.d_u() + self.d_v()
    }

    pub fn u(&self) -> ArrayView2<'_, f64> {
        self.u.view()
    }

    pub fn v(&self) -> ArrayView2<'_, f64> {
        self.v.view()
    }

    /// The `K × (d_u + d_v)` matrix with u-columns first.
    pub fn joint(&self) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[self.u.view(), self.v.view()])
            .expect("row counts agree by construction")
    }
}

/// On-disk encodings of a [`JointDataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Csv,
    Binary,
}

impl DatasetFormat {
    /// Picks the format from a file extension: `.csv` is text, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Binary,
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = EsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "bin" | "binary" => Ok(Self::Binary),
            other => Err(param("format", format!("unknown dataset format `{other}`"))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Binary => "binary",
        })
    }
}

pub fn load_joint_dataset(path: &Path, format: DatasetFormat) -> Result<JointDataset> {
    match format {
        DatasetFormat::Csv => read_csv(BufReader::new(fs::File::open(path)?)),
        DatasetFormat::Binary => read_binary(BufReader::new(fs::File::open(path)?)),
    }
}

pub fn write_joint_dataset(path: &Path, data: &JointDataset, format: DatasetFormat) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    match format {
        DatasetFormat::Csv => write_csv(&mut w, data)?,
        DatasetFormat::Binary => write_binary(&mut w, data)?,
    }
    w.flush()?;
    Ok(())
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let bad = |msg: &str| EsdError::Parse {
        row: 1,
        column: 1,
        message: msg.to_string(),
    };
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| bad("expected header `# du=<int> dv=<int>`"))?;
    let (mut du, mut dv) = (None, None);
    for token in body.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| bad("header tokens must be key=value"))?;
        let value: usize = value
            .parse()
            .map_err(|_| bad("header dimensions must be positive integers"))?;
        match key {
            "du" => du = Some(value),
            "dv" => dv = Some(value),
            _ => return Err(bad("unknown header key")),
        }
    }
    match (du, dv) {
        (Some(du), Some(dv)) if du > 0 && dv > 0 => Ok((du, dv)),
        _ => Err(bad("header must declare positive du and dv")),
    }
}

pub(crate) fn read_csv<R: BufRead>(reader: R) -> Result<JointDataset> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| EsdError::Parse {
        row: 1,
        column: 1,
        message: "empty file".into(),
    })??;
    let (du, dv) = parse_header(&header)?;
    let width = du + dv;
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let row = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(EsdError::Schema(format!(
                "row {row} has {} columns, header declares du + dv = {width}",
                fields.len()
            )));
        }
        for (j, field) in fields.iter().enumerate() {
            let x: f64 = field.trim().parse().map_err(|_| EsdError::Parse {
                row,
                column: j + 1,
                message: format!("invalid number `{}`", field.trim()),
            })?;
            if !x.is_finite() {
                return Err(EsdError::Parse {
                    row,
                    column: j + 1,
                    message: format!("non-finite value `{}`", field.trim()),
                });
            }
            values.push(x);
        }
    }
    let k = values.len() / width;
    let x = Array2::from_shape_vec((k, width), values).expect("row widths checked");
    JointDataset::from_joint(x.view(), du)
}

pub(crate) fn write_csv<W: Write>(w: &mut W, data: &JointDataset) -> Result<()> {
    writeln!(w, "# du={} dv={}", data.d_u(), data.d_v())?;
    for row in data.joint().rows() {
        let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_f64_block<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes).map_err(|e| {
        EsdError::Schema(format!("binary payload shorter than declared shape: {e}"))
    })?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub(crate) fn write_f64_block<'a, W: Write>(
    w: &mut W,
    values: impl IntoIterator<Item = &'a f64>,
) -> Result<()> {
    for x in values {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_binary<R: Read>(mut r: R) -> Result<JointDataset> {
    let magic = read_u32(&mut r)?;
    if magic != DATASET_MAGIC {
        return Err(EsdError::Schema("bad magic number in binary dataset".into()));
    }
    let k = read_u32(&mut r)? as usize;
    let du = read_u32(&mut r)? as usize;
    let dv = read_u32(&mut r)? as usize;
    if k == 0 || du == 0 || dv == 0 {
        return Err(EsdError::Schema(format!(
            "binary header declares K={k}, du={du}, dv={dv}"
        )));
    }
    let values = read_f64_block(&mut r, k * (du + dv))?;
    if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
        return Err(EsdError::Parse {
            row: pos / (du + dv) + 1,
            column: pos % (du + dv) + 1,
            message: "non-finite value".into(),
        });
    }
    let x = Array2::from_shape_vec((k, du + dv), values).expect("length checked");
    JointDataset::from_joint(x.view(), du)
}

pub(crate) fn write_binary<W: Write>(w: &mut W, data: &JointDataset) -> Result<()> {
    let dims = [data.k(), data.d_u(), data.d_v()];
    w.write_all(&DATASET_MAGIC.to_le_bytes())?;
    for d in dims {
        let d = u32::try_from(d).map_err(|_| EsdError::Schema("dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    write_f64_block(w, data.joint().iter())
}

/// Column means and population standard deviations, u-columns first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub d_u: usize,
}

impl NormalizationStats {
    pub fn d_v(&self) -> usize {
        self.mean.len() - self.d_u
    }

    pub fn normalize(&self, data: &JointDataset) -> Result<JointDataset> {
        self.check(data)?;
        let mut x = data.joint();
        for (j, mut col) in x.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.std[j]);
        }
        JointDataset::from_joint(x.view(), self.d_u)
    }

    pub fn denormalize(&self, data: &JointDataset) -> Result<JointDataset> {
        self.check(data)?;
        let mut x = data.joint();
        for (j, mut col) in x.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.std[j] + self.mean[j]);
        }
        JointDataset::from_joint(x.view(), self.d_u)
    }

    /// Maps a conditioning vector from data units into normalized units.
    pub fn normalize_y(&self, y: &[f64]) -> Vec<f64> {
        let off = self.d_u;
        y.iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[off + i]) / self.std[off + i])
            .collect()
    }

    pub fn denormalize_y(&self, y: &[f64]) -> Vec<f64> {
        let off = self.d_u;
        y.iter()
            .enumerate()
            .map(|(i, v)| v * self.std[off + i] + self.mean[off + i])
            .collect()
    }

    /// Maps normalized u-rows back into data units in place.
    pub fn denormalize_u(&self, u: &mut Array2<f64>) {
        for (j, mut col) in u.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.std[j] + self.mean[j]);
        }
    }

    pub fn normalize_u(&self, u: &mut Array2<f64>) {
        for (j, mut col) in u.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.std[j]);
        }
    }

    fn check(&self, data: &JointDataset) -> Result<()> {
        if data.d_u() != self.d_u || data.d_x() != self.mean.len() {
            return Err(EsdError::Shape(format!(
                "stats cover du={} dx={}, dataset has du={} dx={}",
                self.d_u,
                self.mean.len(),
                data.d_u(),
                data.d_x()
            )));
        }
        Ok(())
    }
}

/// Z-scores every column using the population (1/K) variance.
pub fn zscore_normalize(data: &JointDataset) -> Result<(JointDataset, NormalizationStats)> {
    if data.k() < 2 {
        return Err(EsdError::InsufficientData(
            "z-scoring needs at least two rows".into(),
        ));
    }
    let x = data.joint();
    let k = x.nrows() as f64;
    let mut mean = Vec::with_capacity(x.ncols());
    let mut std = Vec::with_capacity(x.ncols());
    for (j, col) in x.columns().into_iter().enumerate() {
        let m = col.sum() / k;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / k;
        if !(var > 0.0) {
            return Err(EsdError::DegenerateColumn { column: j });
        }
        mean.push(m);
        std.push(var.sqrt());
    }
    let stats = NormalizationStats {
        mean,
        std,
        d_u: data.d_u(),
    };
    Ok((stats.normalize(data)?, stats))
}

/// Mean squared nearest-neighbour distance per coordinate:
/// `(1/K) Σ_k min_{j≠k} ‖x_k − x_j‖² / (d_u + d_v)`.
pub fn nearest_neighbor_bandwidth(data: &JointDataset) -> Result<f64> {
    if data.k() < 2 {
        return Err(EsdError::InsufficientData(
            "nearest-neighbour bandwidth needs at least two rows".into(),
        ));
    }
    let x = data.joint();
    let x = x.as_standard_layout();
    let d = x.ncols();
    let flat = x.as_slice().expect("standard layout");
    let k = data.k();
    let nearest: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|i| {
            let xi = &flat[i * d..(i + 1) * d];
            let mut best = f64::INFINITY;
            for j in 0..k {
                if j == i {
                    continue;
                }
                let xj = &flat[j * d..(j + 1) * d];
                let mut dist = 0.0;
                for (a, b) in xi.iter().zip(xj) {
                    dist += (a - b) * (a - b);
                }
                if dist < best {
                    best = dist;
                }
            }
            best
        })
        .collect();
    if nearest.iter().any(|&m| m == 0.0) {
        log::warn!("dataset contains duplicate rows; nearest-neighbour distance is zero for some points");
    }
    Ok(nearest.iter().sum::<f64>() / (k as f64 * d as f64))
}

/// Mixture with one component per training pair, block-spherical covariance
/// `diag(σ_U² I, σ_V² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalGmmPrior {
    means: Array2<f64>,
    d_u: usize,
    sigma_u2: f64,
    sigma_v2: f64,
    weights: Vec<f64>,
}

impl SphericalGmmPrior {
    pub fn new(
        means: Array2<f64>,
        d_u: usize,
        sigma_u2: f64,
        sigma_v2: f64,
        weights: Vec<f64>,
    ) -> Result<Self> {
        positive("sigma_u2", sigma_u2)?;
        positive("sigma_v2", sigma_v2)?;
        if d_u == 0 || d_u >= means.ncols() {
            return Err(EsdError::Shape(format!(
                "d_u = {d_u} does not split {} columns",
                means.ncols()
            )));
        }
        validate_weights(&weights, means.nrows())?;
        if means.iter().any(|x| !x.is_finite()) {
            return Err(EsdError::Domain("prior means must be finite".into()));
        }
        Ok(Self {
            means: means.as_standard_layout().into_owned(),
            d_u,
            sigma_u2,
            sigma_v2,
            weights,
        })
    }

    pub fn k(&self) -> usize {
        self.means.nrows()
    }

    pub fn d_u(&self) -> usize {
        self.d_u
    }

    pub fn d_v(&self) -> usize {
        self.means.ncols() - self.d_u
    }

    pub fn d_x(&self) -> usize {
        self.means.ncols()
    }

    pub fn means(&self) -> ArrayView2<'_, f64> {
        self.means.view()
    }

    pub fn u_means(&self) -> ArrayView2<'_, f64> {
        self.means.slice(s![.., ..self.d_u])
    }

    pub fn v_means(&self) -> ArrayView2<'_, f64> {
        self.means.slice(s![.., self.d_u..])
    }

    pub fn sigma_u2(&self) -> f64 {
        self.sigma_u2
    }

    pub fn sigma_v2(&self) -> f64 {
        self.sigma_v2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mixture log-density evaluated with the block-spherical closed form.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let (du, dv) = (self.d_u as f64, self.d_v() as f64);
        let norm = -0.5 * (du * (LN_2PI + self.sigma_u2.ln()) + dv * (LN_2PI + self.sigma_v2.ln()));
        let terms: Vec<f64> = self
            .means
            .rows()
            .into_iter()
            .zip(&self.weights)
            .map(|(mu, w)| {
                let (mut qu, mut qv) = (0.0, 0.0);
                for (j, (xj, mj)) in x.iter().zip(mu.iter()).enumerate() {
                    let d = xj - mj;
                    if j < self.d_u {
                        qu += d * d;
                    } else {
                        qv += d * d;
                    }
                }
                w.ln() + norm - 0.5 * (qu / self.sigma_u2 + qv / self.sigma_v2)
            })
            .collect();
        crate::math::log_sum_exp(&terms)
    }
}

pub(crate) fn validate_weights(weights: &[f64], k: usize) -> Result<()> {
    if weights.len() != k || k == 0 {
        return Err(EsdError::Shape(format!(
            "{} weights for {k} components",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w > 0.0 && *w <= 1.0)) {
        return Err(param("weights", "every weight must lie in (0, 1]"));
    }
    let total: f64 = weights.iter().sum();
    if !crate::math::sums_to_one(total, weights.len()) {
        return Err(param("weights", format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// One component per row with uniform weights `1/K`.
pub fn build_spherical_prior(
    data: &JointDataset,
    sigma_u2: f64,
    sigma_v2: f64,
) -> Result<SphericalGmmPrior> {
    let k = data.k();
    SphericalGmmPrior::new(data.joint(), data.d_u(), sigma_u2, sigma_v2, vec![1.0 / k as f64; k])
}

/// General mixture prior with per-component dense covariances.
#[derive(Debug, Clone)]
pub struct DenseGmmPrior {
    mixture: GaussianMixture,
}

impl DenseGmmPrior {
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        Ok(Self {
            mixture: GaussianMixture::new(weights, means, covariances)?,
        })
    }

    pub fn from_mixture(mixture: GaussianMixture) -> Self {
        Self { mixture }
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn k(&self) -> usize {
        self.mixture.len()
    }

    pub fn d_x(&self) -> usize {
        self.mixture.dim()
    }
}

/// Embeds the block-spherical prior into the dense representation.
pub fn to_dense_prior(prior: &SphericalGmmPrior) -> DenseGmmPrior {
    let dx = prior.d_x();
    let diag = DVector::from_fn(dx, |i, _| {
        if i < prior.d_u() {
            prior.sigma_u2()
        } else {
            prior.sigma_v2()
        }
    });
    let cov = DMatrix::from_diagonal(&diag);
    let means = prior
        .means()
        .rows()
        .into_iter()
        .map(|r| DVector::from_iterator(dx, r.iter().copied()))
        .collect();
    DenseGmmPrior::new(prior.weights().to_vec(), means, vec![cov; prior.k()])
        .expect("a valid spherical prior embeds into a valid dense prior")
}

/// Observation noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationNoise {
    Spherical(f64),
    Full(DMatrix<f64>),
}

/// `Y = H X + ε`, `ε ~ N(0, Σ_Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    h: DMatrix<f64>,
    noise: ObservationNoise,
}

impl ObservationModel {
    pub fn new(h: DMatrix<f64>, noise: ObservationNoise) -> Result<Self> {
        if h.nrows() == 0 || h.nrows() > h.ncols() {
            return Err(EsdError::Shape(format!(
                "observation operator is {}x{}; need 1 <= d_y <= d_x",
                h.nrows(),
                h.ncols()
            )));
        }
        match &noise {
            ObservationNoise::Spherical(s) => positive("sigma_y2", *s)?,
            ObservationNoise::Full(c) => {
                if c.nrows() != h.nrows() || c.ncols() != h.nrows() {
                    return Err(EsdError::Shape("noise covariance must be d_y x d_y".into()));
                }
                if (c - c.transpose()).amax() > 1e-12 * c.amax().max(1.0) || c.clone().cholesky().is_none() {
                    return Err(param("sigma_y", "noise covariance must be symmetric positive definite"));
                }
            }
        }
        Ok(Self { h, noise })
    }

    /// `H = [0 | I_{d_v}]`, `Σ_Y = σ_Y² I`.
    pub fn conditional(d_u: usize, d_v: usize, sigma_y2: f64) -> Result<Self> {
        let mut h = DMatrix::zeros(d_v, d_u + d_v);
        for i in 0..d_v {
            h[(i, d_u + i)] = 1.0;
        }
        Self::new(h, ObservationNoise::Spherical(sigma_y2))
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn noise(&self) -> &ObservationNoise {
        &self.noise
    }

    pub fn d_x(&self) -> usize {
        self.h.ncols()
    }

    pub fn d_y(&self) -> usize {
        self.h.nrows()
    }

    pub fn noise_covariance(&self) -> DMatrix<f64> {
        match &self.noise {
            ObservationNoise::Spherical(s) => DMatrix::identity(self.d_y(), self.d_y()) * *s,
            ObservationNoise::Full(c) => c.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zscore_two_points() {
        let data = JointDataset::new(array![[0.0], [2.0]], array![[1.0], [3.0]]).unwrap();
        let (norm, stats) = zscore_normalize(&data).unwrap();
        assert_eq!(norm.u().column(0).to_vec(), vec![-1.0, 1.0]);
        assert_eq!(stats.mean[0], 1.0);
        assert_eq!(stats.std[0], 1.0);
    }

    #[test]
    fn zscore_rejects_constant_column() {
        let data = JointDataset::new(array![[1.0], [2.0]], array![[5.0], [5.0]]).unwrap();
        match zscore_normalize(&data) {
            Err(EsdError::DegenerateColumn { column }) => assert_eq!(column, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bandwidth_two_points() {
        let data = JointDataset::new(array![[0.0], [1.0]], array![[0.0], [1.0]]).unwrap();
        assert_eq!(nearest_neighbor_bandwidth(&data).unwrap(), 1.0);
    }

    #[test]
    fn bandwidth_duplicates_is_zero() {
        let data = JointDataset::new(array![[0.5], [0.5]], array![[1.0], [1.0]]).unwrap();
        assert_eq!(nearest_neighbor_bandwidth(&data).unwrap(), 0.0);
    }

    #[test]
    fn dense_embedding_is_block_diagonal() {
        let data = JointDataset::new(array![[0.0, 1.0]], array![[2.0]]).unwrap();
        let prior = build_spherical_prior(&data, 0.1, 0.2).unwrap();
        let dense = to_dense_prior(&prior);
        let cov = &dense.mixture().covariances()[0];
        assert_eq!(cov.diagonal().as_slice(), &[0.1, 0.1, 0.2]);
        assert_eq!(cov.sum(), 0.4);
        assert_eq!(prior.weights(), &[1.0]);
    }

    #[test]
    fn rejects_nonpositive_variance() {
        let data = JointDataset::new(array![[0.0]], array![[0.0]]).unwrap();
        assert!(build_spherical_prior(&data, -1.0, 0.1).is_err());
        assert!(build_spherical_prior(&data, 0.1, 0.0).is_err());
    }

    #[test]
    fn conditional_operator_is_zero_identity() {
        let obs = ObservationModel::conditional(2, 3, 0.1).unwrap();
        assert_eq!(obs.h().shape(), (3, 5));
        for i in 0..3 {
            for j in 0..5 {
                let expected = if j == i + 2 { 1.0 } else { 0.0 };
                assert_eq!(obs.h()[(i, j)], expected);
            }
        }
    }
}
