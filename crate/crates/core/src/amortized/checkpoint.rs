use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EsdError, Result};
use crate::gmm_prior::NormalizationStats;

use super::mlp::{Activation, MlpModel, Parameters};

const CHECKPOINT_FORMAT: &str = "esd-mlp-v1";

/// First line of a checkpoint file. The parameter blob that follows holds
/// `n_params` little-endian `f64`s in [`Parameters::iter`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub normalization: Option<NormalizationStats>,
    pub n_params: usize,
}

pub fn write_checkpoint(path: &Path, model: &MlpModel, seed: u64, normalization: Option<&NormalizationStats>) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        layer_sizes: model.layer_sizes().to_vec(),
        activation: model.activation(),
        seed,
        normalization: normalization.cloned(),
        n_params: model.params().len(),
    };
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for x in model.params().iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(MlpModel, CheckpointHeader)> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    let header: CheckpointHeader = serde_json::from_slice(&line)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(EsdError::Schema(format!("unknown checkpoint format {:?}", header.format)));
    }
    let sizes = &header.layer_sizes;
    if sizes.len() < 2 {
        return Err(EsdError::Schema("checkpoint lists fewer than two layers".into()));
    }
    let mut params = Parameters {
        weights: sizes.windows(2).map(|p| ndarray::Array2::zeros((p[1], p[0]))).collect(),
        biases: sizes.windows(2).map(|p| ndarray::Array1::zeros(p[1])).collect(),
    };
    if params.len() != header.n_params {
        return Err(EsdError::Schema(format!(
            "header declares {} parameters but the layers need {}",
            header.n_params,
            params.len()
        )));
    }
    let mut buf = [0u8; 8];
    for x in params.iter_mut() {
        r.read_exact(&mut buf)
            .map_err(|_| EsdError::Schema("checkpoint parameter blob is truncated".into()))?;
        *x = f64::from_le_bytes(buf);
    }
    if r.read(&mut buf)? != 0 {
        return Err(EsdError::Schema("trailing bytes after the parameter blob".into()));
    }
    let model = MlpModel::from_parameters(sizes, header.activation, params)?;
    Ok((model, header))
}
