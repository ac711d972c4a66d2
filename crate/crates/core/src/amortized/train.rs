use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{param, positive, EsdError, Result};
use crate::reverse_ode::{initial_states, LabeledDataset};
use crate::rng::{derive_seed, stream};

use super::mlp::{network_inputs, repeat_observation, Activation, MlpModel, Parameters};

/// Adam optimizer state: bias-corrected first and second moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Parameters,
    pub v: Parameters,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &MlpModel, lr: f64) -> Result<Self> {
        positive("lr", lr)?;
        Ok(Self {
            m: Parameters::zeros_like(model.params()),
            v: Parameters::zeros_like(model.params()),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        })
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Parameters) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(EsdError::Shape("gradient shape does not match optimizer state".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in model
            .params_mut()
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        Ok(())
    }
}

fn default_hidden() -> Vec<usize> {
    vec![50, 50]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_lr() -> f64 {
    1e-3
}

/// `batch_size = None` means one full-batch Adam step per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub seed: u64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: None,
            seed,
            lr: default_lr(),
            hidden: default_hidden(),
            activation: default_activation(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(param("epochs", "must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(param("batch_size", "must be positive"));
        }
        positive("lr", self.lr)?;
        if self.hidden.contains(&0) {
            return Err(param("hidden", "layer widths must be positive"));
        }
        Ok(())
    }

    /// `[d_v + d_u + d_v, hidden…, d_u]`.
    pub fn layer_sizes(&self, d_u: usize, d_v: usize) -> Vec<usize> {
        let mut sizes = vec![2 * d_v + d_u];
        sizes.extend(&self.hidden);
        sizes.push(d_u);
        sizes
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: MlpModel,
    /// Mean training loss per epoch, evaluated before that epoch's update(s).
    pub loss_history: Vec<f64>,
}

/// Fits `F(y, z) ≈ u` on the labeled triples with Adam.
pub fn train_amortized(data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let sizes = cfg.layer_sizes(data.d_u(), data.d_v());
    let mut model = MlpModel::new(&sizes, cfg.activation, derive_seed(cfg.seed, "amortized/init"))?;
    let mut adam = AdamState::new(&model, cfg.lr)?;
    let inputs = network_inputs(data.y.view(), data.z.view())?;
    let j = data.len();
    let batch = cfg.batch_size.unwrap_or(j).min(j);
    let mut order: Vec<usize> = (0..j).collect();
    let shuffle_seed = derive_seed(cfg.seed, "amortized/shuffle");
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if batch == j {
            let (loss, grads) = model.loss_and_grad(inputs.view(), data.u.view())?;
            check_loss(loss, epoch)?;
            history.push(loss);
            adam.step(&mut model, &grads)?;
            continue;
        }
        order.shuffle(&mut stream(shuffle_seed, epoch as u64));
        let mut total = 0.0;
        for idx in order.chunks(batch) {
            let x = inputs.select(Axis(0), idx);
            let u = data.u.select(Axis(0), idx);
            let (loss, grads) = model.loss_and_grad(x.view(), u.view())?;
            check_loss(loss, epoch)?;
            total += loss * idx.len() as f64;
            adam.step(&mut model, &grads)?;
        }
        history.push(total / j as f64);
    }
    Ok(TrainedModel {
        model,
        loss_history: history,
    })
}

fn check_loss(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(EsdError::TrainingDivergence { epoch })
    }
}

/// Seed of the standard-normal inputs used by [`sample_amortized`].
pub fn amortized_noise_seed(seed: u64) -> u64 {
    derive_seed(seed, "amortized/noise")
}

/// Pushes `n` standard-normal draws through the network at a fixed observation.
pub fn sample_amortized(model: &MlpModel, y: &[f64], n: usize, seed: u64) -> Result<Array2<f64>> {
    let d_v = y.len();
    let d_z = model.input_dim().checked_sub(d_v).ok_or_else(|| {
        EsdError::Shape(format!("observation of length {d_v} exceeds the network input"))
    })?;
    let z = initial_states(amortized_noise_seed(seed), n, d_z);
    let y = repeat_observation(ndarray::ArrayView1::from(y), n);
    model.forward_batch(network_inputs(y.view(), z.view())?.view())
}

pub fn write_loss_csv(path: &Path, history: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "epoch,loss")?;
    for (e, l) in history.iter().enumerate() {
        writeln!(w, "{e},{l:?}")?;
    }
    w.flush()?;
    Ok(())
}
