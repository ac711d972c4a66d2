use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, EsdError, Result};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Tanh => x.tanh(),
            Self::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output `a`.
    fn slope_from_output(self, a: f64) -> f64 {
        match self {
            Self::Tanh => 1.0 - a * a,
            Self::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Weights (`out × in`) and biases of every layer. Gradients and Adam moments
/// share this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Parameters {
    pub fn zeros_like(other: &Self) -> Self {
        Self {
            weights: other.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: other.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view in layer order, each layer's weights (row-major) then its biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }
}

/// Fully connected network mapping `(y, z)` to `u`. Hidden layers use
/// `activation`; the output layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: Parameters,
}

impl MlpModel {
    /// Glorot-uniform weights and zero biases; layer `l` draws from stream `l` of `seed`.
    pub fn new(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = stream(seed, l as u64);
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit)));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            params: Parameters { weights, biases },
        })
    }

    pub fn from_parameters(layer_sizes: &[usize], activation: Activation, params: Parameters) -> Result<Self> {
        check_sizes(layer_sizes)?;
        if params.weights.len() != layer_sizes.len() - 1 || params.biases.len() != layer_sizes.len() - 1 {
            return Err(EsdError::Shape("parameter count does not match the layer list".into()));
        }
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            if params.weights[l].dim() != (pair[1], pair[0]) || params.biases[l].len() != pair[1] {
                return Err(EsdError::Shape(format!("layer {l} parameters do not match sizes {pair:?}")));
            }
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(EsdError::Domain("network parameters must be finite".into()));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            params,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated nonempty")
    }

    /// `F(y, z)` for one input.
    pub fn forward(&self, y: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        if y.len() + z.len() != self.input_dim() {
            return Err(EsdError::Shape(format!(
                "inputs of length {} + {} for a network expecting {}",
                y.len(),
                z.len(),
                self.input_dim()
            )));
        }
        let mut a: Array1<f64> = y.iter().chain(z).copied().collect();
        let last = self.params.weights.len() - 1;
        for (l, (w, b)) in self.params.weights.iter().zip(&self.params.biases).enumerate() {
            a = w.dot(&a) + b;
            if l < last {
                a.mapv_inplace(|x| self.activation.apply(x));
            }
        }
        Ok(a.to_vec())
    }

    /// Row-wise forward pass over an `n × d_in` input matrix.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.activations(inputs)?.pop().expect("at least one layer"))
    }

    /// Outputs of every layer, input first.
    fn activations(&self, inputs: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        if inputs.ncols() != self.input_dim() {
            return Err(EsdError::Shape(format!(
                "inputs have {} columns, network expects {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        let last = self.params.weights.len() - 1;
        let mut acts = vec![inputs.to_owned()];
        for (l, (w, b)) in self.params.weights.iter().zip(&self.params.biases).enumerate() {
            let mut a = acts[l].dot(&w.t()) + b;
            if l < last {
                a.mapv_inplace(|x| self.activation.apply(x));
            }
            acts.push(a);
        }
        Ok(acts)
    }

    /// Mean squared error `mean_i ‖F(x_i) − u_i‖²` and its gradient by backpropagation.
    pub fn loss_and_grad(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Parameters)> {
        let n = inputs.nrows();
        if n == 0 {
            return Err(EsdError::InsufficientData("empty training batch".into()));
        }
        if targets.nrows() != n || targets.ncols() != self.output_dim() {
            return Err(EsdError::Shape(format!(
                "targets are {}×{}, expected {n}×{}",
                targets.nrows(),
                targets.ncols(),
                self.output_dim()
            )));
        }
        let acts = self.activations(inputs)?;
        let residual = acts.last().expect("output layer") - &targets;
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / n as f64;

        let layers = self.params.weights.len();
        let mut grads = Parameters::zeros_like(&self.params);
        let mut delta = residual * (2.0 / n as f64);
        for l in (0..layers).rev() {
            grads.weights[l] = delta.t().dot(&acts[l]);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.params.weights[l]);
                back.zip_mut_with(&acts[l], |d, a| *d *= self.activation.slope_from_output(*a));
                delta = back;
            }
        }
        Ok((loss, grads))
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(param("layer_sizes", "need at least an input and an output layer"));
    }
    if layer_sizes.contains(&0) {
        return Err(param("layer_sizes", "layer widths must be positive"));
    }
    Ok(())
}

/// Network input rows `[y_i, z_i]`.
pub fn network_inputs(y: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Array2<f64>> {
    if y.nrows() != z.nrows() {
        return Err(EsdError::Shape(format!("{} observations for {} noise rows", y.nrows(), z.nrows())));
    }
    concatenate(Axis(1), &[y, z]).map_err(|e| EsdError::Shape(e.to_string()))
}

/// Broadcasts one observation across `n` rows.
pub fn repeat_observation(y: ArrayView1<f64>, n: usize) -> Array2<f64> {
    y.broadcast((n, y.len())).expect("row broadcast").to_owned()
}
