//! Amortized posterior sampler: a small fully connected network trained to
//! reproduce the diffusion sampler's map from noise and observation to sample.

mod checkpoint;
mod mlp;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use mlp::{network_inputs, repeat_observation, Activation, MlpModel, Parameters};
pub use train::{
    amortized_noise_seed, sample_amortized, train_amortized, write_loss_csv, AdamState, TrainConfig, TrainedModel,
};
