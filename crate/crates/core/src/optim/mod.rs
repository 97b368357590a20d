//! Adam and the training loops for the coordinate network.

mod adam;
mod train;

pub use adam::{adam_step, adam_step_flat, AdamConfig, AdamMoments};
pub use train::{train_cdi, train_cdi_with_params, train_ptycho, train_ptycho_with_params, EarlyStop, TrainConfig};
