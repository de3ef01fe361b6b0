//! Single-layer LSTM classifier for the assist decision.

mod adam;
mod bptt;
mod cell;
mod model;
mod params;
mod train;

pub use adam::{Adam, AdamConfig};
pub use bptt::{forward_batch, loss_and_gradients, Sample};
pub use cell::{final_state, forward, sigmoid, step};
pub use model::{decide, LstmModel, TrainMeta, MODEL_SCHEMA};
pub use params::{CellState, Gate, LstmParams};
pub use train::{train, train_with_progress, EpochReport, TrainConfig};
