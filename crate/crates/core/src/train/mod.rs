//! Training regimes: baseline, LayerShuffle and its position-aware
//! variants, LayerDrop, and the Adam loop with early stopping.

mod adam;
mod loss;
mod mode;
pub mod position;
mod sampling;
mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use loss::{total_loss, PositionTarget};
pub use mode::TrainMode;
pub use position::{position_encoding_forward, position_predict};
pub use sampling::{layerdrop_mask, sample_permutation, shuffle_layers};
pub use trainer::{
    metrics_log, prepare_model, train, train_step, training_order, validate, EpochMetrics,
    TrainConfig, TrainOutcome,
};
