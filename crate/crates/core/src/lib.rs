//! Vision transformers whose attention modules can run in any order.
//!
//! The crate contains a small reverse-mode autodiff engine, a ViT built on
//! it, training regimes that shuffle, drop or annotate layers, evaluation
//! and analysis under arbitrary and pruned orders, a simulator for
//! inference over unreliable nodes, and the binary file formats.
//!
//! ```
//! use layershuffle::{ModelConfig, VisionTransformer};
//!
//! let model = VisionTransformer::<f32>::init(ModelConfig::default(), 0).unwrap();
//! let image = vec![0.5f32; 16 * 16];
//! let logits = model.logits(&[&image], &[5, 4, 3, 2, 1, 0]).unwrap();
//! assert_eq!(logits.shape(), &[1, 10]);
//! ```

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
mod io;
pub mod model;
pub mod real;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod train;

pub use autodiff::{grad_check, GradCheckOptions, GradCheckReport, Tape, Var};
pub use checkpoint::Checkpoint;
pub use data::{generate_dataset, Dataset, Split, SyntheticDatasetSpec};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalOrderSpec, EvalSummary, KeepSpec, OrderMode};
pub use model::{ModelConfig, Permutation, PredictorInput, VisionTransformer};
pub use real::Real;
pub use rng::SeedRng;
pub use sim::{assign_layers, simulate, AssignStrategy, NodePlan, OrderPolicy, SimConfig};
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainMode, TrainOutcome};
