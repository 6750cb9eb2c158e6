//! Robust classifier training under label noise with batch-statistics sample selection.
//!
//! The crate bundles a small MLP engine ([`nn`], [`optim`]), label-noise models
//! ([`noise`]), selection rules ([`selection`]), the training loop ([`trainer`]) and
//! dataset loaders ([`data`]).
//!
//! ```
//! use bare::data::{make_blobs, BlobSpec, SplitSpec};
//! use bare::noise::TransitionMatrix;
//! use bare::trainer::{run_training, Experiment, TrainConfig};
//!
//! let spec = BlobSpec { num_classes: 3, per_class: 60, dim: 4, separation: 3.0, std: 0.5, seed: 1 };
//! let pool = make_blobs(&spec).unwrap();
//! let test = make_blobs(&BlobSpec { per_class: 20, seed: 2, ..spec }).unwrap();
//! let split = SplitSpec { train_fraction: 0.8, validation_count: 20, seed: 3 };
//! let noise = TransitionMatrix::symmetric(3, 0.2).unwrap();
//! let exp = Experiment::prepare(&pool, test, &noise, &split, 4).unwrap();
//!
//! let mut config = TrainConfig::new(5);
//! config.epochs = 3;
//! config.batch_size = 16;
//! config.hidden = vec![8];
//! let out = run_training::<f64>(&config, &exp).unwrap();
//! assert_eq!(out.metrics.len(), 3);
//! ```

pub mod data;
pub mod error;
pub mod matrix;
pub mod nn;
pub mod noise;
pub mod optim;
pub mod real;
pub mod seed;
pub mod selection;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;
pub use nn::MlpParams;
pub use real::Real;
pub use selection::Selector;
