//! Occupancy detectors: the conv + bidirectional LSTM network with its
//! training loop, and the logistic-regression baseline.

pub mod config;
pub mod io;
pub mod logistic;
pub mod network;
pub mod params;
pub mod train;

pub use config::{NetworkConfig, TrainConfig, ValidationSplit};
pub use io::{load_weights, load_weights_for, save_weights};
pub use logistic::{fit_logistic, predict_logistic, LRWeights};
pub use network::{forward, loss_and_gradients, predict, NetworkWeights};
pub use params::Parameters;
pub use train::{train, Init, TrainingReport};
