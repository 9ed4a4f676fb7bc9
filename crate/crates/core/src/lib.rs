//! Synthetic indoor CO₂ and occupancy data, plus an occupancy detector that is
//! pre-trained on simulated rooms and fine-tuned on a handful of measured days.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`occupancy_sim`] draws daily presence and window traces from scheduled
//!    status transitions and two-state Markov chains.
//! 2. [`co2_sim`] integrates the room's CO₂ mass balance at 1 s resolution.
//! 3. [`calibration`] recovers the infiltration rate and outdoor level from a
//!    nighttime decay.
//! 4. [`dataset`] downsamples to 1 min and cuts 15 min sliding windows.
//! 5. [`models`] trains the conv + bidirectional LSTM detector (and a
//!    logistic baseline); [`eval`] runs the cross-validation protocol.
//!
//! Data-parallel loops (days, evaluation chunks, protocol runs) go through
//! [`exec::Execution`], which falls back to sequential iteration when the
//! `parallel` feature is disabled.

pub mod calibration;
pub mod co2_sim;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod exec;
pub mod models;
pub mod occupancy_sim;
pub mod pipeline;

pub use error::{Error, Result};
pub use exec::Execution;
