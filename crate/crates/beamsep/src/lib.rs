//! Mask-driven multi-source MVDR beamforming front-end for overlapped
//! multi-channel speech: STFT analysis/synthesis, spatialized mixture
//! simulation, oracle and pluggable time-frequency masking, PSD estimation
//! and MVDR separation, log-mel feature extraction with global
//! normalization, CTC/PIT recognition losses, curriculum batch scheduling,
//! and SI-SDR / error-rate evaluation.

pub mod beamforming;
pub mod error;
pub mod features;
pub mod loss;
pub mod masking;
pub mod metrics;
pub mod pipeline;
pub mod scheduler;
pub mod spatial;
pub mod stft;
pub mod tensor;
pub mod wav;

pub use error::{Error, Result};
