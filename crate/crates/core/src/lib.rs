//! Streaming open-vocabulary keyword spotting engine.
//!
//! The pipeline: log-mel features ([`features`]) feed a causal DFSMN audio
//! encoder ([`model`]); keywords are enrolled as audio, text, and mixed
//! embeddings ([`runtime`]); streaming audio is decoded frame by frame with
//! causal smoothing and a windowed geometric-mean confidence score, fused
//! across modalities. Training objectives with hand-derived gradients live in
//! [`losses`], a synthetic-corpus trainer in [`train`], and detection-error
//! evaluation (EER/AUC over easy/hard trials) in [`metrics`].

pub mod error;
pub mod features;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod runtime;
pub mod train;

pub use error::{Error, Result};
pub use numkit::{Matrix, Vector};
