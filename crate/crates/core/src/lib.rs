//! From-scratch Patch-Mix contrastive-learning pipeline for respiratory
//! sound classification: ICBHI-format ingestion, a log-Mel DSP front-end,
//! SpecAugment, patch-level mixing on a small transformer encoder, the
//! Patch-Mix contrastive loss, and ICBHI Score evaluation, all wired into
//! a deterministic training harness.
//!
//! The `parallel` feature (on by default) runs batch work — feature
//! extraction, evaluation, multi-seed runs — on rayon; disabling it falls
//! back to sequential loops with identical results.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod ingest;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod specio;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
