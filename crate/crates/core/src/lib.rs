//! Dual-channel visual dialogue encoder.
//!
//! A dialogue agent answering questions about an image needs two views of
//! it: an appearance view (object features plus the visual relations
//! between objects) and a language view (a global caption plus dense
//! local captions). This crate implements both views as question-guided
//! encoders, fuses them through adaptive gates, and ranks candidate
//! answers with a discriminative decoder. Everything runs on a small
//! f64 reverse-mode autodiff tape, so the whole stack is gradient-checked
//! and deterministic end to end.

pub mod battery;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod rng;
pub mod semantic;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod train;
pub mod visual;

pub use error::{Error, Result};
