//! Desk-scale online continual learning (OCL) simulator.
//!
//! The crate trains a small from-scratch convolutional classifier on
//! synthetic shortcut-biased task streams, with replay-based baselines
//! (ER, DER++) and an attention-guided feature-dropping path that
//! suppresses shortcut cues during training:
//!
//! - [`tensor`] — dense arrays plus the reverse-mode differentiable op set
//! - [`backbone`] — the CNN with stem / last-block / feature hook points
//! - [`debias`] — feature-map fusion, hard and soft drop masks
//! - [`intensity`] — per-class adaptive drop-intensity control
//! - [`replay`] — episodic memory with random and reservoir policies
//! - [`stream`] — synthetic biased task streams and test splits
//! - [`metrics`] — accuracy matrix, forgetting, feature diagnostics

pub mod backbone;
pub mod debias;
pub mod error;
pub mod intensity;
pub mod metrics;
pub mod replay;
pub mod rng;
pub mod stream;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
