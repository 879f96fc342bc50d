//! Experiment harness: configuration, the training loop, sweeps and the
//! reference-pair validation, plus artifact emission.

pub mod config;
pub mod refpair;
pub mod runner;
pub mod sweep;
