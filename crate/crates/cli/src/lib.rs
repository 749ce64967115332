//! Experiment runner library behind the `somvae` binary.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod lorenz_analysis;
pub mod pgm;
pub mod report;
