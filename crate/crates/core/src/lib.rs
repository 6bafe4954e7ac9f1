//! Mode-penalty GAN training on synthetic mixture-of-Gaussians benchmarks.
//!
//! A generator is trained against a discriminator while an auxiliary loss
//! pulls its samples toward a fixed bank of real samples, matched greedily
//! in the latent space of a pretrained autoencoder. Per-mode penalty weights
//! grow for modes the generator keeps missing.

pub mod adam;
pub mod autoencoder;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gan;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod penalty;
pub mod rng;

pub use adam::{AdamConfig, AdamState};
pub use autoencoder::{AutoEncoder, PretrainConfig, PretrainReport};
pub use config::ExperimentConfig;
pub use data::{make_benchmark, Benchmark, BenchmarkParams, GaussianMixture};
pub use error::{Error, Result};
pub use gan::{GanConfig, GanModel, Trainer};
pub use matrix::Matrix;
pub use metrics::{EvalReport, MetricsConfig};
pub use nn::{Activation, DenseNet, ForwardCache, Gradients, InitScheme};
pub use penalty::{MatchAssignment, MatchPair, ModeBank, PenaltySwitch};
pub use rng::SeededRng;
