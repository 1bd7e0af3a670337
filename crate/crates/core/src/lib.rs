//! Unsupervised acoustic word embeddings.
//!
//! Variable-length speech segments (sequences of MFCC frames) are mapped to
//! fixed-dimensional vectors by GRU encoder-decoders trained as a plain
//! autoencoder, a variational autoencoder, or a correspondence autoencoder
//! that reconstructs one instance of a word from another. Downsampling and
//! DTW serve as training-free baselines, and everything is scored with the
//! same-different average-precision task.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod data_io;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod models;
pub mod numerics;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
