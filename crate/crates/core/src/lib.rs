//! Key-exchange convolutional auto-encoder.
//!
//! An encoder splits every image into an "unrelated" latent map and a "key"
//! latent map. Summing the two and decoding reconstructs the image; swapping
//! the key maps of a healthy/diseased pair and decoding produces two new
//! images whose labels are swapped as well. The crate contains everything
//! needed to train that model from scratch on procedurally generated
//! radiograph-like images and to measure what it learned.
//!
//! * [`diffcore`]: tensors, reverse-mode tape, layers, Adam.
//! * [`netlib`]: encoder, decoder, Siamese-GAP discriminator, key exchange.
//! * [`lossfns`]: reconstruction, cross-entropy and LDA-ratio losses.
//! * [`trainer`]: the alternating training step, checkpoints, generation.
//! * [`datakit`]: synthetic images, splits, pairing, patches, PGM I/O.
//! * [`evalkit`]: SVM probe, hyper-parameter grid, sample-size study,
//!   augmentation benefit, gap-width oracle.
//! * [`runconfig`]: the flat `key=value` run configuration.

pub mod datakit;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod lossfns;
pub mod netlib;
pub mod rng;
pub mod runconfig;
pub mod trainer;

pub use error::{Error, Result};
