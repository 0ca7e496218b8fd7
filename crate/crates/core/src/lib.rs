//! Data-consistent super-resolution of magnitude MR images.
//!
//! A low-resolution magnitude image comes from keeping only the central
//! phase-encode columns of k-space. A residual CNN sharpens it, and a
//! data-consistency layer blends the CNN output's k-space with the k-space of
//! the LR magnitude image on the retained columns. Unrolled models alternate
//! the two steps with shared weights.
//!
//! Modules, bottom up:
//!
//! - [`numcore`]: images, centered FFT, tensors and reverse-mode autodiff.
//! - [`kspace`]: sampling masks, degradation, phase statistics.
//! - [`dc`]: the data-consistency layer.
//! - [`model`]: ResNet and unrolled networks.
//! - [`train`]: MAE loss, Adam, checkpoints, the training loop.
//! - [`data`]: slice files, phantoms, datasets, image export.
//! - [`metrics`]: NRMSE, SSIM, paired t-tests, reports.
//! - [`eval`]: test-split evaluation.
//! - [`cli`]: the `magdc` command.
//!
//! The guide in `book/` walks through each part with runnable examples.

pub mod cli;
pub mod config;
pub mod data;
pub mod dc;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub(crate) mod io;
pub mod kspace;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod rng;
pub mod train;

pub use error::{Error, Result};

// Book chapters compile and run as doctests.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/kspace.md")]
pub mod book_kspace {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/data_consistency.md")]
pub mod book_data_consistency {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/magnitude.md")]
pub mod book_magnitude {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
pub mod book_training {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod book_metrics {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/files.md")]
pub mod book_files {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod book_cli {}
