//! Binary classification with mislabeled training data.
//!
//! When labels are flipped independently of the features, a classifier
//! trained on the observed labels estimates the noisy posterior, which is an
//! affine image of the clean one. Clean decisions are recovered by moving the
//! decision threshold according to the flip rates and class priors instead
//! of correcting the training data.
//!
//! - [`calculus`]: closed-form maps between clean and noisy posteriors,
//!   priors and thresholds.
//! - [`synth`]: two-class Gaussian-mixture problems with exact posteriors.
//! - [`mlp`]: a small sigmoid-output network trained by cross-entropy.
//! - [`experiments`]: simulation grids over noise level, training size and
//!   flip ratio.
//! - [`chart`]: SVG line charts of grid summaries.
//! - [`cli`]: the `noisy-label` command-line tool.

pub mod calculus;
pub mod chart;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod mlp;
pub mod seeds;
pub mod synth;

pub use error::{Error, Result};
