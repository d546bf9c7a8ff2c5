//! Targeted adversarial examples against a small convolutional digit
//! classifier, and their detection by comparing the classifier's confidence
//! before and after low-pass filtering.
//!
//! Pipeline: [`classifier::train`] a model, craft adversarials with
//! [`attacks::pgd_attack`], mix them with clean images into a
//! [`dataset::BenchmarkSet`], run [`detector::detect_batch`], and tally the
//! verdicts with [`metrics::score`].

pub mod attacks;
mod binfmt;
pub mod classifier;
pub mod config;
pub mod dataset;
pub mod detector;
mod error;
pub mod filters;
mod image;
pub mod metrics;
pub mod pipeline;

pub use error::{Error, ErrorKind, Result};
pub use image::{Image, Label, ProbVector, NUM_CLASSES};
