//! Dual-stage fully convolutional segmentation of the optic disk and cup in
//! retinal fundus images, with cup-to-disk ratio glaucoma scoring.
//!
//! Modules, bottom-up:
//!
//! - [`grad`]: tape-based reverse-mode autodiff and SGD.
//! - [`model`]: residual encoder/decoder FCN.
//! - [`data`]: samples, PNG dataset layout, augmentation, synthetic fundi.
//! - [`cascade`]: preprocessing, Stage I, disk cropping, Stage II, uncropping, training.
//! - [`metrics`]: Dice/Jaccard/Sen/Spe/Acc, CDR, MAE-CDR, AUC.
//! - [`classifier`]: sigmoid curve fit from CDR to glaucoma probability.

pub mod grad;
pub mod cascade;
pub mod classifier;
pub mod data;
pub mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod seed;

pub use error::{Error, Result};
