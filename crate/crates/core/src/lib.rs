//! Trainable multiscale denoising with spatially-adaptive FIR filterbanks.
//!
//! Each output pixel is produced by one linear filter picked from a trained
//! bank according to the joint-color structure tensor of the noisy input.
//! In the multiscale cascade the filter at level `l` also sees a patch of
//! the already denoised level `l + 1`, so it upscales, denoises and blends in
//! a single dot product.

pub mod error;
pub mod features;
pub mod filterbank;
pub mod filtering;
pub mod imagecore;
pub mod pyramid;
pub mod trainer;

pub use error::{Error, Result};
pub use filterbank::{Filter, Filterbank, FootprintSpec, LevelBank};
pub use filtering::{apply_fixed, apply_multiscale, denoise};
pub use imagecore::{ColorSpace, Image};
pub use trainer::{train_fixed, train_multiscale, TrainConfig, TrainingPair};
