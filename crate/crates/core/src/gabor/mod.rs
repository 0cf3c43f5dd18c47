//! Gabor texture features and the rotation-normalized texture distance.
//!
//! An image is filtered by an M x N bank of complex Gabor kernels. The mean
//! and deviation of each filter's magnitude response form the feature
//! vector; its orientation columns are circularly shifted so that the
//! orientation with the most energy comes first, which makes the distance
//! tolerant to image rotation.

mod bank;
mod feature;
mod response;

use thiserror::Error;

pub use bank::{FilterBank, FilterBankParams, Kernel};
pub use feature::{
    distance, dominant_orientation, normalize_rotation, raw_distance, EnergyGrid, TextureFeatureVector,
};
pub use response::{compute_energy, compute_stats, filter_magnitudes, MagnitudeResponse};

use crate::imaging::GrayImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaborError {
    #[error("invalid filter bank parameters: {0}")]
    InvalidParams(String),
    #[error("image has no pixels")]
    EmptyImage,
    #[error("feature grids differ: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("feature vector is not rotation normalized")]
    NotNormalized,
    #[error("invalid feature data: {0}")]
    InvalidFeature(String),
}

/// Filter, summarise and rotation-normalize in one step.
pub fn extract_feature(image: &GrayImage, bank: &FilterBank) -> TextureFeatureVector {
    normalize_rotation(&compute_stats(image, bank))
}
