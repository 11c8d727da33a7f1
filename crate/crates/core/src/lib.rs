//! Distractor discovery for weakly-supervised localization.
//!
//! Score maps are thresholded into foreground regions, the mid-level
//! patterns of those regions are clustered per class with a linear-cost
//! spectral method, and a per-cluster object/distractor label is used to
//! suppress distractor regions before boxes are extracted and evaluated.

pub mod annotation;
pub mod datamodel;
pub mod error;
pub mod heatmap;
pub mod localize;
pub mod pooling;
pub mod prioritize;
pub mod refine;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
