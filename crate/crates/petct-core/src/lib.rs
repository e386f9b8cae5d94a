//! # petct-core
//!
//! Building blocks for a desk-scale head-and-neck CT/PET analysis pipeline:
//! volume I/O, a synthetic phantom cohort, slice-based multimodal tumor
//! segmentation (three fusion topologies over per-pixel features), and
//! recurrence-free-survival regression on clinical + image features with
//! from-scratch tree ensembles and Shapley-value explanations.
//!
//! The crate is deterministic end to end: every random choice is driven by an
//! explicit seed, and parallel code paths (enabled by the `parallel` feature,
//! on by default) reduce in a fixed order so they produce bit-identical
//! results to the sequential fallback.

pub mod error;
pub mod exec;
pub mod explain;
pub mod features;
pub mod grid;
pub mod seeds;
pub mod volume;

pub mod metrics;
pub mod model_select;
pub mod nifti;
pub mod phantom;
pub mod pipeline;
pub mod pgm;
pub mod postprocess;
pub mod preprocess;
pub mod resample;
pub mod seg;
pub mod tabular;
pub mod trees;

pub use error::{Error, Result};
pub use grid::Grid2;
pub use volume::{Volume, VolumeGeometry, VolumeKind};
