//! Terrain segmentation evaluation and post-processing toolkit.
//!
//! Operates on label masks and per-pixel class tensors exported by an
//! upstream model: metrics, reference losses, augmentation, dense-CRF
//! refinement, uncertainty analysis and traversability planning.

pub mod augmentation;
pub mod canonical;
pub mod cli;
pub mod costmap;
pub mod loss;
pub mod metrics;
pub mod ops;
pub mod postprocess;
pub(crate) mod resample;
pub mod schema;
pub mod service;
pub mod tensor_io;

pub use schema::{ClassDef, ClassSchema, Tier, IGNORE_INDEX};
pub use tensor_io::{LabelMap, ProbTensor, RgbImage, TensorKind};
