//! Detection of a fixed number of regions of interest in 360° equirectangular images.
//!
//! A saliency map is weighted by `cos(latitude)` and normalized, candidate boxes come from
//! graph segmentation plus hierarchical grouping, and a greedy search picks `n` boxes that
//! are both salient and mutually non-overlapping. The crate also covers spherical rotation
//! augmentation, evaluation metrics and perspective crops.

pub mod augmentation;
pub mod error;
pub mod evaluation;
pub mod formats;
pub mod geometry;
pub mod optimizer;
pub mod pipeline;
pub mod proposals;
pub mod raster;
pub mod render;
pub mod saliency;

pub use error::{Error, Result};
pub use geometry::{RegionBox, RotationAngles, SphereCoord};
pub use optimizer::{greedy_select, salient_iou, RoiSelection, SIoUParams};
pub use proposals::{CandidateSet, SaliencyIntegral};
pub use raster::{ErpDims, ErpImage, Raster};
pub use saliency::SaliencyMap;
