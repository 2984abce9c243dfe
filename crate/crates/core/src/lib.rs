//! Point cloud cleaning toolkit: a two-stage pipeline that removes outliers
//! and corrects noise in 3D point clouds.
//!
//! Stage 1 classifies every point with a patch-based outlier detector and
//! discards the points above a probability threshold. Stage 2 estimates a
//! per-point displacement with a denoiser network and applies it to the
//! surviving points. Both networks share a trunk built from a quaternion
//! spatial transform, a graph convolutional layer of four chained local
//! feature networks, and residual-block heads.
//!
//! The crates are organized around that pipeline:
//! - [`geometry`]: points, clouds, bounding boxes, a kd-tree spatial index,
//!   and patch extraction/normalization
//! - [`graph`]: k-nearest-neighbor graphs in arbitrary feature spaces and
//!   edge-feature assembly
//! - [`autodiff`]: a minimal reverse-mode differentiation tape with the
//!   tensor operations the networks need
//! - [`network`]: the architecture blocks assembled into detector and
//!   denoiser models, with two graph-convolution variants
//! - [`detector`] / [`denoiser`]: classification, removal, displacement
//!   application, losses, and SGD training loops
//! - [`data`]: synthetic shape generation, contamination, pairing, and
//!   point cloud file I/O
//! - [`eval`]: AUPR, Chamfer Distance, and per-point timing
//! - [`checkpoint`]: versioned binary model serialization

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod denoiser;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod network;
pub mod train;

pub use error::{Error, Result};
