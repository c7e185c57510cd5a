//! Masked occupancy autoencoding for LiDAR point clouds.
//!
//! Pipeline: synthesize or load scans, voxelize them into a sparse tensor
//! plus a dense binary occupancy target, hide most occupied voxels with a
//! range-aware random mask, and train a sparse-encoder / dense-decoder
//! network to predict the full occupancy grid from the visible voxels.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod points;
pub mod rng;
pub mod scene;
pub mod train;
pub mod voxel;

pub use error::{Error, Result};
