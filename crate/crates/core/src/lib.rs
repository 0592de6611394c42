//! Single-view and multi-view 3D reconstruction from silhouettes, with a
//! learned shape prior acting as a log barrier on voxel occupancy.

pub mod baselines;
pub mod barrier;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod projection;
pub mod solver;
pub mod theory;
pub mod voxel;

pub use error::{Error, Result};
pub use exec::Execution;
