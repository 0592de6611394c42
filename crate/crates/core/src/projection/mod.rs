//! Silhouette rendering of occupancy grids.
//!
//! Two projectors are provided: raytrace pooling, which max-pools occupancy
//! over the exact set of voxels each pixel ray crosses, and a grid-sampling
//! projector that max-pools trilinear samples taken at fixed depth steps.
//! The latter misses structures thinner than its step and is kept as a
//! baseline.

mod raytrace;
mod sampling;
mod traversal;

pub use raytrace::{rp_backward, rp_forward, RayCache};
pub use sampling::{default_depth_range, gs_backward, gs_forward, trilinear, SamplingProjector};
pub use traversal::{slab_interval, traverse, TraversalRecord, VoxelHit};

use crate::error::{Error, Result};
use crate::geometry::Camera;

/// Per-pixel foreground probabilities, row-major (`j * width + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::precondition("mask dimensions must be positive"));
        }
        if values.len() != width * height {
            return Err(Error::mismatch(format!(
                "mask {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::precondition(format!("mask value {v} outside [0, 1]")));
        }
        Ok(MaskImage {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        MaskImage {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Binary mask with 1 where the value is at least `tau`.
    pub fn threshold(&self, tau: f64) -> MaskImage {
        let values = self.values.iter().map(|&v| if v >= tau { 1.0 } else { 0.0 }).collect();
        MaskImage::from_unchecked(self.width, self.height, values)
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn matches_camera(&self, cam: &Camera) -> Result<()> {
        if self.width != cam.width() || self.height != cam.height() {
            return Err(Error::mismatch(format!(
                "mask is {}x{} but camera image is {}x{}",
                self.width,
                self.height,
                cam.width(),
                cam.height()
            )));
        }
        Ok(())
    }

    pub(crate) fn same_size(&self, other: &MaskImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::mismatch(format!(
                "mask sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub(crate) fn from_unchecked(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        MaskImage {
            width,
            height,
            values,
        }
    }
}
