//! Raytrace pooling: each pixel takes the maximum occupancy over the voxels
//! its ray crosses. The backward pass routes each pixel's upstream gradient
//! to the first voxel (nearest the camera) that attains the maximum.

use super::traversal::walk;
use super::MaskImage;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::Camera;
use crate::voxel::{GridGeometry, VoxelGrid};

/// Precomputed voxel lists for every pixel of one camera over one grid
/// geometry, stored as a flat index array with per-pixel offsets.
#[derive(Debug, Clone)]
pub struct RayCache {
    geometry: GridGeometry,
    width: usize,
    height: usize,
    offsets: Vec<usize>,
    voxels: Vec<u32>,
}

impl RayCache {
    pub fn new(geometry: &GridGeometry, cam: &Camera) -> Self {
        Self::with_execution(geometry, cam, Execution::default())
    }

    pub fn with_execution(geometry: &GridGeometry, cam: &Camera, exec: Execution) -> Self {
        let per_pixel: Vec<Vec<u32>> = exec.map_range(cam.pixel_count(), |p| {
            let ray = cam.ray_for_index(p);
            let mut list = Vec::new();
            walk(geometry, &ray, |idx, _, _| list.push(idx as u32));
            list
        });
        let mut offsets = Vec::with_capacity(per_pixel.len() + 1);
        offsets.push(0);
        let mut voxels = Vec::with_capacity(per_pixel.iter().map(Vec::len).sum());
        for list in per_pixel {
            voxels.extend_from_slice(&list);
            offsets.push(voxels.len());
        }
        RayCache {
            geometry: *geometry,
            width: cam.width(),
            height: cam.height(),
            offsets,
            voxels,
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Linear voxel indices crossed by pixel `p`, nearest first.
    pub fn pixel_voxels(&self, p: usize) -> &[u32] {
        &self.voxels[self.offsets[p]..self.offsets[p + 1]]
    }

    fn check(&self, grid: &VoxelGrid) -> Result<()> {
        if grid.n() != self.geometry.n || grid.extent() != self.geometry.extent {
            return Err(Error::mismatch(format!(
                "ray cache built for n={} but grid has n={}",
                self.geometry.n,
                grid.n()
            )));
        }
        Ok(())
    }

    /// First voxel along pixel `p` attaining the maximum, with that maximum.
    #[inline]
    fn argmax(&self, values: &[f64], p: usize) -> Option<(u32, f64)> {
        let mut best: Option<(u32, f64)> = None;
        for &v in self.pixel_voxels(p) {
            let x = values[v as usize];
            match best {
                Some((_, b)) if x <= b => {}
                _ => best = Some((v, x)),
            }
        }
        best
    }

    pub fn forward(&self, grid: &VoxelGrid, exec: Execution) -> Result<MaskImage> {
        self.check(grid)?;
        let values = grid.values();
        let pixels = exec.map_range(self.pixel_count(), |p| {
            self.argmax(values, p).map_or(0.0, |(_, m)| m)
        });
        Ok(MaskImage::from_unchecked(self.width, self.height, pixels))
    }

    /// Gradient of `<upstream, forward(grid)>` with respect to the grid.
    pub fn backward(&self, grid: &VoxelGrid, upstream: &[f64], exec: Execution) -> Result<Vec<f64>> {
        self.check(grid)?;
        if upstream.len() != self.pixel_count() {
            return Err(Error::mismatch(format!(
                "upstream gradient has {} entries, image has {} pixels",
                upstream.len(),
                self.pixel_count()
            )));
        }
        let values = grid.values();
        let winners = exec.map_range(self.pixel_count(), |p| self.argmax(values, p).map(|(v, _)| v));
        // accumulate in pixel order so the sum does not depend on scheduling
        let mut grad = vec![0.0; values.len()];
        for (p, winner) in winners.into_iter().enumerate() {
            if let Some(v) = winner {
                grad[v as usize] += upstream[p];
            }
        }
        Ok(grad)
    }

    /// Forward pass plus per-pixel winning voxel, for callers that need both.
    pub(crate) fn forward_with_winners(
        &self,
        grid: &VoxelGrid,
        exec: Execution,
    ) -> Result<(MaskImage, Vec<Option<u32>>)> {
        self.check(grid)?;
        let values = grid.values();
        let both = exec.map_range(self.pixel_count(), |p| self.argmax(values, p));
        let mask = both.iter().map(|b| b.map_or(0.0, |(_, m)| m)).collect();
        let winners = both.into_iter().map(|b| b.map(|(v, _)| v)).collect();
        Ok((MaskImage::from_unchecked(self.width, self.height, mask), winners))
    }
}

/// Renders the silhouette of `grid` seen from `cam` by max pooling.
pub fn rp_forward(grid: &VoxelGrid, cam: &Camera) -> MaskImage {
    RayCache::new(grid.geometry(), cam)
        .forward(grid, Execution::default())
        .expect("cache built from the same grid")
}

/// Subgradient of raytrace pooling; `upstream` is indexed like the mask.
pub fn rp_backward(grid: &VoxelGrid, cam: &Camera, upstream: &[f64]) -> Result<Vec<f64>> {
    RayCache::new(grid.geometry(), cam).backward(grid, upstream, Execution::default())
}
