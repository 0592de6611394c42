//! Grid-sampling projector: each pixel ray is sampled at `D` evenly spaced
//! camera depths, occupancy is trilinearly interpolated at every sample, and
//! the pixel takes the maximum sample.

use nalgebra::Point3;

use super::MaskImage;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::Camera;
use crate::voxel::{GridGeometry, VoxelGrid};

/// Trilinear interpolation weights at a world point: up to eight
/// `(linear index, weight)` pairs. Empty outside the grid extent.
///
/// Voxel values sit at voxel centers. Within half a voxel of the extent
/// boundary the lattice is clamped, so the field is continuous inside the
/// extent and zero outside it.
pub fn trilinear(geometry: &GridGeometry, p: &Point3<f64>) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(8);
    trilinear_into(geometry, p, &mut out);
    out
}

fn trilinear_into(geometry: &GridGeometry, p: &Point3<f64>, out: &mut Vec<(usize, f64)>) {
    out.clear();
    if !geometry.extent.contains(p) {
        return;
    }
    let n = geometry.n;
    let side = geometry.voxel_side();
    let last = n as i64 - 1;
    let mut base = [0usize; 3];
    let mut next = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let g = (p[a] - geometry.extent.lo) / side - 0.5;
        let i0 = g.floor();
        frac[a] = g - i0;
        let i0 = i0 as i64;
        base[a] = i0.clamp(0, last) as usize;
        next[a] = (i0 + 1).clamp(0, last) as usize;
    }
    for corner in 0..8 {
        let mut w = 1.0;
        let mut c = [0usize; 3];
        for a in 0..3 {
            if corner & (4 >> a) != 0 {
                w *= frac[a];
                c[a] = next[a];
            } else {
                w *= 1.0 - frac[a];
                c[a] = base[a];
            }
        }
        if w != 0.0 {
            out.push((geometry.index(c[0], c[1], c[2]), w));
        }
    }
}

/// Depth interval covering every point of the extent's circumscribed sphere
/// as seen from the camera center.
pub fn default_depth_range(geometry: &GridGeometry, cam: &Camera) -> (f64, f64) {
    let dist = (cam.center() - geometry.extent.center()).norm();
    let reach = 3f64.sqrt() * geometry.extent.half_size();
    ((dist - reach).max(1e-6), dist + reach)
}

/// Configuration of the grid-sampling projector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingProjector {
    pub depth_samples: usize,
    pub depth_range: (f64, f64),
}

impl SamplingProjector {
    pub fn new(depth_samples: usize, depth_range: (f64, f64)) -> Result<Self> {
        if depth_samples < 2 {
            return Err(Error::precondition(format!(
                "need at least 2 depth samples, got {depth_samples}"
            )));
        }
        let (lo, hi) = depth_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::precondition(format!("invalid depth range [{lo}, {hi}]")));
        }
        Ok(SamplingProjector {
            depth_samples,
            depth_range,
        })
    }

    pub fn with_default_range(depth_samples: usize, geometry: &GridGeometry, cam: &Camera) -> Result<Self> {
        Self::new(depth_samples, default_depth_range(geometry, cam))
    }

    fn sample_point(&self, cam: &Camera, pixel: usize, k: usize) -> Point3<f64> {
        let ray = cam.ray_for_index(pixel);
        let (lo, hi) = self.depth_range;
        let depth = lo + (hi - lo) * k as f64 / (self.depth_samples - 1) as f64;
        let cos = ray.direction.dot(&cam.forward());
        ray.at(depth / cos)
    }

    /// Maximum sample along a pixel ray and the sample index attaining it
    /// (first among samples inside the extent). `None` if no sample lands
    /// inside the extent.
    fn pixel_max(&self, grid: &VoxelGrid, cam: &Camera, pixel: usize) -> Option<(usize, f64)> {
        let values = grid.values();
        let mut weights = Vec::with_capacity(8);
        let mut best: Option<(usize, f64)> = None;
        for k in 0..self.depth_samples {
            trilinear_into(grid.geometry(), &self.sample_point(cam, pixel, k), &mut weights);
            if weights.is_empty() {
                continue;
            }
            let v: f64 = weights.iter().map(|&(i, w)| w * values[i]).sum();
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((k, v)),
            }
        }
        best
    }

    pub fn forward(&self, grid: &VoxelGrid, cam: &Camera, exec: Execution) -> MaskImage {
        let pixels = exec.map_range(cam.pixel_count(), |p| {
            self.pixel_max(grid, cam, p).map_or(0.0, |(_, v)| v.clamp(0.0, 1.0))
        });
        MaskImage::from_unchecked(cam.width(), cam.height(), pixels)
    }

    /// Gradient of `<upstream, forward>`: each pixel's upstream value is
    /// split over the corners of its maximal sample by trilinear weight.
    pub fn backward(&self, grid: &VoxelGrid, cam: &Camera, upstream: &[f64], exec: Execution) -> Result<Vec<f64>> {
        if upstream.len() != cam.pixel_count() {
            return Err(Error::mismatch(format!(
                "upstream gradient has {} entries, image has {} pixels",
                upstream.len(),
                cam.pixel_count()
            )));
        }
        let winners = exec.map_range(cam.pixel_count(), |p| {
            self.pixel_max(grid, cam, p)
                .map(|(k, _)| trilinear(grid.geometry(), &self.sample_point(cam, p, k)))
        });
        let mut grad = vec![0.0; grid.values().len()];
        for (p, w) in winners.into_iter().enumerate() {
            for (i, wt) in w.into_iter().flatten() {
                grad[i] += upstream[p] * wt;
            }
        }
        Ok(grad)
    }
}

/// Renders `grid` by max pooling `depth_samples` trilinear samples per ray
/// over `depth_range` (camera depth).
pub fn gs_forward(grid: &VoxelGrid, cam: &Camera, depth_samples: usize, depth_range: (f64, f64)) -> Result<MaskImage> {
    let proj = SamplingProjector::new(depth_samples, depth_range)?;
    Ok(proj.forward(grid, cam, Execution::default()))
}

pub fn gs_backward(
    grid: &VoxelGrid,
    cam: &Camera,
    depth_samples: usize,
    depth_range: (f64, f64),
    upstream: &[f64],
) -> Result<Vec<f64>> {
    let proj = SamplingProjector::new(depth_samples, depth_range)?;
    proj.backward(grid, cam, upstream, Execution::default())
}
