//! Silhouette cross-entropy and the multi-view reprojection loss.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::Camera;
use crate::projection::{MaskImage, RayCache};
use crate::voxel::{GridGeometry, LogitGrid, VoxelGrid};

/// Probability clamp used inside logarithms.
pub const CE_EPS: f64 = 1e-7;

/// Observed silhouettes with their cameras.
#[derive(Debug, Clone)]
pub struct ViewSet {
    views: Vec<(Camera, MaskImage)>,
}

impl ViewSet {
    pub fn new(views: Vec<(Camera, MaskImage)>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Empty("view set"));
        }
        for (cam, mask) in &views {
            mask.matches_camera(cam)?;
        }
        Ok(ViewSet { views })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Camera, MaskImage)> {
        self.views.iter()
    }

    pub fn views(&self) -> &[(Camera, MaskImage)] {
        &self.views
    }

    pub fn cameras(&self) -> impl Iterator<Item = &Camera> {
        self.views.iter().map(|(c, _)| c)
    }

    pub fn push(&mut self, cam: Camera, mask: MaskImage) -> Result<()> {
        mask.matches_camera(&cam)?;
        self.views.push((cam, mask));
        Ok(())
    }
}

#[inline]
fn clamp_p(p: f64) -> f64 {
    p.clamp(CE_EPS, 1.0 - CE_EPS)
}

#[inline]
fn ce_term(p: f64, t: f64) -> f64 {
    let q = clamp_p(p);
    -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
}

/// Derivative of `ce_term` in `p`; zero where the clamp is active.
#[inline]
fn ce_slope(p: f64, t: f64) -> f64 {
    if !(CE_EPS..=1.0 - CE_EPS).contains(&p) {
        return 0.0;
    }
    -t / p + (1.0 - t) / (1.0 - p)
}

fn check_target(target: &MaskImage) -> Result<()> {
    if !target.is_binary() {
        return Err(Error::precondition("target silhouette must be binary"));
    }
    Ok(())
}

/// Mean per-pixel binary cross-entropy.
pub fn pixel_ce(pred: &MaskImage, target: &MaskImage) -> Result<f64> {
    pred.same_size(target)?;
    check_target(target)?;
    let n = pred.values().len() as f64;
    Ok(pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&p, &t)| ce_term(p, t))
        .sum::<f64>()
        / n)
}

/// Reprojection loss and its gradient for a fixed view set, with the
/// per-view traversals computed once.
#[derive(Debug, Clone)]
pub struct Reprojection {
    caches: Vec<RayCache>,
    targets: Vec<MaskImage>,
    exec: Execution,
}

impl Reprojection {
    pub fn new(geometry: &GridGeometry, views: &ViewSet) -> Result<Self> {
        Self::with_execution(geometry, views, Execution::default())
    }

    pub fn with_execution(geometry: &GridGeometry, views: &ViewSet, exec: Execution) -> Result<Self> {
        for (_, mask) in views.iter() {
            check_target(mask)?;
        }
        let cams: Vec<&Camera> = views.cameras().collect();
        let caches = exec.map_slice(&cams, |c| RayCache::with_execution(geometry, c, Execution::Sequential));
        Ok(Reprojection {
            caches,
            targets: views.iter().map(|(_, m)| m.clone()).collect(),
            exec,
        })
    }

    pub fn view_count(&self) -> usize {
        self.caches.len()
    }

    /// Silhouettes of `grid` in every view.
    pub fn render(&self, grid: &VoxelGrid) -> Result<Vec<MaskImage>> {
        self.caches.iter().map(|c| c.forward(grid, self.exec)).collect()
    }

    pub fn loss(&self, grid: &VoxelGrid) -> Result<f64> {
        let mut total = 0.0;
        for (cache, target) in self.caches.iter().zip(&self.targets) {
            total += pixel_ce(&cache.forward(grid, self.exec)?, target)?;
        }
        Ok(total / self.caches.len() as f64)
    }

    /// Loss and gradient with respect to occupancy.
    pub fn loss_and_occupancy_grad(&self, grid: &VoxelGrid) -> Result<(f64, Vec<f64>)> {
        let m = self.caches.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; grid.values().len()];
        for (cache, target) in self.caches.iter().zip(&self.targets) {
            let (pred, winners) = cache.forward_with_winners(grid, self.exec)?;
            let npix = pred.values().len() as f64;
            let mut view_loss = 0.0;
            for (p, (&v, &t)) in pred.values().iter().zip(target.values()).enumerate() {
                view_loss += ce_term(v, t);
                if let Some(w) = winners[p] {
                    grad[w as usize] += ce_slope(v, t) / (npix * m);
                }
            }
            loss += view_loss / npix;
        }
        Ok((loss / m, grad))
    }

    /// Loss and gradient with respect to the logits.
    pub fn loss_and_grad(&self, logits: &LogitGrid) -> Result<(f64, Vec<f64>)> {
        let (loss, g) = self.loss_and_occupancy_grad(&logits.occupancy())?;
        Ok((loss, logits.pullback(&g)))
    }
}

/// Mean over views of the silhouette cross-entropy of `grid`.
pub fn reproj_loss(grid: &VoxelGrid, views: &ViewSet) -> Result<f64> {
    Reprojection::new(grid.geometry(), views)?.loss(grid)
}

/// Gradient of the reprojection loss with respect to occupancy logits.
pub fn reproj_grad(logits: &LogitGrid, views: &ViewSet) -> Result<Vec<f64>> {
    Ok(Reprojection::new(logits.geometry(), views)?.loss_and_grad(logits)?.1)
}
