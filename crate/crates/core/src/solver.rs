//! Per-instance reconstruction: Adam on the occupancy logits against the
//! reprojection loss plus the learned barrier, and silhouette-based
//! viewpoint search.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::barrier::{penalty, penalty_grad, update_penalty, BarrierConfig, Discriminator};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::losses::{Reprojection, ViewSet};
use crate::projection::{MaskImage, RayCache};
use crate::voxel::{GridGeometry, LogitGrid, VoxelGrid};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected descent step: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, hyper: AdamHyper) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::mismatch(format!(
                "adam state has {} entries, params {}, grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - hyper.beta1.powi(t);
        let c2 = 1.0 - hyper.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = hyper.beta1 * self.m[i] + (1.0 - hyper.beta1) * g;
            self.v[i] = hyper.beta2 * self.v[i] + (1.0 - hyper.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + hyper.eps);
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64], lr: f64, hyper: AdamHyper) -> Result<()> {
    state.step(params, grad, lr, hyper)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub iterations: usize,
    pub lr_f: f64,
    /// Iterations at which the learning rate is divided by `decay_factor`.
    pub decay_at: Vec<usize>,
    pub decay_factor: f64,
    /// Barrier sharpness used by the solver (overrides `BarrierConfig::t`).
    pub t: f64,
    pub batch_real: usize,
    pub adam: AdamHyper,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            iterations: 40_000,
            lr_f: 1e-2,
            decay_at: vec![10_000, 30_000],
            decay_factor: 10.0,
            t: 100.0,
            batch_real: 8,
            adam: AdamHyper::default(),
            seed: 0,
            exec: Execution::default(),
        }
    }
}

impl SolverConfig {
    /// Small-scale settings used in tests: 2000 iterations.
    pub fn test_scale(seed: u64) -> Self {
        SolverConfig {
            iterations: 2000,
            seed,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_f > 0.0) {
            return Err(Error::precondition(format!("lr_f must be positive, got {}", self.lr_f)));
        }
        if !(self.t > 0.0) {
            return Err(Error::precondition(format!("t must be positive, got {}", self.t)));
        }
        if self.batch_real == 0 {
            return Err(Error::precondition("batch_real must be at least 1"));
        }
        if !(self.decay_factor > 0.0) {
            return Err(Error::precondition("decay factor must be positive"));
        }
        Ok(())
    }

    /// Learning rate in effect at iteration `iter` (0-based).
    pub fn lr_at(&self, iter: usize) -> f64 {
        let drops = self.decay_at.iter().filter(|&&d| iter >= d).count();
        let mut lr = self.lr_f;
        for _ in 0..drops {
            lr /= self.decay_factor;
        }
        lr
    }
}

/// One training-log line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iter: usize,
    pub reproj_loss: f64,
    pub penalty: f64,
    pub disc_error: f64,
    pub gated: bool,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "iter,reproj_loss,penalty,disc_error,gated,lr";

pub fn write_log<W: Write>(log: &[LogEntry], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{LOG_HEADER}")?;
    for e in log {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{},{:e}",
            e.iter, e.reproj_loss, e.penalty, e.disc_error, e.gated as u8, e.lr
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub grid: VoxelGrid,
    pub logits: LogitGrid,
    pub log: Vec<LogEntry>,
    pub discriminator: Option<Discriminator>,
}

fn check_views(geometry: &GridGeometry, views: &ViewSet) -> Result<()> {
    if views.is_empty() {
        return Err(Error::Empty("view set"));
    }
    let _ = geometry;
    Ok(())
}

fn finite(iter: usize, what: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { iteration: iter, what: what.to_string() })
    }
}

/// Reconstruction with the learned barrier. The discriminator is created
/// from the run seed.
pub fn reconstruct(
    views: &ViewSet,
    pool: &[VoxelGrid],
    cfg: &SolverConfig,
    bcfg: &BarrierConfig,
) -> Result<Reconstruction> {
    let first = pool.first().ok_or(Error::Empty("shape pool"))?;
    let disc = Discriminator::new(first.n(), cfg.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    reconstruct_with(views, pool, cfg, bcfg, disc)
}

/// As [`reconstruct`], starting from a given discriminator.
pub fn reconstruct_with(
    views: &ViewSet,
    pool: &[VoxelGrid],
    cfg: &SolverConfig,
    bcfg: &BarrierConfig,
    mut disc: Discriminator,
) -> Result<Reconstruction> {
    cfg.validate()?;
    bcfg.validate()?;
    let first = pool.first().ok_or(Error::Empty("shape pool"))?;
    let geometry = *first.geometry();
    for g in pool {
        first.same_shape(g)?;
    }
    if disc.grid_n() != geometry.n {
        return Err(Error::mismatch("discriminator and pool resolutions differ"));
    }
    check_views(&geometry, views)?;
    let reproj = Reprojection::with_execution(&geometry, views, cfg.exec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logits = LogitGrid::zeros(geometry);
    let mut adam = AdamState::new(geometry.voxel_count());
    let mut recent: VecDeque<VoxelGrid> = VecDeque::with_capacity(cfg.batch_real);
    let mut log = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let occupancy = logits.occupancy();
        if recent.len() == cfg.batch_real {
            recent.pop_front();
        }
        recent.push_back(occupancy.clone());
        let real: Vec<VoxelGrid> = (0..cfg.batch_real)
            .map(|_| pool[rng.random_range(0..pool.len())].clone())
            .collect();
        let fake: Vec<VoxelGrid> = recent.iter().cloned().collect();
        let step_cfg = BarrierConfig {
            t: cfg.t,
            sigma_noise: bcfg.noise_at(iter, cfg.iterations),
            ..*bcfg
        };
        let diag = update_penalty(&mut disc, &fake, &real, &step_cfg, &mut rng)?;

        let (loss, mut grad) = reproj.loss_and_grad(&logits)?;
        let pen = penalty(&disc, &occupancy, cfg.t)?;
        let pgrad = penalty_grad(&disc, &logits, cfg.t)?;
        finite(iter, "reprojection loss", loss)?;
        finite(iter, "penalty", pen)?;
        for (g, p) in grad.iter_mut().zip(&pgrad) {
            *g += p;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { iteration: iter, what: "gradient".to_string() });
        }
        let lr = cfg.lr_at(iter);
        adam.step(logits.logits_mut(), &grad, lr, cfg.adam)?;
        log.push(LogEntry {
            iter,
            reproj_loss: loss,
            penalty: pen,
            disc_error: diag.error,
            gated: diag.gated,
            lr,
        });
    }
    Ok(Reconstruction {
        grid: logits.occupancy(),
        logits,
        log,
        discriminator: Some(disc),
    })
}

/// Reconstruction from the masks alone.
pub fn reconstruct_unconstrained(views: &ViewSet, geometry: GridGeometry, cfg: &SolverConfig) -> Result<Reconstruction> {
    cfg.validate()?;
    check_views(&geometry, views)?;
    let reproj = Reprojection::with_execution(&geometry, views, cfg.exec)?;
    let mut logits = LogitGrid::zeros(geometry);
    let mut adam = AdamState::new(geometry.voxel_count());
    let mut log = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let (loss, grad) = reproj.loss_and_grad(&logits)?;
        finite(iter, "reprojection loss", loss)?;
        let lr = cfg.lr_at(iter);
        adam.step(logits.logits_mut(), &grad, lr, cfg.adam)?;
        log.push(LogEntry {
            iter,
            reproj_loss: loss,
            penalty: 0.0,
            disc_error: 0.0,
            gated: true,
            lr,
        });
    }
    Ok(Reconstruction {
        grid: logits.occupancy(),
        logits,
        log,
        discriminator: None,
    })
}

/// Discretized camera search space: look-at cameras around the grid
/// center with fixed intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewpointSearch {
    pub bins: usize,
    /// Degrees.
    pub azimuth: (f64, f64),
    /// Degrees.
    pub elevation: (f64, f64),
    pub distance: (f64, f64),
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl ViewpointSearch {
    /// Search space matched to the dataset camera ring: azimuth covers the
    /// full circle, elevation spans -30..60 degrees, distance 0.6..1.5 of
    /// the ring distance.
    pub fn for_dataset(geometry: &GridGeometry, image_size: usize, bins: usize) -> Self {
        let d = crate::dataset::ring_distance(geometry);
        ViewpointSearch {
            bins,
            azimuth: (0.0, 360.0 * (bins as f64 - 1.0) / bins as f64),
            elevation: (-30.0, 60.0),
            distance: (0.6 * d, 1.5 * d),
            focal: crate::dataset::ring_focal(geometry, image_size),
            width: image_size,
            height: image_size,
        }
    }

    fn value(&self, range: (f64, f64), k: usize) -> f64 {
        range.0 + (range.1 - range.0) * k as f64 / (self.bins - 1) as f64
    }

    /// Camera for bin indices `(az, el, depth)`.
    pub fn candidate(&self, geometry: &GridGeometry, az: usize, el: usize, depth: usize) -> Result<Camera> {
        look_at_orbit(
            geometry.extent.center(),
            self.value(self.azimuth, az),
            self.value(self.elevation, el),
            self.value(self.distance, depth),
            self.focal,
            self.width,
            self.height,
        )
    }
}

/// Camera on a sphere around `center` looking at it, world up `+z`.
pub fn look_at_orbit(
    center: Point3<f64>,
    azimuth_deg: f64,
    elevation_deg: f64,
    distance: f64,
    focal: f64,
    width: usize,
    height: usize,
) -> Result<Camera> {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let eye = center + distance * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    Camera::look_at(eye, center, Vector3::z(), focal, width, height)
}

/// Result of a viewpoint search.
#[derive(Debug, Clone)]
pub struct ViewpointEstimate {
    pub camera: Camera,
    pub bin: [usize; 3],
    pub score: f64,
}

/// Exhaustive search for the candidate camera whose rendering of
/// `reference` best matches `mask` in squared error. Ties go to the lowest
/// `(az, el, depth)` index.
pub fn estimate_viewpoint(mask: &MaskImage, reference: &VoxelGrid, search: &ViewpointSearch) -> Result<ViewpointEstimate> {
    if search.bins < 2 {
        return Err(Error::precondition(format!("need at least 2 bins, got {}", search.bins)));
    }
    if !reference.is_binary() {
        return Err(Error::precondition("reference grid must be binary"));
    }
    if mask.width() != search.width || mask.height() != search.height {
        return Err(Error::mismatch(format!(
            "mask is {}x{}, search renders {}x{}",
            mask.width(),
            mask.height(),
            search.width,
            search.height
        )));
    }
    let geometry = *reference.geometry();
    let b = search.bins;
    let scores = Execution::default().map_range(b * b * b, |k| -> Result<f64> {
        let (az, el, depth) = (k / (b * b), (k / b) % b, k % b);
        let cam = search.candidate(&geometry, az, el, depth)?;
        let render = RayCache::with_execution(&geometry, &cam, Execution::Sequential)
            .forward(reference, Execution::Sequential)?;
        Ok(render
            .values()
            .iter()
            .zip(mask.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    });
    let mut best = (0usize, f64::INFINITY);
    for (k, s) in scores.into_iter().enumerate() {
        let s = s?;
        if s < best.1 {
            best = (k, s);
        }
    }
    let bin = [best.0 / (b * b), (best.0 / b) % b, best.0 % b];
    Ok(ViewpointEstimate {
        camera: search.candidate(&geometry, bin[0], bin[1], bin[2])?,
        bin,
        score: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::iou;
    use crate::projection::rp_forward;
    use crate::voxel::{gen_shape, Extent, ShapeKind, ShapeParams};

    fn geom(n: usize) -> GridGeometry {
        GridGeometry::new(n, Extent::default()).unwrap()
    }

    fn ring_views(shape: &VoxelGrid, count: usize, size: usize) -> ViewSet {
        let geo = shape.geometry();
        let cams = crate::dataset::camera_ring(geo, count, size).unwrap();
        ViewSet::new(cams.into_iter().map(|c| {
            let m = rp_forward(shape, &c);
            (c, m)
        }).collect()).unwrap()
    }

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut s = AdamState::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..50 {
            s.step(&mut p, &[0.0; 3], 0.1, AdamHyper::default()).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(s.steps(), 50);
        assert!(s.step(&mut p, &[0.0; 2], 0.1, AdamHyper::default()).is_err());
    }

    #[test]
    fn adam_minimizes_scalar_quadratic() {
        let mut s = AdamState::new(1);
        let mut w = [1.0];
        s.step(&mut w, &[2.0], 0.1, AdamHyper::default()).unwrap();
        // bias-corrected first step has magnitude lr * |g| / (|g| + eps)
        assert!((w[0] - (1.0 - 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
        assert!((w[0] - 0.9).abs() < 1e-8);
        for _ in 1..200 {
            let g = [2.0 * w[0]];
            s.step(&mut w, &g, 0.1, AdamHyper::default()).unwrap();
        }
        assert!(w[0].abs() < 1e-3, "{}", w[0]);
        assert!(s.second_moment().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn schedule_drops_exactly() {
        let cfg = SolverConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-2);
        assert_eq!(cfg.lr_at(9999), 1e-2);
        assert_eq!(cfg.lr_at(10_000), 1e-2 / 10.0);
        assert_eq!(cfg.lr_at(29_999), 1e-2 / 10.0);
        assert_eq!(cfg.lr_at(30_000), 1e-2 / 10.0 / 10.0);
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let geo = geom(8);
        let shape = gen_shape(&ShapeParams::default_for(ShapeKind::Box), geo).unwrap();
        let views = ring_views(&shape, 2, 16);
        let cfg = SolverConfig { iterations: 0, ..SolverConfig::default() };
        let r = reconstruct_unconstrained(&views, geo, &cfg).unwrap();
        assert!(r.grid.values().iter().all(|&v| v == 0.5));
        assert!(r.log.is_empty());
    }

    #[test]
    fn empty_pool_is_rejected() {
        let geo = geom(8);
        let shape = gen_shape(&ShapeParams::default_for(ShapeKind::Box), geo).unwrap();
        let views = ring_views(&shape, 1, 16);
        assert!(matches!(
            reconstruct(&views, &[], &SolverConfig::test_scale(0), &BarrierConfig::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn many_views_recover_a_box() {
        let geo = geom(16);
        let shape = gen_shape(&ShapeParams::default_for(ShapeKind::Box), geo).unwrap();
        let views = ring_views(&shape, 24, 32);
        let cfg = SolverConfig { iterations: 400, ..SolverConfig::test_scale(1) };
        let r = reconstruct_unconstrained(&views, geo, &cfg).unwrap();
        assert!(iou(&r.grid, &shape, 0.4).unwrap() > 0.8);
    }

    #[test]
    fn single_view_keeps_cup_interior() {
        let geo = geom(16);
        let params = ShapeParams::default_for(ShapeKind::Cup);
        let cup = gen_shape(&params, geo).unwrap();
        let views = ring_views(&cup, 1, 32);
        let cfg = SolverConfig { iterations: 300, ..SolverConfig::test_scale(1) };
        let r = reconstruct_unconstrained(&views, geo, &cfg).unwrap();
        let bin = r.grid.binarize(0.4).unwrap();
        // the open interior directly above the bottom is never seen as empty
        let c = 8;
        let bottom = (0..16).find(|&z| cup.get(c, c, z) == 1.0).unwrap();
        let above = (bottom..16).find(|&z| cup.get(c, c, z) == 0.0).unwrap();
        let rim = (0..16).rev().find(|&z| (0..16).any(|x| cup.get(x, c, z) == 1.0)).unwrap();
        for z in above..rim {
            assert_eq!(bin.get(c, c, z), 1.0, "z={z}");
        }
    }

    #[test]
    fn reconstruction_is_deterministic() {
        let geo = geom(8);
        let shape = gen_shape(&ShapeParams::default_for(ShapeKind::Cup), geo).unwrap();
        let views = ring_views(&shape, 2, 16);
        let pool = vec![shape.clone()];
        let cfg = SolverConfig { iterations: 60, ..SolverConfig::test_scale(5) };
        let a = reconstruct(&views, &pool, &cfg, &BarrierConfig::default()).unwrap();
        let b = reconstruct(&views, &pool, &cfg, &BarrierConfig::default()).unwrap();
        assert_eq!(a.grid, b.grid);
        assert_eq!(a.log, b.log);
        assert!(a.log.iter().all(|e| (e.reproj_loss + e.penalty).is_finite()));
    }

    #[test]
    fn huge_t_matches_unconstrained_loss() {
        let geo = geom(8);
        let shape = gen_shape(&ShapeParams::default_for(ShapeKind::ChairL), geo).unwrap();
        let views = ring_views(&shape, 3, 16);
        // large enough that the barrier gradient underflows against Adam's eps;
        // at moderate t it still breaks max-pooling ties of the 0.5 start
        let cfg = SolverConfig { iterations: 200, t: 1e300, ..SolverConfig::test_scale(2) };
        let with = reconstruct(&views, &[shape.clone()], &cfg, &BarrierConfig::default()).unwrap();
        let without = reconstruct_unconstrained(&views, geo, &cfg).unwrap();
        let a = with.log.last().unwrap().reproj_loss;
        let b = without.log.last().unwrap().reproj_loss;
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }

    #[test]
    fn frozen_discriminator_run_is_reproducible() {
        let geo = geom(8);
        let shape = gen_shape(&ShapeParams::default_for(ShapeKind::Box), geo).unwrap();
        let views = ring_views(&shape, 2, 16);
        let disc = Discriminator::new(8, 11).unwrap();
        // threshold above any reachable error keeps the gate closed
        let bcfg = BarrierConfig { gate_threshold: 0.499, ..BarrierConfig::default() };
        let cfg = SolverConfig { iterations: 40, ..SolverConfig::test_scale(3) };
        let a = reconstruct_with(&views, &[shape.clone()], &cfg, &bcfg, disc.clone()).unwrap();
        let b = reconstruct_with(&views, &[shape], &cfg, &bcfg, disc.clone()).unwrap();
        assert_eq!(a.grid, b.grid);
        if a.log.iter().all(|e| e.gated) {
            assert_eq!(a.discriminator.unwrap(), disc);
        }
    }

    #[test]
    fn viewpoint_on_grid_is_recovered() {
        let geo = geom(16);
        let shape = gen_shape(&ShapeParams::default_for(ShapeKind::ChairL), geo).unwrap();
        let search = ViewpointSearch { bins: 4, ..ViewpointSearch::for_dataset(&geo, 24, 4) };
        let truth = search.candidate(&geo, 1, 2, 1).unwrap();
        let mask = rp_forward(&shape, &truth);
        let est = estimate_viewpoint(&mask, &shape, &search).unwrap();
        assert_eq!(est.score, 0.0);
        assert_eq!(est.bin, [1, 2, 1]);
    }

    #[test]
    fn empty_mask_prefers_the_farthest_camera() {
        let geo = geom(8);
        let shape = gen_shape(&ShapeParams::default_for(ShapeKind::Box), geo).unwrap();
        let search = ViewpointSearch::for_dataset(&geo, 16, 3);
        let est = estimate_viewpoint(&MaskImage::zeros(16, 16), &shape, &search).unwrap();
        assert_eq!(est.bin[2], 2);
        assert!(estimate_viewpoint(&MaskImage::zeros(16, 16), &shape, &ViewpointSearch { bins: 1, ..search }).is_err());
    }
}
