//! Synthetic datasets: a procedural shape seen from a ring of cameras.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::io::{write_camera, write_pgm, write_voxels};
use crate::projection::rp_forward;
use crate::solver::look_at_orbit;
use crate::voxel::{gen_shape, GridGeometry, ShapeKind, ShapeParams, VoxelGrid};

pub const RING_ELEVATION_DEG: f64 = 30.0;
/// Camera distance in units of the grid half-diagonal.
pub const RING_DISTANCE_FACTOR: f64 = 2.5;
/// Margin of the bounding sphere inside the field of view.
const FOV_MARGIN: f64 = 1.1;

fn half_diagonal(geometry: &GridGeometry) -> f64 {
    3f64.sqrt() * geometry.extent.half_size()
}

pub fn ring_distance(geometry: &GridGeometry) -> f64 {
    RING_DISTANCE_FACTOR * half_diagonal(geometry)
}

/// Focal length at which the grid's bounding sphere fits the image, seen
/// from the ring distance.
pub fn ring_focal(geometry: &GridGeometry, image_size: usize) -> f64 {
    let r = half_diagonal(geometry);
    let d = ring_distance(geometry);
    let tan_half = FOV_MARGIN * r / (d * d - r * r).sqrt();
    image_size as f64 / 2.0 / tan_half
}

/// Default image side: four pixels per voxel.
pub fn default_image_size(n: usize) -> usize {
    4 * n
}

/// `count` cameras at 30 degrees elevation with uniform azimuths starting at 0.
pub fn camera_ring(geometry: &GridGeometry, count: usize, image_size: usize) -> Result<Vec<Camera>> {
    if count == 0 {
        return Err(Error::precondition("camera ring needs at least one view"));
    }
    if image_size == 0 {
        return Err(Error::precondition("image size must be positive"));
    }
    let focal = ring_focal(geometry, image_size);
    (0..count)
        .map(|k| {
            look_at_orbit(
                geometry.extent.center(),
                360.0 * k as f64 / count as f64,
                RING_ELEVATION_DEG,
                ring_distance(geometry),
                focal,
                image_size,
                image_size,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ViewFiles {
    pub camera: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub shape: String,
    pub n: usize,
    pub seed: u64,
    pub image_size: usize,
    pub voxels: PathBuf,
    pub views: Vec<ViewFiles>,
}

impl Manifest {
    /// `cam.json:mask.pgm,...` list for the CLI.
    pub fn view_list(&self) -> String {
        self.views
            .iter()
            .map(|v| format!("{}:{}", v.camera.display(), v.mask.display()))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Writes a random shape of `kind`, its cameras and its silhouettes into
/// `out`, plus `manifest.json`. Paths in the manifest are relative to `out`.
pub fn gen_data(
    kind: ShapeKind,
    geometry: GridGeometry,
    views: usize,
    seed: u64,
    image_size: usize,
    out: &Path,
) -> Result<Manifest> {
    if views == 0 {
        return Err(Error::precondition("gen-data needs at least one view"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ShapeParams::random(kind, geometry.n, &mut rng);
    let shape = gen_shape(&params, geometry)?;
    let cams = camera_ring(&geometry, views, image_size)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_voxels(&out.join("shape.vox"), &shape)?;
    let mut files = Vec::with_capacity(views);
    for (k, cam) in cams.iter().enumerate() {
        let camera = PathBuf::from(format!("cam_{k:03}.json"));
        let mask = PathBuf::from(format!("mask_{k:03}.pgm"));
        write_camera(&out.join(&camera), cam)?;
        write_pgm(&out.join(&mask), &rp_forward(&shape, cam))?;
        files.push(ViewFiles { camera, mask });
    }
    let manifest = Manifest {
        shape: kind.to_string(),
        n: geometry.n,
        seed,
        image_size,
        voxels: PathBuf::from("shape.vox"),
        views: files,
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Writes `count` random shapes as `shape_0000.vox`, ... into `out`.
pub fn gen_pool(kinds: &[ShapeKind], geometry: GridGeometry, count: usize, seed: u64, out: &Path) -> Result<Vec<VoxelGrid>> {
    let pool = crate::voxel::shape_pool(seed, count, kinds, geometry)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (k, g) in pool.grids.iter().enumerate() {
        write_voxels(&out.join(format!("shape_{k:04}.vox")), g)?;
    }
    Ok(pool.grids)
}
