//! Classical baselines: silhouette carving (visual hull) and nearest-shape
//! retrieval.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::Camera;
use crate::losses::ViewSet;
use crate::metrics::{iou_sets, IOU_THRESHOLD};
use crate::projection::MaskImage;
use crate::voxel::{GridGeometry, VoxelGrid};

fn foreground_at(mask: &MaskImage, u: f64, v: f64) -> bool {
    if !(u >= 0.0 && v >= 0.0) {
        return false;
    }
    let (i, j) = (u.floor() as usize, v.floor() as usize);
    i < mask.width() && j < mask.height() && mask.get(i, j) >= 0.5
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise convex hull (monotone chain).
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn inside_hull(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    match hull.len() {
        0 => false,
        1 => hull[0] == p,
        2 => cross(hull[0], hull[1], p).abs() < 1e-12,
        k => (0..k).all(|i| cross(hull[i], hull[(i + 1) % k], p) >= -1e-12),
    }
}

/// Whether a voxel is consistent with one silhouette.
///
/// The voxel is kept if its center or any corner projects onto foreground,
/// or if any pixel whose center lies inside the projected footprint is
/// foreground. Voxels straddling the camera plane are always kept.
fn survives_view(geometry: &GridGeometry, voxel: [usize; 3], cam: &Camera, mask: &MaskImage) -> bool {
    let [x, y, z] = voxel;
    let corners = geometry.voxel_corners(x, y, z);
    let mut projected = Vec::with_capacity(8);
    for c in corners.iter() {
        match cam.project_point(c) {
            Ok(p) => projected.push((p.u, p.v)),
            Err(_) => return true,
        }
    }
    let center = cam
        .project_point(&geometry.voxel_center(x, y, z))
        .expect("center in front when all corners are");
    if std::iter::once((center.u, center.v))
        .chain(projected.iter().copied())
        .any(|(u, v)| foreground_at(mask, u, v))
    {
        return true;
    }
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(u, v) in &projected {
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    // pixel i has its center at i + 0.5
    let i0 = (umin - 0.5).ceil().max(0.0);
    let i1 = (umax - 0.5).floor().min(mask.width() as f64 - 1.0);
    let j0 = (vmin - 0.5).ceil().max(0.0);
    let j1 = (vmax - 0.5).floor().min(mask.height() as f64 - 1.0);
    if i0 > i1 || j0 > j1 {
        return false;
    }
    let hull = convex_hull(projected);
    for j in j0 as usize..=j1 as usize {
        for i in i0 as usize..=i1 as usize {
            if mask.get(i, j) >= 0.5 && inside_hull(&hull, (i as f64 + 0.5, j as f64 + 0.5)) {
                return true;
            }
        }
    }
    false
}

/// Visual hull of the silhouettes on an `n`-voxel grid.
pub fn carve(geometry: GridGeometry, views: &ViewSet) -> Result<VoxelGrid> {
    carve_with(geometry, views, Execution::default())
}

pub fn carve_with(geometry: GridGeometry, views: &ViewSet, exec: Execution) -> Result<VoxelGrid> {
    if views.is_empty() {
        return Err(Error::Empty("view set"));
    }
    for (_, mask) in views.iter() {
        if !mask.is_binary() {
            return Err(Error::precondition("carving needs binary silhouettes"));
        }
    }
    let values = exec.map_range(geometry.voxel_count(), |idx| {
        let voxel = geometry.coords(idx);
        let keep = views
            .iter()
            .all(|(cam, mask)| survives_view(&geometry, voxel, cam, mask));
        if keep {
            1.0
        } else {
            0.0
        }
    });
    VoxelGrid::new(geometry, values)
}

/// Pool member with the highest IOU against `pred` binarized at 0.4. Ties go
/// to the lowest index.
pub fn nn_retrieve<'a>(pred: &VoxelGrid, pool: &'a [VoxelGrid]) -> Result<(usize, &'a VoxelGrid)> {
    if pool.is_empty() {
        return Err(Error::Empty("retrieval pool"));
    }
    let bin = pred.binarize(IOU_THRESHOLD)?;
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, cand) in pool.iter().enumerate() {
        bin.same_shape(cand)?;
        let score = iou_sets(
            bin.values().iter().map(|&v| v == 1.0),
            cand.values().iter().map(|&v| v >= 0.5),
        );
        if score > best.1 {
            best = (k, score);
        }
    }
    Ok((best.0, &pool[best.0]))
}

/// Convenience for tests and the CLI: true if every occupied voxel of
/// `inner` is occupied in `outer`.
pub fn contains(outer: &VoxelGrid, inner: &VoxelGrid) -> bool {
    outer
        .values()
        .iter()
        .zip(inner.values())
        .all(|(&o, &i)| i == 0.0 || o > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::iou;
    use crate::projection::rp_forward;
    use crate::voxel::{gen_shape, shape_pool, Extent, ShapeKind, ShapeParams};
    use nalgebra::{Point3, Vector3};

    fn geom(n: usize) -> GridGeometry {
        GridGeometry::new(n, Extent::default()).unwrap()
    }

    fn ring(count: usize, size: usize, elevation_deg: f64) -> Vec<Camera> {
        let el = elevation_deg.to_radians();
        (0..count)
            .map(|k| {
                let az = k as f64 * std::f64::consts::TAU / count as f64;
                let eye = Point3::new(2.2 * el.cos() * az.cos(), 2.2 * el.cos() * az.sin(), 2.2 * el.sin());
                Camera::look_at(eye, Point3::origin(), Vector3::z(), size as f64 * 1.1, size, size).unwrap()
            })
            .collect()
    }

    fn views_of(shape: &VoxelGrid, cams: &[Camera]) -> ViewSet {
        ViewSet::new(cams.iter().map(|c| (c.clone(), rp_forward(shape, c))).collect()).unwrap()
    }

    #[test]
    fn hull_contains_the_shape() {
        let geo = geom(16);
        for kind in [ShapeKind::Box, ShapeKind::Cup, ShapeKind::ChairL, ShapeKind::ThinPlate] {
            let s = gen_shape(&ShapeParams::default_for(kind), geo).unwrap();
            let hull = carve(geo, &views_of(&s, &ring(6, 48, 30.0))).unwrap();
            assert!(contains(&hull, &s), "{kind}");
        }
    }

    #[test]
    fn all_foreground_keeps_everything_in_view() {
        let geo = geom(8);
        let cam = ring(1, 32, 30.0).remove(0);
        let views = ViewSet::new(vec![(cam, MaskImage::new(32, 32, vec![1.0; 1024]).unwrap())]).unwrap();
        let hull = carve(geo, &views).unwrap();
        assert_eq!(hull.occupied_count(), 512);
    }

    #[test]
    fn cup_interior_survives_carving() {
        let geo = geom(16);
        let params = ShapeParams::default_for(ShapeKind::Cup);
        let cup = gen_shape(&params, geo).unwrap();
        let hull = carve(geo, &views_of(&cup, &ring(24, 48, 30.0))).unwrap();
        assert!(contains(&hull, &cup));
        // central column between the bottom and the rim
        let c = 8;
        let top = (0..16).rev().find(|&z| (0..16).any(|x| cup.get(x, c, z) == 1.0)).unwrap();
        for z in 0..=top {
            assert_eq!(hull.get(c, c, z), 1.0, "z={z}");
        }
        let score = iou(&hull, &cup, 0.4).unwrap();
        let inter = hull.values().iter().zip(cup.values()).filter(|(a, b)| **a == 1.0 && **b == 1.0).count();
        let union = hull.values().iter().zip(cup.values()).filter(|(a, b)| **a == 1.0 || **b == 1.0).count();
        assert_eq!(score, inter as f64 / union as f64);
        assert!(score < 1.0);
    }

    #[test]
    fn more_views_never_grow_the_hull() {
        let geo = geom(16);
        let s = gen_shape(&ShapeParams::default_for(ShapeKind::ChairL), geo).unwrap();
        let cams = ring(5, 32, 25.0);
        let few = carve(geo, &views_of(&s, &cams[..2])).unwrap();
        let many = carve(geo, &views_of(&s, &cams)).unwrap();
        assert!(contains(&few, &many));
        assert_eq!(many, carve(geo, &views_of(&s, &cams)).unwrap());
    }

    #[test]
    fn retrieval_picks_exact_member() {
        let geo = geom(16);
        let pool = shape_pool(4, 6, &[ShapeKind::Box, ShapeKind::Cup], geo).unwrap().grids;
        let (k, g) = nn_retrieve(&pool[3], &pool).unwrap();
        assert_eq!(k, 3);
        assert_eq!(iou(g, &pool[3], 0.4).unwrap(), 1.0);
        let (k, _) = nn_retrieve(&VoxelGrid::empty(geo), &pool).unwrap();
        assert_eq!(k, 0);
        assert!(nn_retrieve(&pool[0], &[]).is_err());
    }
}
