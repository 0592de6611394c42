//! Ray/grid traversal: a slab test against the grid bounding box followed by
//! incremental grid stepping (3D DDA).

use crate::geometry::Ray;
use crate::voxel::GridGeometry;

/// One voxel crossed by a ray, with the ray parameters where it enters and
/// leaves the voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelHit {
    pub voxel: [usize; 3],
    pub t_in: f64,
    pub t_out: f64,
}

/// Voxels crossed by a ray, sorted by entry parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraversalRecord {
    pub hits: Vec<VoxelHit>,
}

impl TraversalRecord {
    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }
}

/// Parameter interval `(t_near, t_far)` where the ray is inside the
/// axis-aligned box `[lo, hi]`, clipped to `t >= 0`. `None` if the ray misses
/// or only touches the box.
pub fn slab_interval(ray: &Ray, lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let mut t_near = 0.0f64;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.direction[a];
        if d == 0.0 {
            if o < lo[a] || o > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (t0, t1) = {
            let t0 = (lo[a] - o) * inv;
            let t1 = (hi[a] - o) * inv;
            if t0 <= t1 { (t0, t1) } else { (t1, t0) }
        };
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
    }
    (t_far > t_near).then_some((t_near, t_far))
}

/// Walks the grid along `ray`, calling `visit(linear_index, t_in, t_out)` for
/// each crossed voxel in order. Zero-length crossings (a ray passing exactly
/// through a voxel edge or corner) are skipped.
pub(crate) fn walk<F: FnMut(usize, f64, f64)>(geometry: &GridGeometry, ray: &Ray, mut visit: F) {
    let n = geometry.n;
    let lo = geometry.extent.lo;
    let hi = geometry.extent.hi;
    let Some((t_enter, t_exit)) = slab_interval(ray, [lo; 3], [hi; 3]) else {
        return;
    };
    let side = geometry.voxel_side();
    let last = n as i64 - 1;

    let entry = ray.at(t_enter);
    let mut idx = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    for a in 0..3 {
        let d = ray.direction[a];
        let o = ray.origin[a];
        let mut k = ((entry[a] - lo) / side).floor() as i64;
        // entering through a face: make sure we start on the inner side
        k = k.clamp(0, last);
        if d > 0.0 {
            step[a] = 1;
            t_max[a] = (lo + (k + 1) as f64 * side - o) / d;
        } else if d < 0.0 {
            step[a] = -1;
            t_max[a] = (lo + k as f64 * side - o) / d;
        }
        idx[a] = k;
    }
    // Boundary crossings are recomputed from the voxel index rather than
    // accumulated, so long walks do not drift.

    let mut t_cur = t_enter;
    loop {
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        let t_next = t_max[axis].min(t_exit);
        if t_next > t_cur {
            visit(
                geometry.index(idx[0] as usize, idx[1] as usize, idx[2] as usize),
                t_cur,
                t_next,
            );
            t_cur = t_next;
        }
        if t_max[axis] >= t_exit {
            break;
        }
        idx[axis] += step[axis];
        if idx[axis] < 0 || idx[axis] > last {
            break;
        }
        let d = ray.direction[axis];
        let o = ray.origin[axis];
        let boundary = if step[axis] > 0 {
            lo + (idx[axis] + 1) as f64 * side
        } else {
            lo + idx[axis] as f64 * side
        };
        t_max[axis] = (boundary - o) / d;
    }
}

/// Ordered list of voxels whose boxes the ray crosses for `t > 0`.
pub fn traverse(geometry: &GridGeometry, ray: &Ray) -> TraversalRecord {
    let mut hits = Vec::new();
    walk(geometry, ray, |index, t_in, t_out| {
        hits.push(VoxelHit {
            voxel: geometry.coords(index),
            t_in,
            t_out,
        })
    });
    TraversalRecord { hits }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::Extent;
    use nalgebra::{Point3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(n: usize) -> GridGeometry {
        GridGeometry::new(n, Extent::default()).unwrap()
    }

    #[test]
    fn axis_ray_through_center_crosses_every_slab() {
        let g = geom(32);
        let ray = Ray::new(Point3::new(0.0, 0.0, -2.0), Vector3::z());
        let rec = traverse(&g, &ray);
        assert_eq!(rec.len(), 32);
        for (k, hit) in rec.hits.iter().enumerate() {
            assert_eq!(hit.voxel[2], k);
            assert_eq!(&hit.voxel[..2], &rec.hits[0].voxel[..2]);
        }
        assert!((rec.hits[0].t_in - 1.5).abs() < 1e-12);
        assert!((rec.hits[31].t_out - 2.5).abs() < 1e-12);
    }

    #[test]
    fn ray_pointing_away_is_empty() {
        let g = geom(16);
        let ray = Ray::new(Point3::new(10.0, 10.0, 10.0), Vector3::new(1.0, 1.0, 1.0));
        assert!(traverse(&g, &ray).is_empty());
        let ray = Ray::new(Point3::new(0.0, 5.0, 0.0), Vector3::x());
        assert!(traverse(&g, &ray).is_empty());
    }

    #[test]
    fn ray_starting_inside_begins_at_zero() {
        let g = geom(8);
        let ray = Ray::new(Point3::new(0.01, 0.02, 0.03), Vector3::new(0.3, -0.2, 0.9));
        let rec = traverse(&g, &ray);
        assert_eq!(rec.hits[0].t_in, 0.0);
        assert_eq!(rec.hits[0].voxel, [4, 4, 4]);
    }

    #[test]
    fn records_are_ordered_and_face_adjacent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = geom(16);
        for _ in 0..500 {
            let origin = Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let target = Point3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            let rec = traverse(&g, &Ray::new(origin, target - origin));
            for w in rec.hits.windows(2) {
                assert!(w[0].t_in < w[0].t_out);
                assert!(w[0].t_in < w[1].t_in);
                assert!((w[0].t_out - w[1].t_in).abs() < 1e-12);
                let manhattan: i64 = (0..3)
                    .map(|a| (w[0].voxel[a] as i64 - w[1].voxel[a] as i64).abs())
                    .sum();
                assert_eq!(manhattan, 1);
            }
        }
    }
}
