//! Occupancy grids over an axis-aligned cube, their logit parameterization,
//! and procedural test shapes.
//!
//! Storage order is fixed: x slowest, then y, then z fastest, so voxel
//! `(x, y, z)` lives at `(x * n + y) * n + z`. World "up" is +z; shapes with
//! an up direction (cups, chairs) open toward +z.

use nalgebra::Point3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Axis-aligned cube `[lo, hi]^3` covered by a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Extent {
    fn default() -> Self {
        Extent { lo: -0.5, hi: 0.5 }
    }
}

impl Extent {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::precondition(format!("invalid extent [{lo}, {hi}]")));
        }
        Ok(Extent { lo, hi })
    }

    pub fn size(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> Point3<f64> {
        let c = 0.5 * (self.lo + self.hi);
        Point3::new(c, c, c)
    }

    pub fn half_size(&self) -> f64 {
        0.5 * self.size()
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        p.iter().all(|&c| c >= self.lo && c <= self.hi)
    }
}

/// Resolution and placement of a cubic grid, without values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub n: usize,
    pub extent: Extent,
}

impl GridGeometry {
    pub fn new(n: usize, extent: Extent) -> Result<Self> {
        if n == 0 {
            return Err(Error::precondition("grid resolution must be positive"));
        }
        Ok(GridGeometry { n, extent })
    }

    pub fn voxel_count(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn voxel_side(&self) -> f64 {
        self.extent.size() / self.n as f64
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.n + y) * self.n + z
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let n = self.n;
        [index / (n * n), (index / n) % n, index % n]
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Point3<f64> {
        let s = self.voxel_side();
        let lo = self.extent.lo;
        Point3::new(
            lo + (x as f64 + 0.5) * s,
            lo + (y as f64 + 0.5) * s,
            lo + (z as f64 + 0.5) * s,
        )
    }

    /// The eight corners of voxel `(x, y, z)`.
    pub fn voxel_corners(&self, x: usize, y: usize, z: usize) -> [Point3<f64>; 8] {
        let s = self.voxel_side();
        let lo = self.extent.lo;
        let base = [
            lo + x as f64 * s,
            lo + y as f64 * s,
            lo + z as f64 * s,
        ];
        std::array::from_fn(|k| {
            Point3::new(
                base[0] + if k & 4 != 0 { s } else { 0.0 },
                base[1] + if k & 2 != 0 { s } else { 0.0 },
                base[2] + if k & 1 != 0 { s } else { 0.0 },
            )
        })
    }
}

/// Occupancy probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    geometry: GridGeometry,
    values: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.voxel_count() {
            return Err(Error::mismatch(format!(
                "expected {} voxel values for n={}, got {}",
                geometry.voxel_count(),
                geometry.n,
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::precondition(format!(
                "voxel {i} has occupancy {v} outside [0, 1]"
            )));
        }
        Ok(VoxelGrid { geometry, values })
    }

    pub fn filled(geometry: GridGeometry, value: f64) -> Result<Self> {
        VoxelGrid::new(geometry, vec![value; geometry.voxel_count()])
    }

    pub fn empty(geometry: GridGeometry) -> Self {
        VoxelGrid {
            geometry,
            values: vec![0.0; geometry.voxel_count()],
        }
    }

    /// Builds a grid by clamping arbitrary reals into `[0, 1]`.
    pub fn from_clamped(geometry: GridGeometry, values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let values: Vec<f64> = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        VoxelGrid::new(geometry, values)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn n(&self) -> usize {
        self.geometry.n
    }

    pub fn extent(&self) -> Extent {
        self.geometry.extent
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.geometry.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::precondition(format!("occupancy {value} outside [0, 1]")));
        }
        let i = self.geometry.index(x, y, z);
        self.values[i] = value;
        Ok(())
    }

    pub fn occupied_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub(crate) fn same_shape(&self, other: &VoxelGrid) -> Result<()> {
        if self.geometry.n != other.geometry.n {
            return Err(Error::mismatch(format!(
                "grid resolutions differ ({} vs {})",
                self.geometry.n, other.geometry.n
            )));
        }
        Ok(())
    }

    /// Thresholds at `tau` (inclusive): `v >= tau` becomes 1.
    pub fn binarize(&self, tau: f64) -> Result<VoxelGrid> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::precondition(format!("threshold {tau} outside (0, 1)")));
        }
        Ok(VoxelGrid {
            geometry: self.geometry,
            values: self
                .values
                .iter()
                .map(|&v| if v >= tau { 1.0 } else { 0.0 })
                .collect(),
        })
    }
}

/// Unconstrained logits; occupancy is their logistic squashing.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrid {
    geometry: GridGeometry,
    logits: Vec<f64>,
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LogitGrid {
    pub fn new(geometry: GridGeometry, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != geometry.voxel_count() {
            return Err(Error::mismatch(format!(
                "expected {} logits for n={}, got {}",
                geometry.voxel_count(),
                geometry.n,
                logits.len()
            )));
        }
        Ok(LogitGrid { geometry, logits })
    }

    pub fn zeros(geometry: GridGeometry) -> Self {
        LogitGrid {
            geometry,
            logits: vec![0.0; geometry.voxel_count()],
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Elementwise logistic function of the logits.
    pub fn occupancy(&self) -> VoxelGrid {
        VoxelGrid {
            geometry: self.geometry,
            values: self.logits.iter().map(|&l| logistic(l)).collect(),
        }
    }

    /// Chain rule through the logistic: `d/dlogit = d/dp * p (1 - p)`.
    pub(crate) fn pullback(&self, grad_occupancy: &[f64]) -> Vec<f64> {
        self.logits
            .iter()
            .zip(grad_occupancy)
            .map(|(&l, &g)| {
                let p = logistic(l);
                g * p * (1.0 - p)
            })
            .collect()
    }
}

/// Procedural shape families used as stand-ins for a shape dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Box,
    Cup,
    ThinPlate,
    ChairL,
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(ShapeKind::Box),
            "cup" => Ok(ShapeKind::Cup),
            "thin_plate" | "thin-plate" | "plate" => Ok(ShapeKind::ThinPlate),
            "chair_l" | "chair-l" | "chair" => Ok(ShapeKind::ChairL),
            other => Err(Error::precondition(format!("unknown shape kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShapeKind::Box => "box",
            ShapeKind::Cup => "cup",
            ShapeKind::ThinPlate => "thin_plate",
            ShapeKind::ChairL => "chair_l",
        })
    }
}

/// Shape parameters. Lengths are fractions of the grid half-size (so 1.0
/// reaches the extent boundary) unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeParams {
    /// Centered solid cuboid.
    Box { half: [f64; 3] },
    /// Open-top hollow cylinder along z with a solid bottom. `wall` is the
    /// thickness of both the side wall and the bottom.
    Cup {
        radius: f64,
        half_height: f64,
        wall: f64,
    },
    /// Plate through the grid center with normal (1, 1, 1), clipped to the
    /// cube `|q| <= half`. `thickness` is measured in voxels.
    ThinPlate { half: f64, thickness: f64 },
    /// Seat slab plus a backrest along the -x side.
    ChairL {
        half_width: f64,
        half_height: f64,
        thickness: f64,
    },
}

impl ShapeParams {
    pub fn kind(&self) -> ShapeKind {
        match self {
            ShapeParams::Box { .. } => ShapeKind::Box,
            ShapeParams::Cup { .. } => ShapeKind::Cup,
            ShapeParams::ThinPlate { .. } => ShapeKind::ThinPlate,
            ShapeParams::ChairL { .. } => ShapeKind::ChairL,
        }
    }

    /// Representative parameters for a kind.
    pub fn default_for(kind: ShapeKind) -> Self {
        match kind {
            ShapeKind::Box => ShapeParams::Box { half: [0.5, 0.4, 0.6] },
            ShapeKind::Cup => ShapeParams::Cup {
                radius: 0.7,
                half_height: 0.6,
                wall: 0.25,
            },
            ShapeKind::ThinPlate => ShapeParams::ThinPlate {
                half: 0.8,
                thickness: 1.0,
            },
            ShapeKind::ChairL => ShapeParams::ChairL {
                half_width: 0.6,
                half_height: 0.7,
                thickness: 0.3,
            },
        }
    }

    /// Random parameters of the given kind, valid at resolution `n`.
    pub fn random(kind: ShapeKind, n: usize, rng: &mut impl Rng) -> Self {
        let voxel = 2.0 / n as f64;
        let limit = 1.0 - voxel;
        let mut span = |lo: f64, hi: f64| {
            let hi = hi.min(limit);
            rng.random_range(lo.min(hi)..=hi)
        };
        match kind {
            ShapeKind::Box => ShapeParams::Box {
                half: [span(0.3, 0.75), span(0.3, 0.75), span(0.3, 0.75)],
            },
            ShapeKind::Cup => ShapeParams::Cup {
                radius: span(0.55, 0.8),
                half_height: span(0.45, 0.8),
                wall: span(voxel.max(0.1), (2.0 * voxel).max(0.2)),
            },
            ShapeKind::ThinPlate => ShapeParams::ThinPlate {
                half: span(0.5, 0.8),
                thickness: 1.0,
            },
            ShapeKind::ChairL => {
                let half_width = span(0.4, 0.75);
                let half_height = span(0.5, 0.8);
                let cap = 0.8 * half_width.min(half_height);
                ShapeParams::ChairL {
                    half_width,
                    half_height,
                    thickness: span(voxel.max(0.15).min(cap), (2.0 * voxel).max(0.3).min(cap)),
                }
            }
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let voxel = 2.0 / n as f64;
        // every shape must keep a one-voxel margin to the extent boundary
        let limit = 1.0 - voxel;
        let fits = |v: f64, what: &str| -> Result<()> {
            if !(v > 0.0) {
                return Err(Error::precondition(format!("{what} must be positive, got {v}")));
            }
            if v > limit + 1e-12 {
                return Err(Error::precondition(format!(
                    "{what} = {v} leaves less than one voxel of margin at n={n}"
                )));
            }
            Ok(())
        };
        match *self {
            ShapeParams::Box { half } => {
                for h in half {
                    fits(h, "box half-extent")?;
                }
            }
            ShapeParams::Cup {
                radius,
                half_height,
                wall,
            } => {
                fits(radius, "cup radius")?;
                fits(half_height, "cup half-height")?;
                if !(wall >= voxel - 1e-12) {
                    return Err(Error::precondition(format!(
                        "cup wall {wall} thinner than one voxel ({voxel})"
                    )));
                }
                if wall >= radius || wall >= 2.0 * half_height {
                    return Err(Error::precondition("cup wall leaves no interior"));
                }
            }
            ShapeParams::ThinPlate { half, thickness } => {
                fits(half, "plate half-extent")?;
                if !(thickness > 0.0) {
                    return Err(Error::precondition("plate thickness must be positive"));
                }
            }
            ShapeParams::ChairL {
                half_width,
                half_height,
                thickness,
            } => {
                fits(half_width, "chair half-width")?;
                fits(half_height, "chair half-height")?;
                if !(thickness > 0.0) || thickness >= half_width || thickness >= half_height {
                    return Err(Error::precondition(format!(
                        "chair thickness {thickness} is degenerate"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Membership test for a point in normalized coordinates `q` in
    /// `[-1, 1]^3`; `voxel` is the voxel side in the same units.
    fn contains(&self, q: [f64; 3], voxel: f64) -> bool {
        const EPS: f64 = 1e-9;
        match *self {
            ShapeParams::Box { half } => (0..3).all(|a| q[a].abs() <= half[a] + EPS),
            ShapeParams::Cup {
                radius,
                half_height,
                wall,
            } => {
                let r = (q[0] * q[0] + q[1] * q[1]).sqrt();
                if q[2].abs() > half_height + EPS || r > radius + EPS {
                    return false;
                }
                r >= radius - wall - EPS || q[2] <= -half_height + wall + EPS
            }
            ShapeParams::ThinPlate { half, thickness } => {
                let dist = (q[0] + q[1] + q[2]) / 3f64.sqrt();
                q.iter().all(|c| c.abs() <= half + EPS) && dist.abs() <= 0.5 * thickness * voxel + EPS
            }
            ShapeParams::ChairL {
                half_width,
                half_height,
                thickness,
            } => {
                let inside = q[0].abs() <= half_width + EPS
                    && q[1].abs() <= half_width + EPS
                    && q[2].abs() <= half_height + EPS;
                let seat = q[2] <= -half_height + thickness + EPS;
                let back = q[0] <= -half_width + thickness + EPS;
                inside && (seat || back)
            }
        }
    }
}

/// Rasterizes a procedural shape: a voxel is occupied iff its center lies in
/// the shape.
pub fn gen_shape(params: &ShapeParams, geometry: GridGeometry) -> Result<VoxelGrid> {
    let n = geometry.n;
    if n < 8 {
        return Err(Error::precondition(format!("shape resolution must be >= 8, got {n}")));
    }
    params.validate(n)?;
    let voxel = 2.0 / n as f64;
    let norm = |i: usize| (i as f64 + 0.5) * voxel - 1.0;
    let values = (0..geometry.voxel_count())
        .map(|idx| {
            let [x, y, z] = geometry.coords(idx);
            if params.contains([norm(x), norm(y), norm(z)], voxel) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    VoxelGrid::new(geometry, values)
}

/// A procedurally generated unlabeled shape collection.
#[derive(Debug, Clone)]
pub struct ShapePool {
    pub params: Vec<ShapeParams>,
    pub grids: Vec<VoxelGrid>,
}

/// Draws `count` shapes with random parameters, cycling through `mix`.
/// Deterministic in `seed`.
pub fn shape_pool(seed: u64, count: usize, mix: &[ShapeKind], geometry: GridGeometry) -> Result<ShapePool> {
    if count == 0 {
        return Err(Error::precondition("shape pool needs at least one member"));
    }
    if mix.is_empty() {
        return Err(Error::precondition("shape mix is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: Vec<ShapeParams> = Vec::with_capacity(count);
    let mut grids = Vec::with_capacity(count);
    for i in 0..count {
        let kind = mix[i % mix.len()];
        let p = loop {
            let p = ShapeParams::random(kind, geometry.n, &mut rng);
            if p.validate(geometry.n).is_ok() && !params.contains(&p) {
                break p;
            }
        };
        grids.push(gen_shape(&p, geometry)?);
        params.push(p);
    }
    Ok(ShapePool { params, grids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn geom(n: usize) -> GridGeometry {
        GridGeometry::new(n, Extent::default()).unwrap()
    }

    #[test]
    fn linear_order_is_z_fastest() {
        let g = geom(4);
        assert_eq!(g.index(0, 0, 1), 1);
        assert_eq!(g.index(0, 1, 0), 4);
        assert_eq!(g.index(1, 0, 0), 16);
        assert_eq!(g.coords(g.index(3, 1, 2)), [3, 1, 2]);
    }

    #[test]
    fn zero_logits_give_one_half() {
        let lg = LogitGrid::zeros(geom(4));
        assert!(lg.occupancy().values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn large_logits_saturate() {
        let lg = LogitGrid::new(geom(2), vec![20.0; 8]).unwrap();
        assert!(lg.occupancy().values().iter().all(|&v| v >= 1.0 - 1e-8 && v < 1.0));
        let lg = LogitGrid::new(geom(2), vec![-800.0; 8]).unwrap();
        assert!(lg.occupancy().values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn occupancy_matches_scalar_logistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits: Vec<f64> = (0..512).map(|_| rng.random_range(-30.0..30.0)).collect();
        let lg = LogitGrid::new(geom(8), logits.clone()).unwrap();
        for (p, l) in lg.occupancy().values().iter().zip(&logits) {
            let oracle = 1.0 / (1.0 + (-l).exp());
            assert!((p - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn binarize_is_inclusive_at_threshold() {
        let g = VoxelGrid::filled(geom(4), 0.4).unwrap();
        assert!(g.binarize(0.4).unwrap().values().iter().all(|&v| v == 1.0));
        let g = VoxelGrid::empty(geom(4));
        assert!(g.binarize(0.4).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(g.binarize(0.0).is_err());
        assert!(g.binarize(1.0).is_err());
    }

    #[test]
    fn binarize_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..4096).map(|_| rng.random::<f64>()).collect();
        let expected = vals.iter().filter(|&&v| v >= 0.4).count();
        let g = VoxelGrid::new(geom(16), vals).unwrap();
        assert_eq!(g.binarize(0.4).unwrap().occupied_count(), expected);
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(VoxelGrid::new(geom(1), vec![1.5]).is_err());
        assert!(VoxelGrid::new(geom(1), vec![f64::NAN]).is_err());
        assert!(VoxelGrid::new(geom(2), vec![0.0]).is_err());
    }

    #[test]
    fn central_box_has_512_voxels() {
        let g = gen_shape(&ShapeParams::Box { half: [0.5; 3] }, geom(16)).unwrap();
        assert_eq!(g.occupied_count(), 512);
        for x in 0..16 {
            for y in 0..16 {
                for z in 0..16 {
                    let inside = [x, y, z].iter().all(|&c| (4..12).contains(&c));
                    assert_eq!(g.get(x, y, z) == 1.0, inside);
                }
            }
        }
    }

    #[test]
    fn cup_is_hollow_with_solid_bottom() {
        let p = ShapeParams::default_for(ShapeKind::Cup);
        let g = gen_shape(&p, geom(16)).unwrap();
        assert_cup_structure(&g, &p);
        // wall ring: the voxel column at the rim radius is occupied
        let mid = 8;
        assert_eq!(g.get(mid, 2, mid), 1.0);
    }

    /// Interior voxels above the bottom are empty, and the bottom is solid.
    pub(crate) fn assert_cup_structure(g: &VoxelGrid, p: &ShapeParams) {
        let ShapeParams::Cup {
            radius,
            half_height,
            wall,
        } = *p
        else {
            panic!("not a cup")
        };
        let n = g.n();
        let voxel = 2.0 / n as f64;
        let norm = |i: usize| (i as f64 + 0.5) * voxel - 1.0;
        let mut interior = 0;
        let mut bottom = 0;
        for idx in 0..g.values().len() {
            let [x, y, z] = g.geometry().coords(idx);
            let r = (norm(x).powi(2) + norm(y).powi(2)).sqrt();
            let qz = norm(z);
            if r < radius - wall - 1e-6 && qz > -half_height + wall + 1e-6 && qz < half_height {
                assert_eq!(g.values()[idx], 0.0, "interior voxel {x},{y},{z} occupied");
                interior += 1;
            }
            if r < radius - wall - 1e-6 && qz <= -half_height + wall - 1e-6 && qz >= -half_height {
                assert_eq!(g.values()[idx], 1.0, "bottom voxel {x},{y},{z} empty");
                bottom += 1;
            }
        }
        assert!(interior > 0 && bottom > 0);
        // the central column holds bottom voxels and then only empty space
        let c = n / 2;
        let column: Vec<f64> = (0..n).map(|z| g.get(c, c, z)).collect();
        let first = column.iter().position(|&v| v == 1.0).expect("no bottom");
        let first_empty = first + column[first..].iter().position(|&v| v == 0.0).expect("no interior");
        assert!(column[first_empty..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn thin_plate_count_is_bounded() {
        let g = gen_shape(&ShapeParams::ThinPlate { half: 0.9, thickness: 1.0 }, geom(32)).unwrap();
        let bound = 32 * 32 * (3f64.sqrt().ceil() as usize);
        assert!(g.occupied_count() > 0);
        assert!(g.occupied_count() <= bound, "{}", g.occupied_count());
    }

    #[test]
    fn shapes_keep_a_margin() {
        for kind in [ShapeKind::Box, ShapeKind::Cup, ShapeKind::ThinPlate, ShapeKind::ChairL] {
            let g = gen_shape(&ShapeParams::default_for(kind), geom(16)).unwrap();
            for idx in 0..g.values().len() {
                let c = g.geometry().coords(idx);
                if c.iter().any(|&k| k == 0 || k == 15) {
                    assert_eq!(g.values()[idx], 0.0, "{kind} touches the boundary");
                }
            }
        }
    }

    #[test]
    fn degenerate_params_are_rejected() {
        let g = geom(16);
        assert!(gen_shape(&ShapeParams::Box { half: [0.5, 0.0, 0.5] }, g).is_err());
        assert!(gen_shape(&ShapeParams::Box { half: [0.5, 0.95, 0.5] }, g).is_err());
        assert!(gen_shape(&ShapeParams::ThinPlate { half: 0.5, thickness: 0.0 }, g).is_err());
        assert!(gen_shape(
            &ShapeParams::Cup {
                radius: 0.5,
                half_height: 0.5,
                wall: 0.0
            },
            g
        )
        .is_err());
        assert!(gen_shape(&ShapeParams::default_for(ShapeKind::Box), geom(4)).is_err());
    }

    #[test]
    fn pool_is_deterministic() {
        let mix = [ShapeKind::Box, ShapeKind::Cup, ShapeKind::ChairL];
        let a = shape_pool(9, 12, &mix, geom(16)).unwrap();
        let b = shape_pool(9, 12, &mix, geom(16)).unwrap();
        assert_eq!(a.grids, b.grids);
        assert_eq!(a.params, b.params);
        assert!(shape_pool(9, 0, &mix, geom(16)).is_err());
        assert!(a.grids.iter().all(|g| g.is_binary()));
    }

    #[test]
    fn cup_pool_members_are_all_hollow() {
        let pool = shape_pool(1, 50, &[ShapeKind::Cup], geom(16)).unwrap();
        for (g, p) in pool.grids.iter().zip(&pool.params) {
            assert_cup_structure(g, p);
        }
    }

    proptest! {
        #[test]
        fn random_params_rasterize_at_any_resolution(n in 8usize..40, seed in any::<u64>(), k in 0usize..4) {
            let kind = [ShapeKind::Box, ShapeKind::Cup, ShapeKind::ThinPlate, ShapeKind::ChairL][k];
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = ShapeParams::random(kind, n, &mut rng);
            prop_assert!(gen_shape(&p, geom(n)).is_ok());
        }

        #[test]
        fn occupancy_is_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let lg = LogitGrid::new(geom(1), vec![a.min(b)]).unwrap();
            let hg = LogitGrid::new(geom(1), vec![a.max(b)]).unwrap();
            prop_assert!(lg.occupancy().values()[0] <= hg.occupancy().values()[0]);
        }

        #[test]
        fn binarize_is_idempotent(vals in proptest::collection::vec(0.0f64..=1.0, 8), tau in 0.01f64..0.99) {
            let g = VoxelGrid::new(geom(2), vals).unwrap();
            let once = g.binarize(tau).unwrap();
            prop_assert_eq!(once.binarize(tau).unwrap(), once);
        }
    }
}
