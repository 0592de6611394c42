//! Pinhole camera model and per-pixel rays.
//!
//! Conventions: `rotation` maps world to camera coordinates, the camera looks
//! down +z, image x grows to the right and image y grows downward. Pixel
//! `(i, j)` has its center at `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Point3, Unit, Vector3};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Intrinsics and extrinsics of a pinhole camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    rotation: Matrix3<f64>,
    center: Point3<f64>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

/// Half-line `origin + t * direction`, `t > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Unit<Vector3<f64>>,
}

impl Ray {
    pub fn new(origin: Point3<f64>, direction: Vector3<f64>) -> Self {
        Ray {
            origin,
            direction: Unit::new_normalize(direction),
        }
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.direction.into_inner() * t
    }
}

/// A continuous image location together with the camera-frame depth of the
/// projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Camera {
    /// Builds a camera, checking that `rotation` is a proper rotation
    /// (orthonormal, det +1) within 1e-9 and that the intrinsics are sane.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Matrix3<f64>,
        center: Point3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        Self::with_tolerance(rotation, center, fx, fy, cx, cy, width, height, ORTHONORMAL_TOL)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn with_tolerance(
        rotation: Matrix3<f64>,
        center: Point3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        tol: f64,
    ) -> Result<Self> {
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(gram_err <= tol) {
            return Err(Error::precondition(format!(
                "rotation is not orthonormal (max |R^T R - I| = {gram_err:e})"
            )));
        }
        let det = rotation.determinant();
        if !((det - 1.0).abs() <= tol) {
            return Err(Error::precondition(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::precondition("image size must be positive"));
        }
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::precondition(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::precondition(format!(
                "principal point ({cx}, {cy}) outside a {width}x{height} image"
            )));
        }
        if !center.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::precondition("camera center must be finite"));
        }
        Ok(Camera {
            rotation,
            center,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`, with `up` giving the world up
    /// direction. Image y points along the projection of `-up`.
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() == 0.0 {
            return Err(Error::precondition("look_at: eye and target coincide"));
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(Error::precondition("look_at: up is parallel to view direction"));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Camera::new(
            rotation,
            eye,
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn center(&self) -> &Point3<f64> {
        &self.center
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fy(&self) -> f64 {
        self.fy
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
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

    /// Unit vector along the optical axis, in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    /// Ray through the center of pixel `(i, j)` (column `i`, row `j`).
    pub fn pixel_ray(&self, i: usize, j: usize) -> Result<Ray> {
        if i >= self.width || j >= self.height {
            return Err(Error::precondition(format!(
                "pixel ({i}, {j}) outside a {}x{} image",
                self.width, self.height
            )));
        }
        Ok(self.ray_through(i as f64 + 0.5, j as f64 + 0.5))
    }

    /// Ray through a continuous image location.
    pub fn ray_through(&self, u: f64, v: f64) -> Ray {
        let p_cam = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        // R is orthonormal, so R^-1 = R^T.
        let p_world = self.center + self.rotation.transpose() * p_cam;
        Ray::new(self.center, p_world - self.center)
    }

    /// Ray for the pixel with row-major linear index `index`.
    pub(crate) fn ray_for_index(&self, index: usize) -> Ray {
        let (i, j) = (index % self.width, index / self.width);
        self.ray_through(i as f64 + 0.5, j as f64 + 0.5)
    }

    /// Projects a world point to continuous pixel coordinates.
    pub fn project_point(&self, point: &Point3<f64>) -> Result<Projection> {
        let p_cam = self.rotation * (point - self.center);
        if !(p_cam.z > 0.0) {
            return Err(Error::BehindCamera { depth: p_cam.z });
        }
        Ok(Projection {
            u: self.fx * p_cam.x / p_cam.z + self.cx,
            v: self.fy * p_cam.y / p_cam.z + self.cy,
            depth: p_cam.z,
        })
    }

    /// Camera-frame depth (z) of a world point; may be non-positive.
    pub fn depth_of(&self, point: &Point3<f64>) -> f64 {
        (self.rotation * (point - self.center)).z
    }

    /// The same camera after applying the rigid world transform
    /// `x -> rot * x + trans`.
    pub fn transformed(&self, rot: &Matrix3<f64>, trans: &Vector3<f64>) -> Result<Self> {
        let rotation = self.rotation * rot.transpose();
        let center = Point3::from(rot * self.center.coords + trans);
        Camera::with_tolerance(
            rotation,
            center,
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            1e-8,
        )
    }

    /// Scales image size and intrinsics by an integer factor `k`.
    pub fn upscaled(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::precondition("upscale factor must be positive"));
        }
        let s = k as f64;
        Camera::new(
            self.rotation,
            self.center,
            self.fx * s,
            self.fy * s,
            self.cx * s,
            self.cy * s,
            self.width * k,
            self.height * k,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simple_camera() -> Camera {
        Camera::new(
            Matrix3::identity(),
            Point3::new(0.0, 0.0, -2.0),
            40.0,
            40.0,
            16.0,
            16.0,
            32,
            32,
        )
        .unwrap()
    }

    fn random_camera(rng: &mut impl Rng) -> Camera {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let rot = Rotation3::new(axis * rng.random_range(0.0..3.0));
        let w = rng.random_range(4..64);
        let h = rng.random_range(4..64);
        Camera::new(
            *rot.matrix(),
            Point3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ),
            rng.random_range(10.0..100.0),
            rng.random_range(10.0..100.0),
            rng.random_range(0.0..w as f64),
            rng.random_range(0.0..h as f64),
            w,
            h,
        )
        .unwrap()
    }

    #[test]
    fn center_pixel_looks_down_the_axis() {
        let cam = simple_camera();
        // principal point sits on the corner shared by pixels 15 and 16, so
        // shift it to the center of pixel 16
        let cam = Camera::new(*cam.rotation(), *cam.center(), 40.0, 40.0, 16.5, 16.5, 32, 32).unwrap();
        let ray = cam.pixel_ray(16, 16).unwrap();
        assert!((ray.direction.into_inner() - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        assert_eq!(ray.origin, Point3::new(0.0, 0.0, -2.0));
    }

    #[test]
    fn mirrored_pixels_give_mirrored_directions() {
        let cam = simple_camera();
        let a = cam.pixel_ray(3, 7).unwrap().direction;
        let b = cam.pixel_ray(32 - 1 - 3, 32 - 1 - 7).unwrap().direction;
        assert!((a.x + b.x).abs() < 1e-15);
        assert!((a.y + b.y).abs() < 1e-15);
        assert!((a.z - b.z).abs() < 1e-15);
    }

    #[test]
    fn out_of_bounds_pixel_is_rejected() {
        let cam = simple_camera();
        assert!(matches!(cam.pixel_ray(32, 0), Err(Error::Precondition(_))));
        assert!(matches!(cam.pixel_ray(0, 32), Err(Error::Precondition(_))));
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let cam = simple_camera();
        let p = cam.project_point(&Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((p.u, p.v, p.depth), (16.0, 16.0, 3.0));
    }

    #[test]
    fn zero_depth_is_behind_camera() {
        let cam = simple_camera();
        let err = cam.project_point(&Point3::new(1.0, 1.0, -2.0)).unwrap_err();
        assert!(matches!(err, Error::BehindCamera { .. }));
    }

    #[test]
    fn rejects_improper_rotations() {
        let mut reflect = Matrix3::identity();
        reflect[(2, 2)] = -1.0;
        let c = Point3::origin();
        assert!(Camera::new(reflect, c, 1.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Camera::new(Matrix3::identity() * 1.01, c, 1.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Camera::new(Matrix3::identity(), c, 0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Camera::new(Matrix3::identity(), c, 1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
    }

    #[test]
    fn look_at_is_right_handed() {
        let cam = Camera::look_at(
            Point3::new(3.0, 0.0, 1.0),
            Point3::origin(),
            Vector3::z(),
            50.0,
            32,
            32,
        )
        .unwrap();
        assert!((cam.rotation().determinant() - 1.0).abs() < 1e-12);
        let p = cam.project_point(&Point3::origin()).unwrap();
        assert!((p.u - 16.0).abs() < 1e-12 && (p.v - 16.0).abs() < 1e-12);
        // world up projects upward in the image
        let up = cam.project_point(&Point3::new(0.0, 0.0, 0.2)).unwrap();
        assert!(up.v < 16.0);
    }

    #[test]
    fn ray_projection_round_trip_on_random_cameras() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let cam = random_camera(&mut rng);
            let i = rng.random_range(0..cam.width());
            let j = rng.random_range(0..cam.height());
            let ray = cam.pixel_ray(i, j).unwrap();
            for t in [0.5, 1.0, 3.0, 5.0, 10.0] {
                let p = cam.project_point(&ray.at(t)).unwrap();
                assert!((p.u - (i as f64 + 0.5)).abs() < 1e-6);
                assert!((p.v - (j as f64 + 0.5)).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn pixel_ray_is_unit_norm(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cam = random_camera(&mut rng);
            let ray = cam.pixel_ray(rng.random_range(0..cam.width()), rng.random_range(0..cam.height())).unwrap();
            prop_assert!((ray.direction.norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn rigid_motion_preserves_projection(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cam = random_camera(&mut rng);
            let ray = cam.pixel_ray(rng.random_range(0..cam.width()), rng.random_range(0..cam.height())).unwrap();
            let point = ray.at(rng.random_range(0.5..4.0));
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let rot = *Rotation3::new(axis * 2.0).matrix();
            let trans = Vector3::new(rng.random_range(-5.0..5.0), 0.3, rng.random_range(-5.0..5.0));
            let moved = cam.transformed(&rot, &trans).unwrap();
            let a = cam.project_point(&point).unwrap();
            let b = moved.project_point(&Point3::from(rot * point.coords + trans)).unwrap();
            prop_assert!((a.u - b.u).abs() < 1e-9 && (a.v - b.v).abs() < 1e-9);
        }
    }
}
