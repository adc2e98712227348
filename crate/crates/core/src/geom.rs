//! Minimal 3D vector math, pinhole cameras and the analytic unit sphere.
//!
//! The scene geometry in this crate is a fixed unit sphere at the origin;
//! both the renderer and the noise rasterizer intersect rays against it
//! analytically.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        Vec3::new(self.x / n, self.y / n, self.z / n)
    }

    pub fn scaled(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    /// Linear interpolation `self + s*(o - self)`.
    pub fn lerp(self, o: Vec3, s: f64) -> Vec3 {
        self.add(o.sub(self).scaled(s))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

/// Nearest positive parameter where the ray meets the unit sphere at the
/// origin, if any.
pub fn unit_sphere_hit(ray: &Ray) -> Option<f64> {
    let od = ray.origin.dot(ray.dir);
    let disc = od * od - (ray.origin.dot(ray.origin) - 1.0);
    if disc < 0.0 {
        return None;
    }
    let t = -od - disc.sqrt();
    if t > 0.0 {
        Some(t)
    } else {
        None
    }
}

/// Orbit pinhole camera looking at the origin. World frame is z-up;
/// elevation is measured from the xy-plane toward +z.
#[derive(Clone, Copy, Debug)]
pub struct Camera {
    pub radius: f64,
    pub elevation: f64,
    pub azimuth: f64,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        radius: f64,
        elevation: f64,
        azimuth: f64,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if radius <= 1.0 {
            return Err(Error::Domain {
                name: "camera.radius",
                value: radius,
                lo: 1.0,
                hi: f64::INFINITY,
            });
        }
        if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
            return Err(Error::Domain {
                name: "camera.fov_y",
                value: fov_y,
                lo: 0.0,
                hi: std::f64::consts::PI,
            });
        }
        if width == 0 || height == 0 {
            return Err(Error::Config("camera resolution must be nonzero".into()));
        }
        Ok(Self {
            radius,
            elevation,
            azimuth,
            fov_y,
            width,
            height,
        })
    }

    pub fn eye(&self) -> Vec3 {
        Vec3::new(
            self.radius * self.elevation.cos() * self.azimuth.cos(),
            self.radius * self.elevation.cos() * self.azimuth.sin(),
            self.radius * self.elevation.sin(),
        )
    }

    /// Orthonormal (right, up, forward) frame. Falls back to +y as the up
    /// hint when looking straight along the z axis.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let eye = self.eye();
        let forward = eye.scaled(-1.0).normalized();
        let mut right = forward.cross(Vec3::new(0.0, 0.0, 1.0));
        if right.norm() < 1e-9 {
            right = forward.cross(Vec3::new(0.0, 1.0, 0.0));
        }
        let right = right.normalized();
        let up = right.cross(forward);
        (right, up, forward)
    }

    fn ray_from_ndc(&self, x_ndc: f64, y_ndc: f64) -> Ray {
        let (right, up, forward) = self.basis();
        let tan_half = (self.fov_y * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let dir = forward
            .add(right.scaled(x_ndc * tan_half * aspect))
            .add(up.scaled(y_ndc * tan_half))
            .normalized();
        Ray {
            origin: self.eye(),
            dir,
        }
    }

    /// Ray through the center of pixel (row, col).
    pub fn pixel_ray(&self, row: usize, col: usize) -> Ray {
        let u = (col as f64 + 0.5) / self.width as f64;
        let v = (row as f64 + 0.5) / self.height as f64;
        self.ray_from_ndc(2.0 * u - 1.0, 1.0 - 2.0 * v)
    }

    /// Ray through pixel corner (row, col) on the (H+1)×(W+1) corner grid.
    pub fn corner_ray(&self, row: usize, col: usize) -> Ray {
        let u = col as f64 / self.width as f64;
        let v = row as f64 / self.height as f64;
        self.ray_from_ndc(2.0 * u - 1.0, 1.0 - 2.0 * v)
    }

    /// Project a world point to fractional pixel coordinates (row, col).
    /// Returns None for points behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let (right, up, forward) = self.basis();
        let d = p.sub(self.eye());
        let depth = d.dot(forward);
        if depth <= 0.0 {
            return None;
        }
        let tan_half = (self.fov_y * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let x_ndc = d.dot(right) / depth / (tan_half * aspect);
        let y_ndc = d.dot(up) / depth / tan_half;
        let col = (x_ndc + 1.0) * 0.5 * self.width as f64 - 0.5;
        let row = (1.0 - y_ndc) * 0.5 * self.height as f64 - 0.5;
        Some((row, col))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn camera_inside_sphere_rejected() {
        assert!(Camera::new(0.9, 0.0, 0.0, 0.7, 8, 8).is_err());
    }

    #[test]
    fn center_ray_hits_sphere_front() {
        let cam = Camera::new(2.5, 0.0, 0.0, 0.7, 9, 9).unwrap();
        let ray = cam.pixel_ray(4, 4);
        let t = unit_sphere_hit(&ray).expect("center ray must hit");
        assert!((t - 1.5).abs() < 1e-9);
        let hit = ray.origin.add(ray.dir.scaled(t));
        assert!((hit.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top_down_camera_has_valid_basis() {
        let cam = Camera::new(
            3.0,
            std::f64::consts::FRAC_PI_2,
            0.0,
            0.7,
            9,
            9,
        )
        .unwrap();
        let (right, up, forward) = cam.basis();
        assert!((right.norm() - 1.0).abs() < 1e-12);
        assert!((up.norm() - 1.0).abs() < 1e-12);
        assert!(right.dot(up).abs() < 1e-12);
        assert!((forward.norm() - 1.0).abs() < 1e-12);
        let t = unit_sphere_hit(&cam.pixel_ray(4, 4)).unwrap();
        assert!((t - 2.0).abs() < 1e-9);
    }

    #[test]
    fn project_inverts_pixel_ray() {
        let cam = Camera::new(2.5, 0.4, 1.1, 0.7, 17, 13).unwrap();
        for &(r, c) in &[(0usize, 0usize), (6, 9), (12, 16)] {
            let ray = cam.pixel_ray(r, c);
            let p = ray.origin.add(ray.dir.scaled(2.0));
            let (pr, pc) = cam.project(p).unwrap();
            assert!((pr - r as f64).abs() < 1e-9, "row {pr} vs {r}");
            assert!((pc - c as f64).abs() < 1e-9, "col {pc} vs {c}");
        }
    }
}
