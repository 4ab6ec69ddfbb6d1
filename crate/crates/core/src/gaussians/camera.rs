use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussians whose camera-space depth is at or below this are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// Added to both diagonal entries of every projected covariance, in px².
pub const LOW_PASS_FLOOR: f64 = 0.3;

/// Orbit camera looking at the world origin, +z up.
///
/// Azimuth 0 puts the camera on the −y axis; azimuth increases counter-clockwise
/// seen from above. Pixel `(i, j)` is sampled at `(i + 0.5, j + 0.5)`, so the
/// principal point `(width/2, height/2)` is the image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    pub fn new(azimuth: f64, elevation: f64, distance: f64, fov_deg: f64, width: usize, height: usize) -> Self {
        Self {
            azimuth,
            elevation,
            distance,
            fov_deg,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.azimuth, self.elevation, self.distance, self.fov_deg]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("camera has non-finite fields".into()));
        }
        if self.distance <= 0.0 {
            return Err(Error::InvalidParameter(format!("camera distance {} must be > 0", self.distance)));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::InvalidParameter(format!("fov {} must be in (0, 180)", self.fov_deg)));
        }
        if self.elevation.abs() >= 90.0 {
            return Err(Error::InvalidParameter(format!(
                "elevation {} must be strictly between -90 and 90",
                self.elevation
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("camera image size must be non-zero".into()));
        }
        Ok(())
    }

    /// Azimuth wrapped into `[0, 360)`.
    pub fn azimuth_wrapped(&self) -> f64 {
        let a = self.azimuth.rem_euclid(360.0);
        if a >= 360.0 {
            0.0
        } else {
            a
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        let (az, el) = (self.azimuth.to_radians(), self.elevation.to_radians());
        self.distance * Vector3::new(el.cos() * az.sin(), -el.cos() * az.cos(), el.sin())
    }

    /// World-to-camera rotation; rows are the camera's right, down and forward axes.
    pub fn world_to_camera(&self) -> Matrix3<f64> {
        let (az, el) = (self.azimuth.to_radians(), self.elevation.to_radians());
        let forward = Vector3::new(-el.cos() * az.sin(), el.cos() * az.cos(), -el.sin());
        let right = Vector3::new(az.cos(), az.sin(), 0.0);
        let down = forward.cross(&right);
        Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()])
    }

    /// Focal length in pixels; the field of view is vertical.
    pub fn focal(&self) -> f64 {
        self.height as f64 / (2.0 * (self.fov_deg.to_radians() / 2.0).tan())
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.world_to_camera() * (p - self.center())
    }

    /// Pinhole projection of a world point; `None` at or behind the near plane.
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let t = self.to_camera(p);
        if t.z <= NEAR_PLANE {
            return None;
        }
        let f = self.focal();
        Some((Vector2::new(f * t.x / t.z, f * t.y / t.z) + self.principal_point(), t.z))
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    /// Pixel coordinates of the projected mean.
    pub mean2d: Vector2<f64>,
    /// Projected covariance in px², low-pass floor included.
    pub cov2d: Matrix2<f64>,
    /// Camera-space z of the mean.
    pub depth: f64,
}

fn perspective_jacobian(t: &Vector3<f64>, f: f64) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(f * iz, 0.0, -f * t.x * iz * iz, 0.0, f * iz, -f * t.y * iz * iz)
}

/// EWA projection: `cov2d = J W Σ Wᵀ Jᵀ + floor·I` with `J` the perspective
/// Jacobian at the mean. Returns `None` when the Gaussian is culled.
pub fn project_gaussian(mean: &Vector3<f64>, cov: &Matrix3<f64>, camera: &CameraPose) -> Option<ProjectedGaussian> {
    let w = camera.world_to_camera();
    let t = w * (mean - camera.center());
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let f = camera.focal();
    let jw = perspective_jacobian(&t, f) * w;
    let cov2d = jw * cov * jw.transpose() + Matrix2::identity() * LOW_PASS_FLOOR;
    let mean2d = Vector2::new(f * t.x / t.z, f * t.y / t.z) + camera.principal_point();
    Some(ProjectedGaussian {
        mean2d,
        cov2d,
        depth: t.z,
    })
}

/// Backward of [`project_gaussian`] for a visible Gaussian.
///
/// Takes full-matrix gradients and returns `(∂L/∂mean, ∂L/∂Σ)`.
pub fn project_gaussian_backward(
    mean: &Vector3<f64>,
    cov: &Matrix3<f64>,
    camera: &CameraPose,
    grad_mean2d: &Vector2<f64>,
    grad_cov2d: &Matrix2<f64>,
) -> (Vector3<f64>, Matrix3<f64>) {
    let w = camera.world_to_camera();
    let t = w * (mean - camera.center());
    let f = camera.focal();
    let j = perspective_jacobian(&t, f);
    let jw = j * w;

    let grad_cov = jw.transpose() * grad_cov2d * jw;
    let grad_jw = grad_cov2d * jw * cov.transpose() + grad_cov2d.transpose() * jw * cov;
    let gj = grad_jw * w.transpose();

    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut gt = Vector3::new(
        grad_mean2d.x * f * iz,
        grad_mean2d.y * f * iz,
        -(grad_mean2d.x * f * t.x + grad_mean2d.y * f * t.y) * iz2,
    );
    gt.x += gj[(0, 2)] * (-f * iz2);
    gt.y += gj[(1, 2)] * (-f * iz2);
    gt.z += gj[(0, 0)] * (-f * iz2)
        + gj[(1, 1)] * (-f * iz2)
        + gj[(0, 2)] * (2.0 * f * t.x * iz3)
        + gj[(1, 2)] * (2.0 * f * t.y * iz3);

    (w.transpose() * gt, grad_cov)
}
