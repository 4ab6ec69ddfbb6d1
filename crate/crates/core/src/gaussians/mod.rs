//! Gaussian primitives: parameter storage, covariance construction, view-dependent
//! color and camera projection.
//!
//! All parameters are stored unconstrained: rotations as raw quaternions
//! (normalized on use), scales as logs and opacities as logits.

mod camera;
mod sh;

pub use camera::{project_gaussian, project_gaussian_backward, CameraPose, ProjectedGaussian};
pub use camera::{LOW_PASS_FLOOR, NEAR_PLANE};
pub use sh::{eval_sh, eval_sh_backward, sh_basis, sh_basis_gradient, sh_coeff_count, MAX_SH_DEGREE};

use nalgebra::{Matrix3, Vector3, Vector4};

use crate::error::{Error, Result};

/// Symmetric 3x3 world-space covariance.
pub type Covariance3 = Matrix3<f64>;

/// One Gaussian, used for inserting rows into a [`GaussianCloud`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    /// Quaternion stored as `(w, x, y, z)`.
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub sh: Vec<Vector3<f64>>,
}

/// Structure-of-arrays storage for a set of 3D Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub positions: Vec<Vector3<f64>>,
    /// Raw quaternions `(w, x, y, z)`; normalized in the forward pass.
    pub rotations: Vec<Vector4<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    /// Flattened SH coefficients, `sh_coeff_count(sh_degree)` rows per Gaussian.
    pub sh_coeffs: Vec<Vector3<f64>>,
    sh_degree: usize,
}

impl GaussianCloud {
    pub fn new(sh_degree: usize) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "SH degree {sh_degree} exceeds maximum {MAX_SH_DEGREE}"
            )));
        }
        Ok(Self {
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh_coeffs: Vec::new(),
            sh_degree,
        })
    }

    pub fn from_gaussians(sh_degree: usize, gaussians: impl IntoIterator<Item = Gaussian>) -> Result<Self> {
        let mut cloud = Self::new(sh_degree)?;
        for g in gaussians {
            cloud.push(g)?;
        }
        Ok(cloud)
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn sh_count(&self) -> usize {
        sh_coeff_count(self.sh_degree)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) -> Result<()> {
        if g.sh.len() != self.sh_count() {
            return Err(Error::Shape(format!(
                "expected {} SH coefficients, got {}",
                self.sh_count(),
                g.sh.len()
            )));
        }
        self.positions.push(g.position);
        self.rotations.push(g.rotation);
        self.log_scales.push(g.log_scale);
        self.opacity_logits.push(g.opacity_logit);
        self.sh_coeffs.extend(g.sh);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
            opacity_logit: self.opacity_logits[i],
            sh: self.sh(i).to_vec(),
        }
    }

    pub fn sh(&self, i: usize) -> &[Vector3<f64>] {
        let k = self.sh_count();
        &self.sh_coeffs[i * k..(i + 1) * k]
    }

    pub fn sh_mut(&mut self, i: usize) -> &mut [Vector3<f64>] {
        let k = self.sh_count();
        &mut self.sh_coeffs[i * k..(i + 1) * k]
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn scale(&self, i: usize) -> Vector3<f64> {
        self.log_scales[i].map(f64::exp)
    }

    pub fn covariance(&self, i: usize) -> Result<Covariance3> {
        build_covariance(&normalize_quaternion(&self.rotations[i])?, &self.log_scales[i])
    }

    /// Keeps the rows where `keep[i]` is true.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len(), "mask length must match cloud size");
        let k = self.sh_count();
        retain_rows(&mut self.positions, keep, 1);
        retain_rows(&mut self.rotations, keep, 1);
        retain_rows(&mut self.log_scales, keep, 1);
        retain_rows(&mut self.opacity_logits, keep, 1);
        retain_rows(&mut self.sh_coeffs, keep, k);
    }

    pub fn normalize_rotations(&mut self) -> Result<()> {
        for q in &mut self.rotations {
            *q = normalize_quaternion(q)?;
        }
        Ok(())
    }

    /// Checks array lengths and that every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.rotations.len() != n
            || self.log_scales.len() != n
            || self.opacity_logits.len() != n
            || self.sh_coeffs.len() != n * self.sh_count()
        {
            return Err(Error::Shape("parameter arrays disagree on Gaussian count".into()));
        }
        for i in 0..n {
            let finite = self.positions[i].iter().all(|v| v.is_finite())
                && self.rotations[i].iter().all(|v| v.is_finite())
                && self.log_scales[i].iter().all(|v| v.is_finite())
                && self.opacity_logits[i].is_finite()
                && self.sh(i).iter().all(|c| c.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::InvalidParameter(format!("Gaussian {i} has non-finite parameters")));
            }
            if self.rotations[i].norm() == 0.0 {
                return Err(Error::InvalidParameter(format!("Gaussian {i} has a zero quaternion")));
            }
        }
        Ok(())
    }
}

pub(crate) fn retain_rows<T>(v: &mut Vec<T>, keep: &[bool], stride: usize) {
    let mut row = 0;
    let mut idx = 0;
    v.retain(|_| {
        let k = keep[row];
        idx += 1;
        if idx == stride {
            idx = 0;
            row += 1;
        }
        k
    });
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn normalize_quaternion(q: &Vector4<f64>) -> Result<Vector4<f64>> {
    let n = q.norm();
    if !n.is_finite() || n == 0.0 {
        return Err(Error::InvalidParameter(format!("cannot normalize quaternion {q:?}")));
    }
    Ok(q / n)
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the unit quaternion components.
fn rotation_matrix_backward(q: &Vector4<f64>, g: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let gw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)] + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    Vector4::new(gw, gx, gy, gz)
}

/// `Σ = R · diag(s²) · Rᵀ` with `s = exp(log_scale)`.
///
/// `rotation` must already be unit norm (within 1e-6).
pub fn build_covariance(rotation: &Vector4<f64>, log_scale: &Vector3<f64>) -> Result<Covariance3> {
    if !rotation.iter().chain(log_scale.iter()).all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite rotation or scale".into()));
    }
    if (rotation.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "quaternion norm {} is not within 1e-6 of 1",
            rotation.norm()
        )));
    }
    let r = rotation_matrix(rotation);
    let m = r * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    Ok(m * m.transpose())
}

/// Gradient of a scalar loss through [`build_covariance`] applied to a *raw*
/// quaternion (normalization included).
///
/// `grad_cov` is the full-matrix gradient `∂L/∂Σ`; it is symmetrized here.
/// Returns `(∂L/∂q_raw, ∂L/∂log_scale)`.
pub fn build_covariance_backward(
    raw_rotation: &Vector4<f64>,
    log_scale: &Vector3<f64>,
    grad_cov: &Matrix3<f64>,
) -> (Vector4<f64>, Vector3<f64>) {
    let norm = raw_rotation.norm();
    let q = raw_rotation / norm;
    let s = log_scale.map(f64::exp);
    let r = rotation_matrix(&q);
    let m = r * Matrix3::from_diagonal(&s);
    let gs = 0.5 * (grad_cov + grad_cov.transpose());
    // Σ = M Mᵀ
    let gm = 2.0 * gs * m;
    let mut g_log_scale = Vector3::zeros();
    let mut gr = Matrix3::zeros();
    for k in 0..3 {
        let mut gsk = 0.0;
        for i in 0..3 {
            gsk += gm[(i, k)] * r[(i, k)];
            gr[(i, k)] = gm[(i, k)] * s[k];
        }
        g_log_scale[k] = gsk * s[k];
    }
    let gq = rotation_matrix_backward(&q, &gr);
    let g_raw = (gq - q * q.dot(&gq)) / norm;
    (g_raw, g_log_scale)
}
