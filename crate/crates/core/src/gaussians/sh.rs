use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub const MAX_SH_DEGREE: usize = 3;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Real SH basis values `Y_k(dir)` for `k < (degree+1)²`, in the band order used by
/// the common Gaussian-splatting PLY layout. Unused trailing entries are zero.
pub fn sh_basis(degree: usize, dir: &Vector3<f64>) -> [f64; 16] {
    let mut y = [0.0; 16];
    let (x, yy, z) = (dir.x, dir.y, dir.z);
    y[0] = C0;
    if degree >= 1 {
        y[1] = -C1 * yy;
        y[2] = C1 * z;
        y[3] = -C1 * x;
    }
    if degree >= 2 {
        let (xx, y2, zz) = (x * x, yy * yy, z * z);
        y[4] = C2[0] * x * yy;
        y[5] = C2[1] * yy * z;
        y[6] = C2[2] * (2.0 * zz - xx - y2);
        y[7] = C2[3] * x * z;
        y[8] = C2[4] * (xx - y2);
        if degree >= 3 {
            y[9] = C3[0] * yy * (3.0 * xx - y2);
            y[10] = C3[1] * x * yy * z;
            y[11] = C3[2] * yy * (4.0 * zz - xx - y2);
            y[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * y2);
            y[13] = C3[4] * x * (4.0 * zz - xx - y2);
            y[14] = C3[5] * z * (xx - y2);
            y[15] = C3[6] * x * (xx - 3.0 * y2);
        }
    }
    y
}

/// Partial derivatives of each basis polynomial with respect to the raw direction
/// components (no normalization).
pub fn sh_basis_gradient(degree: usize, dir: &Vector3<f64>) -> [Vector3<f64>; 16] {
    let mut g = [Vector3::zeros(); 16];
    let (x, y, z) = (dir.x, dir.y, dir.z);
    if degree >= 1 {
        g[1] = Vector3::new(0.0, -C1, 0.0);
        g[2] = Vector3::new(0.0, 0.0, C1);
        g[3] = Vector3::new(-C1, 0.0, 0.0);
    }
    if degree >= 2 {
        g[4] = C2[0] * Vector3::new(y, x, 0.0);
        g[5] = C2[1] * Vector3::new(0.0, z, y);
        g[6] = C2[2] * Vector3::new(-2.0 * x, -2.0 * y, 4.0 * z);
        g[7] = C2[3] * Vector3::new(z, 0.0, x);
        g[8] = C2[4] * Vector3::new(2.0 * x, -2.0 * y, 0.0);
        if degree >= 3 {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            g[9] = C3[0] * Vector3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
            g[10] = C3[1] * Vector3::new(y * z, x * z, x * y);
            g[11] = C3[2] * Vector3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
            g[12] = C3[3] * Vector3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
            g[13] = C3[4] * Vector3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
            g[14] = C3[5] * Vector3::new(2.0 * x * z, -2.0 * y * z, xx - yy);
            g[15] = C3[6] * Vector3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
        }
    }
    g
}

fn degree_for_count(n: usize) -> Result<usize> {
    (0..=MAX_SH_DEGREE)
        .find(|&l| sh_coeff_count(l) == n)
        .ok_or_else(|| Error::Shape(format!("{n} is not a valid SH coefficient count")))
}

/// View-dependent color `0.5 + Σ c_k Y_k(dir)`, unclamped.
pub fn eval_sh(coeffs: &[Vector3<f64>], view_dir: &Vector3<f64>) -> Result<Vector3<f64>> {
    let degree = degree_for_count(coeffs.len())?;
    let basis = sh_basis(degree, view_dir);
    Ok(coeffs
        .iter()
        .zip(basis.iter())
        .fold(Vector3::repeat(0.5), |acc, (c, y)| acc + c * *y))
}

/// Backward of [`eval_sh`] composed with direction normalization.
///
/// `raw_dir` is the unnormalized direction (Gaussian mean minus camera center);
/// `grad_color` is `∂L/∂rgb`. Accumulates `∂L/∂coeffs` into `grad_coeffs` and
/// returns `∂L/∂raw_dir`.
pub fn eval_sh_backward(
    coeffs: &[Vector3<f64>],
    raw_dir: &Vector3<f64>,
    grad_color: &Vector3<f64>,
    grad_coeffs: &mut [Vector3<f64>],
) -> Vector3<f64> {
    let degree = degree_for_count(coeffs.len()).expect("coefficient count validated by caller");
    let norm = raw_dir.norm();
    let dir = raw_dir / norm;
    let basis = sh_basis(degree, &dir);
    for (g, y) in grad_coeffs.iter_mut().zip(basis.iter()) {
        *g += grad_color * *y;
    }
    if degree == 0 {
        return Vector3::zeros();
    }
    let dbasis = sh_basis_gradient(degree, &dir);
    let mut g_dir = Vector3::zeros();
    for (c, db) in coeffs.iter().zip(dbasis.iter()).skip(1) {
        g_dir += db * c.dot(grad_color);
    }
    let jac = (Matrix3::identity() - dir * dir.transpose()) / norm;
    jac * g_dir
}
