use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Row-major `H×W×3` float image.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, color: Vector3<f64>) -> Self {
        let mut img = Self::zeros(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(color.as_slice());
        }
        img
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "image data has {} values, expected {}x{}x3",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &RgbImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> Vector3<f64> {
        let i = (y * self.width + x) * 3;
        Vector3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: Vector3<f64>) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(c.as_slice());
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Elementwise `f(self, other)`; panics on shape mismatch.
    pub fn zip_map(&self, other: &RgbImage, f: impl Fn(f64, f64) -> f64) -> RgbImage {
        assert!(self.same_shape(other), "image shapes differ");
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &RgbImage, scale: f64) {
        assert!(self.same_shape(other), "image shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn mean_squared(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64
    }

    pub fn mse(&self, other: &RgbImage) -> f64 {
        self.zip_map(other, |a, b| a - b).mean_squared()
    }

    /// PSNR in dB for images with peak value 1.
    pub fn psnr(&self, other: &RgbImage) -> f64 {
        -10.0 * self.mse(other).log10()
    }

    /// 8-bit quantization with clamping to `[0, 1]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_access_and_quantization() {
        let mut img = RgbImage::zeros(3, 2);
        img.set_pixel(2, 1, Vector3::new(1.0, 0.5, -1.0));
        assert_eq!(img.pixel(2, 1), Vector3::new(1.0, 0.5, -1.0));
        let bytes = img.to_rgb8();
        assert_eq!(&bytes[15..18], &[255, 128, 0]);
        assert!(RgbImage::from_vec(3, 2, vec![0.0; 17]).is_err());
    }

    #[test]
    fn psnr_of_known_error() {
        let a = RgbImage::filled(4, 4, Vector3::repeat(0.5));
        let b = RgbImage::filled(4, 4, Vector3::repeat(0.6));
        assert!((a.psnr(&b) - 20.0).abs() < 1e-9);
    }
}
