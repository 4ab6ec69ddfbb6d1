use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `K×D` matrix of per-frame (or per-prompt) feature vectors, one row each.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    matrix: DMatrix<f64>,
}

impl FeatureSet {
    /// Builds from row-major data; every value must be finite.
    pub fn from_row_major(rows: usize, dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "{} values cannot form {rows} rows of dimension {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidFeature(format!("row {} has a non-finite value", i / dim.max(1))));
        }
        Ok(Self {
            matrix: DMatrix::from_row_slice(rows, dim, data),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Shape(format!("row {r} has dimension {}, expected {dim}", rows[r].len())));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_major(rows.len(), dim, &flat)
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFeature("non-finite feature value".into()));
        }
        Ok(Self { matrix })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i).iter().copied().collect()
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows() * self.dim());
        for r in self.matrix.row_iter() {
            out.extend(r.iter());
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            matrix: &self.matrix * s,
        }
    }
}
