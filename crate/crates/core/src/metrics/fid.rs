use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::FeatureSet;
use crate::error::{Error, Result};

/// Negative eigenvalues down to this are rounding noise and clamped to zero.
pub const EIGEN_TOLERANCE: f64 = 1e-6;

/// Sample mean and unbiased (N−1) covariance of the rows.
pub fn mean_and_covariance(f: &FeatureSet) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = f.rows();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 feature rows, got {n}")));
    }
    let m = f.matrix();
    let mean: DVector<f64> = m.row_mean().transpose();
    let mut centered = m.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, cov))
}

fn clamp_eigenvalue(l: f64, what: &str) -> Result<f64> {
    if l < -EIGEN_TOLERANCE {
        return Err(Error::Numerical(format!("{what} has eigenvalue {l} below -{EIGEN_TOLERANCE}")));
    }
    Ok(l.max(0.0))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Principal square root of a symmetric PSD matrix.
fn sqrtm_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig
        .eigenvalues
        .iter()
        .map(|l| clamp_eigenvalue(*l, what).map(f64::sqrt))
        .collect::<Result<Vec<_>>>()?;
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&DVector::from_vec(roots)) * v.transpose())
}

/// Fréchet distance between Gaussian fits of two feature sets:
/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^½)`.
///
/// `Tr (Σ₁Σ₂)^½` is computed as the sum of square roots of the eigenvalues of
/// the symmetric matrix `Σ₁^½ Σ₂ Σ₁^½`, which has the same spectrum.
pub fn fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("feature dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    let (mu1, s1) = mean_and_covariance(a)?;
    let (mu2, s2) = mean_and_covariance(b)?;
    fid_from_moments(&mu1, &s1, &mu2, &s2)
}

pub fn fid_from_moments(mu1: &DVector<f64>, s1: &DMatrix<f64>, mu2: &DVector<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    let root1 = sqrtm_psd(s1, "first covariance")?;
    let inner = symmetrize(&(&root1 * s2 * &root1));
    let eig = SymmetricEigen::new(inner);
    let mut tr_sqrt = 0.0;
    for l in eig.eigenvalues.iter() {
        tr_sqrt += clamp_eigenvalue(*l, "covariance product")?.sqrt();
    }
    let d = (mu1 - mu2).norm_squared() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
    if !d.is_finite() {
        return Err(Error::Numerical("FID is not finite".into()));
    }
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut impl Rng, n: usize, d: usize) -> FeatureSet {
        let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureSet::from_row_major(n, d, &data).unwrap()
    }

    #[test]
    fn self_distance_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_set(&mut rng, 50, 6);
        assert!(fid(&a, &a).unwrap() < 1e-8);
    }

    #[test]
    fn one_dimensional_closed_form() {
        let a = FeatureSet::from_rows(&[vec![1.0], vec![2.0], vec![4.0]]).unwrap();
        let b = FeatureSet::from_rows(&[vec![-1.0], vec![0.5], vec![0.0], vec![3.0]]).unwrap();
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0);
            (m, var)
        };
        let (m1, v1) = stats(&[1.0, 2.0, 4.0]);
        let (m2, v2) = stats(&[-1.0, 0.5, 0.0, 3.0]);
        let expect = (m1 - m2).powi(2) + v1 + v2 - 2.0 * (v1 * v2).sqrt();
        assert!((fid(&a, &b).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn too_few_rows_or_mismatched_dims() {
        let one = FeatureSet::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(fid(&one, &one).is_err());
        let a = FeatureSet::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let b = FeatureSet::from_rows(&[vec![1.0, 0.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(fid(&a, &b), Err(Error::Shape(_))));
    }
}
