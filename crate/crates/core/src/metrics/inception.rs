use crate::error::{Error, Result};

/// Rows must be probability distributions within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// `exp(mean_x KL(p(y|x) ‖ p(y)))` for one block of rows, `p(y)` being the
/// block's mean distribution.
fn block_score(rows: &[Vec<f64>]) -> f64 {
    let c = rows[0].len();
    let mut marginal = vec![0.0; c];
    for r in rows {
        for (m, p) in marginal.iter_mut().zip(r) {
            *m += p;
        }
    }
    for m in &mut marginal {
        *m /= rows.len() as f64;
    }
    let mean_kl = rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&marginal)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, q)| p * (p / q).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / rows.len() as f64;
    mean_kl.exp()
}

/// Inception score over `splits` contiguous blocks of rows; returns the mean
/// and population standard deviation of the per-block scores.
pub fn inception_score(class_probs: &[Vec<f64>], splits: usize) -> Result<(f64, f64)> {
    let n = class_probs.len();
    if splits == 0 || splits > n {
        return Err(Error::InvalidParameter(format!("cannot split {n} rows into {splits} blocks")));
    }
    let c = class_probs[0].len();
    if c < 2 {
        return Err(Error::InvalidParameter("need at least 2 classes".into()));
    }
    for (i, r) in class_probs.iter().enumerate() {
        if r.len() != c {
            return Err(Error::Shape(format!("row {i} has {} classes, expected {c}", r.len())));
        }
        if r.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidFeature(format!("row {i} has a negative or non-finite probability")));
        }
        let s: f64 = r.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidFeature(format!("row {i} sums to {s}")));
        }
    }
    let scores: Vec<f64> = (0..splits)
        .map(|k| block_score(&class_probs[k * n / splits..(k + 1) * n / splits]))
        .collect();
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_rows_score_one() {
        let rows = vec![vec![0.25; 4]; 20];
        let (m, s) = inception_score(&rows, 4).unwrap();
        assert!((m - 1.0).abs() < 1e-12);
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn balanced_one_hot_scores_class_count() {
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|i| {
                let mut r = vec![0.0; 10];
                r[i % 10] = 1.0;
                r
            })
            .collect();
        let (m, _) = inception_score(&rows, 1).unwrap();
        assert!((m - 10.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_rows_rejected() {
        assert!(inception_score(&[vec![0.5, 0.6]], 1).is_err());
        assert!(inception_score(&[vec![1.0]], 1).is_err());
        assert!(inception_score(&[vec![1.5, -0.5]], 1).is_err());
        assert!(inception_score(&[vec![0.5, 0.5]], 2).is_err());
    }
}
