use super::FeatureSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub percent: f64,
    /// Whether each render retrieved its own prompt at rank 1.
    pub hits: Vec<bool>,
    /// Index of the top-ranked prompt for each render.
    pub retrieved: Vec<usize>,
}

fn normalized_rows(f: &FeatureSet, what: &str) -> Result<Vec<Vec<f64>>> {
    (0..f.rows())
        .map(|i| {
            let r = f.row(i);
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::InvalidFeature(format!("{what} embedding {i} has zero norm")));
            }
            Ok(r.iter().map(|v| v / n).collect())
        })
        .collect()
}

/// R-precision at R=1: the share of renders whose most cosine-similar prompt is
/// their own. Ties go to the lower prompt index.
pub fn r_precision(renders: &FeatureSet, prompts: &FeatureSet, true_index: &[usize]) -> Result<RetrievalResult> {
    if renders.dim() != prompts.dim() {
        return Err(Error::Shape(format!(
            "render embeddings have dimension {}, prompt embeddings {}",
            renders.dim(),
            prompts.dim()
        )));
    }
    if prompts.rows() < 2 {
        return Err(Error::InvalidParameter("retrieval needs at least 2 prompts".into()));
    }
    if true_index.len() != renders.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} renders",
            true_index.len(),
            renders.rows()
        )));
    }
    if renders.rows() == 0 {
        return Err(Error::InvalidParameter("no renders to evaluate".into()));
    }
    if let Some(bad) = true_index.iter().find(|t| **t >= prompts.rows()) {
        return Err(Error::Range(format!("true prompt index {bad} out of {} prompts", prompts.rows())));
    }
    let r = normalized_rows(renders, "render")?;
    let p = normalized_rows(prompts, "prompt")?;
    let retrieved: Vec<usize> = r
        .iter()
        .map(|e| {
            let mut best = 0;
            let mut best_sim = f64::NEG_INFINITY;
            for (j, q) in p.iter().enumerate() {
                let sim: f64 = e.iter().zip(q).map(|(a, b)| a * b).sum();
                if sim > best_sim {
                    best = j;
                    best_sim = sim;
                }
            }
            best
        })
        .collect();
    let hits: Vec<bool> = retrieved.iter().zip(true_index).map(|(a, b)| a == b).collect();
    let percent = 100.0 * hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64;
    Ok(RetrievalResult {
        percent,
        hits,
        retrieved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted_retrieval() {
        let eye = FeatureSet::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let r = r_precision(&eye, &eye, &[0, 1, 2]).unwrap();
        assert_eq!(r.percent, 100.0);

        let prompts = FeatureSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        // each render is the negation of its prompt: cos = -1 to its own, 0 to the other
        let renders = FeatureSet::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        assert_eq!(r_precision(&renders, &prompts, &[0, 1]).unwrap().percent, 0.0);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let prompts = FeatureSet::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let renders = FeatureSet::from_rows(&[vec![2.0, 0.0], vec![3.0, 0.0]]).unwrap();
        let r = r_precision(&renders, &prompts, &[0, 1]).unwrap();
        assert_eq!(r.retrieved, vec![0, 0]);
        assert_eq!(r.percent, 50.0);
    }

    #[test]
    fn errors() {
        let p = FeatureSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let zero = FeatureSet::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(r_precision(&zero, &p, &[0]), Err(Error::InvalidFeature(_))));
        let one = FeatureSet::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(r_precision(&one, &one, &[0]).is_err());
        assert!(r_precision(&one, &p, &[2]).is_err());
    }
}
