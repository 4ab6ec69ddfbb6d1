use super::FeatureSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Distance {
    #[default]
    Euclidean,
    /// `1 − cos∠(a, b)`
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JanusOptions {
    pub rho: f64,
    pub min_run: usize,
    pub distance: Distance,
}

impl Default for JanusOptions {
    fn default() -> Self {
        Self {
            rho: 1.5,
            min_run: 2,
            distance: Distance::Euclidean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JanusVerdict {
    pub has_janus: bool,
    /// Frame 0 is the reference and always marked.
    pub similar_mask: Vec<bool>,
    /// Inclusive `(start, end)` frame ranges of repeated views, sorted.
    pub runs: Vec<(usize, usize)>,
    pub distances: Vec<f64>,
    pub threshold: f64,
}

fn distance(a: &[f64], b: &[f64], kind: Distance) -> Result<f64> {
    match kind {
        Distance::Euclidean => Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()),
        Distance::Cosine => {
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::InvalidFeature("zero-norm feature under cosine distance".into()));
            }
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            Ok(1.0 - dot / (na * nb))
        }
    }
}

/// Flags frames of a turntable that look like the first frame although they
/// face away from it.
///
/// Frames must be ordered by azimuth starting at the reference view. With
/// `d_k` the distance of frame k to frame 0, a frame is similar when
/// `d_k < ρ·(d_1 + d_{K-1})`, the two neighbours of the reference on the
/// circle. Similar frames connected to frame 0 (wrapping around the end) are
/// expected; any other run of at least `min_run` similar frames is a repeat.
pub fn janus_detect(features: &FeatureSet, options: &JanusOptions) -> Result<JanusVerdict> {
    let k = features.rows();
    if k < 3 {
        return Err(Error::InsufficientFrames(k));
    }
    if !(options.rho > 0.0) || options.min_run == 0 {
        return Err(Error::InvalidParameter("rho must be > 0 and min_run >= 1".into()));
    }
    let reference = features.row(0);
    let distances = (0..k)
        .map(|i| distance(&reference, &features.row(i), options.distance))
        .collect::<Result<Vec<_>>>()?;
    let threshold = options.rho * (distances[1] + distances[k - 1]);
    let mut mask: Vec<bool> = distances.iter().map(|d| *d < threshold).collect();
    mask[0] = true;
    Ok(verdict_from_mask(mask, options.min_run, distances, threshold))
}

/// Run detection on an already computed similarity mask.
pub fn verdict_from_mask(mask: Vec<bool>, min_run: usize, distances: Vec<f64>, threshold: f64) -> JanusVerdict {
    let k = mask.len();
    let mut head_end = 0;
    while head_end + 1 < k && mask[head_end + 1] {
        head_end += 1;
    }
    let mut runs = Vec::new();
    if head_end + 1 < k {
        let mut tail_start = k;
        while tail_start > head_end + 1 && mask[tail_start - 1] {
            tail_start -= 1;
        }
        let mut i = head_end + 1;
        while i < tail_start {
            if mask[i] {
                let start = i;
                while i < tail_start && mask[i] {
                    i += 1;
                }
                if i - start >= min_run {
                    runs.push((start, i - 1));
                }
            } else {
                i += 1;
            }
        }
    }
    JanusVerdict {
        has_janus: !runs.is_empty(),
        similar_mask: mask,
        runs,
        distances,
        threshold,
    }
}

/// Percentage of true entries.
pub fn janus_frequency(labels: &[bool]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidParameter("janus frequency of an empty list".into()));
    }
    Ok(100.0 * labels.iter().filter(|b| **b).count() as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One-dimensional features whose distance to frame 0 is exactly `d`.
    fn from_distances(d: &[f64]) -> FeatureSet {
        FeatureSet::from_rows(&d.iter().map(|v| vec![*v]).collect::<Vec<_>>()).unwrap()
    }

    fn mask(bits: &str) -> Vec<bool> {
        bits.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn head_and_tail_only() {
        let v = verdict_from_mask(mask("1100000001"), 2, vec![], 0.0);
        assert!(!v.has_janus);
        let v = verdict_from_mask(mask("1111111111"), 2, vec![], 0.0);
        assert!(!v.has_janus);
    }

    #[test]
    fn middle_runs_respect_min_run() {
        let v = verdict_from_mask(mask("1100110001"), 2, vec![], 0.0);
        assert_eq!(v.runs, vec![(4, 5)]);
        let v = verdict_from_mask(mask("1100100101"), 2, vec![], 0.0);
        assert!(!v.has_janus);
        let v = verdict_from_mask(mask("1100100101"), 1, vec![], 0.0);
        assert_eq!(v.runs, vec![(4, 4), (7, 7)]);
    }

    #[test]
    fn planted_back_face() {
        // low,low,high×3,low,low,high×3,low with the neighbours at the threshold
        let d = [0.0, 1.0, 5.0, 5.0, 5.0, 0.2, 0.2, 5.0, 5.0, 5.0, 1.0];
        let opts = JanusOptions {
            rho: 0.5,
            min_run: 2,
            distance: Distance::Euclidean,
        };
        let v = janus_detect(&from_distances(&d), &opts).unwrap();
        assert_eq!(v.threshold, 1.0);
        assert_eq!(v.runs, vec![(5, 6)]);
        assert!(v.has_janus);
    }

    #[test]
    fn identical_frames_are_degenerate() {
        let f = FeatureSet::from_rows(&vec![vec![0.3, -1.0]; 8]).unwrap();
        let v = janus_detect(&f, &JanusOptions::default()).unwrap();
        assert_eq!(v.threshold, 0.0);
        assert_eq!(v.similar_mask, mask("10000000"));
        assert!(!v.has_janus);
    }

    #[test]
    fn too_few_frames() {
        let f = from_distances(&[0.0, 1.0]);
        assert!(matches!(janus_detect(&f, &JanusOptions::default()), Err(Error::InsufficientFrames(2))));
    }

    #[test]
    fn cosine_distance_flag() {
        let f = FeatureSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let opts = JanusOptions {
            distance: Distance::Cosine,
            ..Default::default()
        };
        let v = janus_detect(&f, &opts).unwrap();
        assert_eq!(v.distances, vec![0.0, 1.0, 0.0, 1.0]);
        let zero = FeatureSet::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(janus_detect(&zero, &opts), Err(Error::InvalidFeature(_))));
    }

    #[test]
    fn frequency() {
        let mut labels = vec![false; 100];
        labels[..6].fill(true);
        assert_eq!(janus_frequency(&labels).unwrap(), 6.0);
        assert_eq!(janus_frequency(&[false; 100]).unwrap(), 0.0);
        assert_eq!(janus_frequency(&[true; 7]).unwrap(), 100.0);
        assert!(janus_frequency(&[]).is_err());
    }
}
