use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::optim::Adam;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::gaussians::{normalize_quaternion, rotation_matrix, GaussianCloud};
use crate::rasterizer::RenderGrads;

/// Per-Gaussian running sum of the NDC mean-gradient norm over the views that
/// saw it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStats {
    pub sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(rows: usize) -> Self {
        Self {
            sum: vec![0.0; rows],
            count: vec![0; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.sum.len()
    }

    pub fn record(&mut self, view: &RenderGrads) {
        assert_eq!(view.len(), self.rows(), "gradient statistics out of sync with the cloud");
        for i in 0..self.rows() {
            if view.visible[i] {
                self.sum[i] += view.mean2d_grad_norm[i];
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.sum[i] / self.count[i] as f64
        }
    }

    pub fn reset(&mut self, rows: usize) {
        *self = Self::new(rows);
    }

    fn retain(&mut self, keep: &[bool]) {
        crate::gaussians::retain_rows(&mut self.sum, keep, 1);
        crate::gaussians::retain_rows(&mut self.count, keep, 1);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyOutcome {
    pub split: usize,
    pub cloned: usize,
}

/// Grows the cloud where the accumulated screen-space gradient is large.
///
/// Candidates whose largest σ exceeds `split_scale_fraction·scene_extent` are
/// replaced by two children at ±½σ along their major axis with every scale
/// divided by `split_factor`; smaller candidates get a jittered copy. New rows
/// start with zero optimizer moments and all statistics are reset.
pub fn densify(
    cloud: &mut GaussianCloud,
    adam: &mut Adam,
    stats: &mut GradStats,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<DensifyOutcome> {
    let n = cloud.len();
    let mut keep = vec![true; n];
    let mut born = Vec::new();
    let mut outcome = DensifyOutcome::default();
    let shrink = config.split_factor.ln();
    for i in 0..n {
        if stats.mean(i) <= config.densify_grad_threshold {
            continue;
        }
        let parent = cloud.get(i);
        let (major, log_max) = parent.log_scale.argmax();
        let sigma = log_max.exp();
        if sigma > config.split_scale_fraction * config.scene_extent {
            let q = normalize_quaternion(&parent.rotation)?;
            let axis: Vector3<f64> = rotation_matrix(&q).column(major).into();
            for sign in [1.0, -1.0] {
                let mut child = parent.clone();
                child.rotation = q;
                child.position += sign * 0.5 * sigma * axis;
                child.log_scale = parent.log_scale.map(|l| l - shrink);
                born.push(child);
            }
            keep[i] = false;
            outcome.split += 1;
        } else {
            let mut child = parent;
            let jitter = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
            child.position += config.clone_jitter * sigma * jitter;
            born.push(child);
            outcome.cloned += 1;
        }
    }
    if born.is_empty() {
        stats.reset(n);
        return Ok(outcome);
    }
    cloud.retain_mask(&keep);
    adam.retain(&keep);
    let added = born.len();
    for g in born {
        cloud.push(g)?;
    }
    adam.push_zero_rows(added);
    stats.reset(cloud.len());
    Ok(outcome)
}

/// Removes nearly transparent and oversized Gaussians. Returns the number removed.
pub fn prune(cloud: &mut GaussianCloud, adam: &mut Adam, stats: &mut GradStats, config: &TrainConfig) -> Result<usize> {
    let max_sigma = config.prune_scale_fraction * config.scene_extent;
    let keep: Vec<bool> = (0..cloud.len())
        .map(|i| cloud.opacity(i) >= config.prune_opacity_threshold && cloud.log_scales[i].max().exp() <= max_sigma)
        .collect();
    let removed = keep.iter().filter(|k| !**k).count();
    if removed == cloud.len() {
        return Err(Error::DegenerateModel(format!(
            "pruning would remove all {} Gaussians (opacity < {} or σ > {})",
            cloud.len(),
            config.prune_opacity_threshold,
            max_sigma
        )));
    }
    if removed > 0 {
        cloud.retain_mask(&keep);
        adam.retain(&keep);
        stats.retain(&keep);
    }
    Ok(removed)
}
