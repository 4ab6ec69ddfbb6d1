use serde::{Deserialize, Serialize};

use super::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunLabel {
    Full,
    FirstStageOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step index over both stages.
    pub step: usize,
    pub stage: u8,
    pub mv_timesteps: Vec<usize>,
    pub sd_timesteps: Vec<usize>,
    /// `½·mean(g²)` of the unweighted SDS gradients, averaged over views.
    pub mv_sds_loss: f64,
    pub sd_sds_loss: f64,
    /// Mean alpha over the batch.
    pub sparsity_loss: f64,
    /// Weighted sum of the three terms above.
    pub loss: f64,
    pub gaussians: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyEvent {
    pub step: usize,
    pub stage: u8,
    pub split: usize,
    pub cloned: usize,
    pub pruned: usize,
    pub gaussians: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: RunLabel,
    pub prompt: String,
    pub seed: u64,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    /// Wall-clock seconds of each stage; initialization counts towards stage 1.
    pub stage_seconds: [f64; 2],
    pub total_seconds: f64,
    pub skipped_steps: usize,
    pub final_gaussians: usize,
    /// Cloud size after every step.
    pub gaussian_counts: Vec<usize>,
    pub topology: Vec<TopologyEvent>,
    pub steps: Vec<StepRecord>,
}

impl RunReport {
    pub fn new(prompt: &str, config: &TrainConfig) -> Self {
        Self {
            label: if config.stage2_steps == 0 {
                RunLabel::FirstStageOnly
            } else {
                RunLabel::Full
            },
            prompt: prompt.to_string(),
            seed: config.seed,
            stage1_steps: config.stage1_steps,
            stage2_steps: config.stage2_steps,
            stage_seconds: [0.0; 2],
            total_seconds: 0.0,
            skipped_steps: 0,
            final_gaussians: 0,
            gaussian_counts: Vec::new(),
            topology: Vec::new(),
            steps: Vec::new(),
        }
    }

    /// Wall-clock hours spent generating this model.
    pub fn gpu_hours(&self) -> f64 {
        self.total_seconds / 3600.0
    }
}
