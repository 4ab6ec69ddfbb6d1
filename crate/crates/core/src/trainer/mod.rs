//! The two-stage generation pipeline.
//!
//! Stage 1 distills a multiview score into a randomly initialized cloud, stage 2
//! adds single-view guidance with viewpoint-augmented prompts. Every step
//! renders a batch of views, turns guidance and the alpha sparsity term into
//! per-pixel gradients, backpropagates them through the rasterizer and takes one
//! Adam step. Densification and pruning run at fixed intervals.

mod config;
mod optim;
mod report;
mod sampling;
mod topology;

pub use config::{ConfigValue, TrainConfig};
pub use optim::{Adam, LearningRates, Moments, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use report::{RunLabel, RunReport, StepRecord, TopologyEvent};
pub use sampling::{init_cloud, sample_cameras, sample_multiview_group, CameraRanges, CameraSampler};
pub use topology::{densify, prune, DensifyOutcome, GradStats};

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gaussians::{CameraPose, GaussianCloud};
use crate::guidance::{
    multiview_sds_pixel_gradients, sample_timestep, sds_pixel_gradient, NoiseSchedule, Prompt, ScoreProvider,
};
use crate::image::RgbImage;
use crate::rasterizer::{render, render_backward, RenderGrads};

/// Mean alpha over the image and its gradient: `1/|Ω|` where alpha is positive.
pub fn sparsity_loss(alpha: &[f64]) -> (f64, Vec<f64>) {
    if alpha.is_empty() {
        return (0.0, Vec::new());
    }
    let n = alpha.len() as f64;
    let loss = alpha.iter().map(|a| a.abs()).sum::<f64>() / n;
    let grad = alpha.iter().map(|a| if *a > 0.0 { 1.0 / n } else { 0.0 }).collect();
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

/// The score sources for a run. The single-view provider is only needed when
/// stage 2 runs with a positive `weight_sd`.
pub struct Providers<'a> {
    pub multiview: &'a mut dyn ScoreProvider,
    pub single_view: Option<&'a mut dyn ScoreProvider>,
}

/// Everything that evolves during optimization.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub cloud: GaussianCloud,
    pub adam: Adam,
    pub stats: GradStats,
    pub rng: ChaCha8Rng,
    /// Completed optimizer steps over both stages.
    pub step: usize,
    pub elapsed: Duration,
}

impl TrainState {
    pub fn new(cloud: GaussianCloud, rng: ChaCha8Rng) -> Self {
        let n = cloud.len();
        let sh = cloud.sh_count();
        Self {
            cloud,
            adam: Adam::new(n, sh),
            stats: GradStats::new(n),
            rng,
            step: 0,
            elapsed: Duration::ZERO,
        }
    }

    /// True when optimizer moments and statistics have one row per Gaussian.
    pub fn is_aligned(&self) -> bool {
        self.adam.aligned_with(self.cloud.len()) && self.stats.rows() == self.cloud.len()
    }
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub prompt: Prompt,
    pub sampler: CameraSampler,
    pub state: TrainState,
    providers: Providers<'a>,
    mv_schedule: NoiseSchedule,
    sd_schedule: NoiseSchedule,
}

impl<'a> Trainer<'a> {
    /// Validates the setup, asks each provider for its noise schedule and
    /// initializes the cloud from `config.seed`.
    pub fn new(prompt: Prompt, mut providers: Providers<'a>, config: TrainConfig, sampler: CameraSampler) -> Result<Self> {
        config.validate()?;
        sampler.validate()?;
        if config.stage2_steps > 0 && config.weight_sd > 0.0 && providers.single_view.is_none() {
            return Err(Error::Config("stage 2 with weight_sd > 0 needs a single-view provider".into()));
        }
        let mv_schedule = providers.multiview.schedule()?.unwrap_or_default();
        let sd_schedule = match providers.single_view.as_mut() {
            Some(p) => p.schedule()?.unwrap_or_default(),
            None => NoiseSchedule::default(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let cloud = init_cloud(config.n_init_gaussians, &mut rng, config.init_radius, config.sh_degree)?;
        Ok(Self {
            state: TrainState::new(cloud, rng),
            config,
            prompt,
            sampler,
            providers,
            mv_schedule,
            sd_schedule,
        })
    }

    /// Replaces the initial cloud, resetting optimizer state.
    pub fn with_cloud(mut self, cloud: GaussianCloud) -> Result<Self> {
        cloud.validate()?;
        let rng = self.state.rng.clone();
        self.state = TrainState::new(cloud, rng);
        Ok(self)
    }

    pub fn background(&self) -> Vector3<f64> {
        if self.config.white_background {
            Vector3::repeat(1.0)
        } else {
            Vector3::zeros()
        }
    }

    /// Multiview groups and single views rendered per step in `stage`.
    ///
    /// Stage 2 without single-view weight keeps the stage-1 batch so the two
    /// stages draw identical samples.
    pub fn allocation(&self, stage: Stage) -> (usize, usize) {
        let c = &self.config;
        match stage {
            Stage::Two if c.weight_sd > 0.0 => {
                ((c.batch_cameras - c.stage2_single_views) / c.multiview_views, c.stage2_single_views)
            }
            _ => (c.batch_cameras / c.multiview_views, 0),
        }
    }

    fn lrs(&self) -> LearningRates {
        let c = &self.config;
        LearningRates {
            position: c.lr_position,
            rotation: c.lr_rotation,
            scale: c.lr_scale,
            opacity: c.lr_opacity,
            feature: c.lr_feature,
        }
    }

    /// One optimizer step. On a guidance failure the parameters are untouched
    /// and the error is returned.
    pub fn train_step(&mut self, stage: Stage) -> Result<StepRecord> {
        let started = Instant::now();
        let (n_groups, n_singles) = self.allocation(stage);
        let bg = self.background();
        let cfg = self.config.clone();
        let mv_cfg = cfg.mv_guidance();
        let sd_cfg = cfg.sd_guidance();
        let rng = &mut self.state.rng;

        let groups: Vec<Vec<CameraPose>> =
            (0..n_groups).map(|_| self.sampler.group(rng, cfg.multiview_views)).collect();
        let singles: Vec<CameraPose> = (0..n_singles).map(|_| self.sampler.single(rng)).collect();
        let mv_t = (0..n_groups)
            .map(|_| sample_timestep(rng, &mv_cfg, &self.mv_schedule))
            .collect::<Result<Vec<_>>>()?;
        let sd_t = (0..n_singles)
            .map(|_| sample_timestep(rng, &sd_cfg, &self.sd_schedule))
            .collect::<Result<Vec<_>>>()?;
        let cameras: Vec<CameraPose> = groups.iter().flatten().chain(&singles).copied().collect();
        let noise: Vec<RgbImage> = cameras.iter().map(|c| gaussian_image(rng, c.width, c.height)).collect();

        let cloud = &self.state.cloud;
        let renders = cameras
            .iter()
            .map(|c| render(cloud, c, bg))
            .collect::<Result<Vec<_>>>()?;
        let rgbs: Vec<RgbImage> = renders.iter().map(|r| r.rgb.clone()).collect();

        let mut upstream: Vec<RgbImage> = cameras.iter().map(|c| RgbImage::zeros(c.width, c.height)).collect();
        let n_mv_views: usize = groups.iter().map(Vec::len).sum();
        let mut mv_sds = 0.0;
        let mut offset = 0;
        for (group, t) in groups.iter().zip(&mv_t) {
            let span = offset..offset + group.len();
            let grads = multiview_sds_pixel_gradients(
                &rgbs[span.clone()],
                group,
                &mut *self.providers.multiview,
                &self.prompt,
                *t,
                &noise[span.clone()],
                &self.mv_schedule,
                mv_cfg.cfg_scale,
                mv_cfg.use_negative_prompt,
            )?;
            for (k, g) in span.clone().zip(&grads) {
                mv_sds += 0.5 * g.mean_squared() / n_mv_views as f64;
                upstream[k].add_scaled(g, cfg.weight_mv / n_mv_views as f64);
            }
            offset = span.end;
        }
        let mut sd_sds = 0.0;
        if n_singles > 0 {
            let provider = self
                .providers
                .single_view
                .as_mut()
                .ok_or_else(|| Error::Config("no single-view provider".into()))?;
            for (j, (cam, t)) in singles.iter().zip(&sd_t).enumerate() {
                let k = offset + j;
                let g = sds_pixel_gradient(
                    &rgbs[k],
                    &mut **provider,
                    &self.prompt,
                    cam,
                    *t,
                    &noise[k],
                    &self.sd_schedule,
                    sd_cfg.cfg_scale,
                    sd_cfg.use_negative_prompt,
                )?;
                sd_sds += 0.5 * g.mean_squared() / n_singles as f64;
                upstream[k].add_scaled(&g, cfg.weight_sd / n_singles as f64);
            }
        }

        let n_views = cameras.len() as f64;
        let mut sparsity = 0.0;
        let mut total = RenderGrads::zeros(cloud.len(), cloud.sh_count());
        for (k, cam) in cameras.iter().enumerate() {
            let (loss, grad) = sparsity_loss(&renders[k].alpha);
            sparsity += loss / n_views;
            let upstream_alpha: Vec<f64> = grad.iter().map(|g| g * cfg.weight_sparsity / n_views).collect();
            let grads = render_backward(cloud, cam, bg, &upstream[k], &upstream_alpha)?;
            total.accumulate(&grads);
            self.state.stats.record(&grads);
        }
        if !total.is_finite() {
            return Err(Error::Numerical("non-finite parameter gradient".into()));
        }

        let lrs = self.lrs();
        self.state.adam.step(&mut self.state.cloud, &total, &lrs);
        self.state.cloud.normalize_rotations()?;
        self.state.step += 1;
        self.state.elapsed += started.elapsed();
        Ok(StepRecord {
            step: self.state.step,
            stage: stage.number(),
            mv_timesteps: mv_t,
            sd_timesteps: sd_t,
            mv_sds_loss: mv_sds,
            sd_sds_loss: sd_sds,
            sparsity_loss: sparsity,
            loss: cfg.weight_mv * mv_sds + cfg.weight_sd * sd_sds + cfg.weight_sparsity * sparsity,
            gaussians: self.state.cloud.len(),
        })
    }

    /// Retries `train_step` until it succeeds or guidance has failed
    /// `max_guidance_failures` times in a row. Returns the record and the number
    /// of skipped attempts.
    pub fn step_with_retry(&mut self, stage: Stage) -> Result<(StepRecord, usize)> {
        let mut failures = 0;
        loop {
            match self.train_step(stage) {
                Ok(r) => return Ok((r, failures)),
                Err(Error::GuidanceUnavailable(msg)) => {
                    failures += 1;
                    if failures >= self.config.max_guidance_failures {
                        return Err(Error::GuidanceUnavailable(format!(
                            "{failures} consecutive failures, last: {msg}"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Densify/prune bookkeeping after step `local` (1-based) of a stage of `len` steps.
    fn maintain(&mut self, stage: Stage, local: usize, len: usize) -> Result<Option<TopologyEvent>> {
        let c = &self.config;
        let densify_now = local.is_multiple_of(c.densify_interval)
            && local <= len / 2
            && (stage == Stage::One || c.densify_in_stage2);
        let prune_now = local.is_multiple_of(c.prune_interval);
        if !densify_now && !prune_now {
            return Ok(None);
        }
        let s = &mut self.state;
        let outcome = if densify_now {
            densify(&mut s.cloud, &mut s.adam, &mut s.stats, &self.config, &mut s.rng)?
        } else {
            DensifyOutcome::default()
        };
        let pruned = if prune_now {
            prune(&mut s.cloud, &mut s.adam, &mut s.stats, &self.config)?
        } else {
            0
        };
        debug_assert!(s.is_aligned());
        Ok(Some(TopologyEvent {
            step: s.step,
            stage: stage.number(),
            split: outcome.split,
            cloned: outcome.cloned,
            pruned,
            gaussians: s.cloud.len(),
        }))
    }

    /// Runs both stages and returns the final cloud with its report.
    pub fn run(self) -> Result<(GaussianCloud, RunReport)> {
        self.run_with(|_, _| {})
    }

    /// [`Trainer::run`] with a callback after every completed step.
    pub fn run_with(mut self, mut on_step: impl FnMut(&StepRecord, &TrainState)) -> Result<(GaussianCloud, RunReport)> {
        let started = Instant::now();
        let mut report = RunReport::new(&self.prompt.text, &self.config);
        let mut stage_end = started;
        for stage in [Stage::One, Stage::Two] {
            let len = match stage {
                Stage::One => self.config.stage1_steps,
                Stage::Two => self.config.stage2_steps,
            };
            self.state.stats.reset(self.state.cloud.len());
            for local in 1..=len {
                let (record, skipped) = self.step_with_retry(stage)?;
                report.skipped_steps += skipped;
                if let Some(event) = self.maintain(stage, local, len)? {
                    report.topology.push(event);
                }
                report.gaussian_counts.push(self.state.cloud.len());
                on_step(&record, &self.state);
                report.steps.push(record);
            }
            let now = Instant::now();
            report.stage_seconds[stage.number() as usize - 1] = (now - stage_end).as_secs_f64();
            stage_end = now;
        }
        report.total_seconds = (stage_end - started).as_secs_f64();
        report.final_gaussians = self.state.cloud.len();
        Ok((self.state.cloud, report))
    }
}

/// Convenience wrapper: build a [`Trainer`] and run it.
pub fn run_pipeline(
    prompt: Prompt,
    providers: Providers<'_>,
    config: TrainConfig,
    sampler: CameraSampler,
) -> Result<(GaussianCloud, RunReport)> {
    Trainer::new(prompt, providers, config, sampler)?.run()
}

fn gaussian_image(rng: &mut impl Rng, width: usize, height: usize) -> RgbImage {
    let data = (0..width * height * 3).map(|_| StandardNormal.sample(rng)).collect();
    RgbImage::from_vec(width, height, data).expect("sized by construction")
}
