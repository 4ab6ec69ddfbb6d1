//! Score-distillation guidance: prompt augmentation, the diffusion noise schedule,
//! classifier-free guidance and the pixel-space SDS gradient.
//!
//! The engine only ever sees pixel-space gradients. A [`ScoreProvider`] either
//! returns conditional/unconditional noise predictions for the noisy renders (the
//! engine then forms `w(t)·(ε̂ − ε)`), or returns finished pixel gradients (remote
//! bridges that noise and encode internally).

mod analytic;
mod prompt;
mod remote;
mod schedule;

pub use analytic::{AnalyticDenoiser, ReferenceViews, RenderedTarget, TargetSource};
pub use prompt::{augment_prompt, view_phrase, Prompt, ViewPhrase, DEFAULT_NEGATIVE_PROMPT};
pub use remote::RemoteProvider;
pub use schedule::NoiseSchedule;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::CameraPose;
use crate::image::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuidanceMode {
    /// Text-to-image model, one view per request, prompts augmented with a viewpoint phrase.
    SingleView,
    /// Multiview model, all views of a group in one request with exact camera poses.
    Multiview,
}

impl GuidanceMode {
    pub fn wire_name(self) -> &'static str {
        match self {
            GuidanceMode::SingleView => "sd",
            GuidanceMode::Multiview => "mv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub cfg_scale: f64,
    pub t_min_percent: f64,
    pub t_max_percent: f64,
    pub weight: f64,
    pub mode: GuidanceMode,
    /// Whether the negative prompt replaces the unconditional branch.
    pub use_negative_prompt: bool,
}

impl GuidanceConfig {
    pub fn multiview_default() -> Self {
        Self {
            cfg_scale: 50.0,
            t_min_percent: 0.02,
            t_max_percent: 0.98,
            weight: 1.0,
            mode: GuidanceMode::Multiview,
            use_negative_prompt: false,
        }
    }

    pub fn single_view_default() -> Self {
        Self {
            cfg_scale: 50.0,
            t_min_percent: 0.2,
            t_max_percent: 0.5,
            weight: 0.5,
            mode: GuidanceMode::SingleView,
            use_negative_prompt: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cfg_scale > 0.0 && self.cfg_scale.is_finite()) {
            return Err(Error::Config(format!("cfg_scale {} must be positive", self.cfg_scale)));
        }
        let in_unit = |p: f64| p > 0.0 && p < 1.0;
        if !in_unit(self.t_min_percent) || !in_unit(self.t_max_percent) {
            return Err(Error::Config("timestep percents must lie in (0, 1)".into()));
        }
        if self.t_min_percent > self.t_max_percent {
            return Err(Error::Config(format!(
                "t_min_percent {} exceeds t_max_percent {}",
                self.t_min_percent, self.t_max_percent
            )));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::Config(format!("guidance weight {} must be >= 0", self.weight)));
        }
        Ok(())
    }
}

/// One guidance query. `clean` are the renders, `noisy` the same renders after
/// [`add_noise`] at `timestep`.
#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub mode: GuidanceMode,
    pub prompt: &'a str,
    pub negative_prompt: Option<&'a str>,
    pub timestep: usize,
    pub alpha_bar: f64,
    pub cfg_scale: f64,
    pub cameras: &'a [CameraPose],
    pub clean: &'a [RgbImage],
    pub noisy: &'a [RgbImage],
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreOutput {
    /// Per-view conditional and unconditional (or negative-prompt) noise predictions.
    Noise { cond: Vec<RgbImage>, uncond: Vec<RgbImage> },
    /// Per-view pixel-space gradients, already weighted.
    PixelGrads(Vec<RgbImage>),
}

/// Source of the score `∇ₓ log p(x | y)` through a noise-prediction model.
///
/// Implementations must return one output per input view with matching shapes.
pub trait ScoreProvider {
    /// Noise schedule of the underlying model, if it differs from the engine default.
    fn schedule(&mut self) -> Result<Option<NoiseSchedule>> {
        Ok(None)
    }

    fn score(&mut self, request: &ScoreRequest<'_>) -> Result<ScoreOutput>;
}

impl<P: ScoreProvider + ?Sized> ScoreProvider for Box<P> {
    fn schedule(&mut self) -> Result<Option<NoiseSchedule>> {
        (**self).schedule()
    }

    fn score(&mut self, request: &ScoreRequest<'_>) -> Result<ScoreOutput> {
        (**self).score(request)
    }
}

/// `x_t = √ᾱ_t · x + √(1 − ᾱ_t) · ε`
pub fn add_noise(x: &RgbImage, t: usize, eps: &RgbImage, schedule: &NoiseSchedule) -> Result<RgbImage> {
    if !x.same_shape(eps) {
        return Err(Error::Shape("image and noise shapes differ".into()));
    }
    let ab = schedule.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x.zip_map(eps, |xv, ev| a * xv + b * ev))
}

/// `ε_uncond + scale · (ε_cond − ε_uncond)`
pub fn cfg_combine(eps_cond: &RgbImage, eps_uncond: &RgbImage, scale: f64) -> Result<RgbImage> {
    if !eps_cond.same_shape(eps_uncond) {
        return Err(Error::Shape("conditional and unconditional predictions differ in shape".into()));
    }
    if scale == 1.0 {
        // u + (c − u) can be off by an ulp
        return Ok(eps_cond.clone());
    }
    Ok(eps_uncond.zip_map(eps_cond, |u, c| u + scale * (c - u)))
}

/// SDS weighting `w(t) = 1 − ᾱ_t`.
pub fn sds_weight(alpha_bar: f64) -> f64 {
    1.0 - alpha_bar
}

/// Uniform integer timestep in `[⌈t_min·T⌉, ⌊t_max·T⌋]`, clamped to `[1, T]`.
pub fn sample_timestep(rng: &mut impl Rng, config: &GuidanceConfig, schedule: &NoiseSchedule) -> Result<usize> {
    let (lo, hi) = timestep_range(config, schedule)?;
    Ok(rng.random_range(lo..=hi))
}

pub fn timestep_range(config: &GuidanceConfig, schedule: &NoiseSchedule) -> Result<(usize, usize)> {
    let steps = schedule.steps() as f64;
    // tolerate representation error such as 0.58 * 100 = 57.99999999999999
    let lo = ((config.t_min_percent * steps) - 1e-9).ceil().max(1.0) as usize;
    let hi = ((config.t_max_percent * steps) + 1e-9).floor().min(steps) as usize;
    if lo > hi {
        return Err(Error::Config(format!(
            "timestep window [{}, {}] of {} steps is empty",
            config.t_min_percent, config.t_max_percent, steps
        )));
    }
    Ok((lo, hi))
}

fn check_views(images: &[RgbImage], cameras: &[CameraPose], noise: &[RgbImage]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Shape("at least one view is required".into()));
    }
    if images.len() != cameras.len() || images.len() != noise.len() {
        return Err(Error::Shape(format!(
            "{} images, {} cameras and {} noise maps",
            images.len(),
            cameras.len(),
            noise.len()
        )));
    }
    for (img, cam) in images.iter().zip(cameras) {
        if img.width() != cam.width || img.height() != cam.height {
            return Err(Error::Shape("image does not match its camera resolution".into()));
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn distill(
    mode: GuidanceMode,
    prompt_text: &str,
    negative: Option<&str>,
    images: &[RgbImage],
    cameras: &[CameraPose],
    provider: &mut dyn ScoreProvider,
    t: usize,
    noise: &[RgbImage],
    schedule: &NoiseSchedule,
    cfg_scale: f64,
) -> Result<Vec<RgbImage>> {
    check_views(images, cameras, noise)?;
    let alpha_bar = schedule.alpha_bar(t)?;
    let noisy = images
        .iter()
        .zip(noise)
        .map(|(x, e)| add_noise(x, t, e, schedule))
        .collect::<Result<Vec<_>>>()?;
    let request = ScoreRequest {
        mode,
        prompt: prompt_text,
        negative_prompt: negative,
        timestep: t,
        alpha_bar,
        cfg_scale,
        cameras,
        clean: images,
        noisy: &noisy,
    };
    let output = provider.score(&request).map_err(|e| match e {
        Error::GuidanceUnavailable(_) => e,
        other => Error::GuidanceUnavailable(other.to_string()),
    })?;
    let grads = match output {
        ScoreOutput::Noise { cond, uncond } => {
            if cond.len() != images.len() || uncond.len() != images.len() {
                return Err(Error::GuidanceUnavailable(format!(
                    "provider returned {}/{} predictions for {} views",
                    cond.len(),
                    uncond.len(),
                    images.len()
                )));
            }
            let w = sds_weight(alpha_bar);
            cond.iter()
                .zip(&uncond)
                .zip(noise)
                .map(|((c, u), e)| {
                    if !c.same_shape(e) || !u.same_shape(e) {
                        return Err(Error::GuidanceUnavailable("prediction shape mismatch".into()));
                    }
                    let guided = cfg_combine(c, u, cfg_scale)?;
                    Ok(guided.zip_map(e, |g, ev| w * (g - ev)))
                })
                .collect::<Result<Vec<_>>>()?
        }
        ScoreOutput::PixelGrads(g) => {
            if g.len() != images.len() || g.iter().zip(images).any(|(a, b)| !a.same_shape(b)) {
                return Err(Error::GuidanceUnavailable("provider gradients do not match the views".into()));
            }
            g
        }
    };
    if grads.iter().any(|g| g.as_slice().iter().any(|v| !v.is_finite())) {
        return Err(Error::GuidanceUnavailable("provider returned non-finite values".into()));
    }
    Ok(grads)
}

/// Single-view SDS gradient `w(t)·(ε̂ − ε)` for a render, using the
/// viewpoint-augmented prompt.
#[allow(clippy::too_many_arguments)]
pub fn sds_pixel_gradient(
    x: &RgbImage,
    provider: &mut dyn ScoreProvider,
    prompt: &Prompt,
    camera: &CameraPose,
    t: usize,
    eps: &RgbImage,
    schedule: &NoiseSchedule,
    cfg_scale: f64,
    use_negative_prompt: bool,
) -> Result<RgbImage> {
    let text = augment_prompt(prompt, camera);
    let negative = use_negative_prompt.then_some(prompt.negative_text.as_str());
    let mut grads = distill(
        GuidanceMode::SingleView,
        &text,
        negative,
        std::slice::from_ref(x),
        std::slice::from_ref(camera),
        provider,
        t,
        std::slice::from_ref(eps),
        schedule,
        cfg_scale,
    )?;
    Ok(grads.remove(0))
}

/// Multiview SDS: every view of the group goes to the provider in one request with
/// its exact camera pose and the raw prompt.
#[allow(clippy::too_many_arguments)]
pub fn multiview_sds_pixel_gradients(
    images: &[RgbImage],
    cameras: &[CameraPose],
    provider: &mut dyn ScoreProvider,
    prompt: &Prompt,
    t: usize,
    noise: &[RgbImage],
    schedule: &NoiseSchedule,
    cfg_scale: f64,
    use_negative_prompt: bool,
) -> Result<Vec<RgbImage>> {
    let negative = use_negative_prompt.then_some(prompt.negative_text.as_str());
    distill(
        GuidanceMode::Multiview,
        &prompt.text,
        negative,
        images,
        cameras,
        provider,
        t,
        noise,
        schedule,
        cfg_scale,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(rng: &mut impl Rng, w: usize, h: usize) -> RgbImage {
        let data = (0..w * h * 3).map(|_| StandardNormal.sample(rng)).collect();
        RgbImage::from_vec(w, h, data).unwrap()
    }

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> RgbImage {
        let data = (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        RgbImage::from_vec(w, h, data).unwrap()
    }

    fn cam() -> CameraPose {
        CameraPose::new(0.0, 10.0, 3.0, 40.0, 8, 6)
    }

    #[test]
    fn add_noise_limits_and_inversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tiny = NoiseSchedule::linear(10, 1e-12, 1e-10).unwrap();
        let x = random_image(&mut rng, 4, 4);
        let e = noise(&mut rng, 4, 4);
        let xt = add_noise(&x, 1, &e, &tiny).unwrap();
        assert!(xt.zip_map(&x, |a, b| (a - b).abs()).as_slice().iter().all(|d| *d < 1e-5));

        let s = NoiseSchedule::default();
        let zero = RgbImage::zeros(4, 4);
        let xt = add_noise(&zero, 500, &e, &s).unwrap();
        let b = (1.0 - s.alpha_bar(500).unwrap()).sqrt();
        assert_eq!(xt, e.map(|v| b * v));

        for t in [1, 20, 500, 999, 1000] {
            let ab = s.alpha_bar(t).unwrap();
            let xt = add_noise(&x, t, &e, &s).unwrap();
            let back = xt.zip_map(&e, |a, ev| (a - (1.0 - ab).sqrt() * ev) / ab.sqrt());
            assert!(back.zip_map(&x, |a, b| (a - b).abs()).as_slice().iter().all(|d| *d < 1e-12));
        }
        assert!(matches!(add_noise(&x, 0, &e, &s), Err(Error::Range(_))));
        assert!(matches!(add_noise(&x, 1001, &e, &s), Err(Error::Range(_))));
    }

    #[test]
    fn cfg_combine_special_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = noise(&mut rng, 3, 3);
        let u = noise(&mut rng, 3, 3);
        assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), u);
        for s in [0.5, 7.5, 50.0] {
            assert_eq!(cfg_combine(&c, &c, s).unwrap(), c);
        }
        // affine in the scale
        let a = cfg_combine(&c, &u, 2.0).unwrap();
        let b = cfg_combine(&c, &u, 4.0).unwrap();
        let mid = cfg_combine(&c, &u, 3.0).unwrap();
        let avg = a.zip_map(&b, |x, y| 0.5 * (x + y));
        assert!(avg.zip_map(&mid, |x, y| (x - y).abs()).as_slice().iter().all(|d| *d < 1e-12));
    }

    #[test]
    fn timestep_windows() {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cfg = GuidanceConfig::multiview_default();
        assert_eq!(timestep_range(&cfg, &s).unwrap(), (20, 980));
        cfg.t_min_percent = 0.2;
        cfg.t_max_percent = 0.5;
        assert_eq!(timestep_range(&cfg, &s).unwrap(), (200, 500));
        for _ in 0..1000 {
            let t = sample_timestep(&mut rng, &cfg, &s).unwrap();
            assert!((200..=500).contains(&t));
        }
        cfg.t_min_percent = 0.5;
        assert!((0..20).all(|_| sample_timestep(&mut rng, &cfg, &s).unwrap() == 500));
        let small = NoiseSchedule::linear(10, 1e-4, 2e-2).unwrap();
        cfg.t_min_percent = 0.51;
        cfg.t_max_percent = 0.59;
        assert!(matches!(sample_timestep(&mut rng, &cfg, &small), Err(Error::Config(_))));
    }

    #[test]
    fn analytic_denoiser_collapses_to_scaled_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = NoiseSchedule::default();
        let prompt = Prompt::new("a corgi").unwrap();
        let target = random_image(&mut rng, 8, 6);
        let mut provider = AnalyticDenoiser::new(target.clone());
        for _ in 0..50 {
            let t = rng.random_range(1..=1000);
            let x = random_image(&mut rng, 8, 6);
            let e = noise(&mut rng, 8, 6);
            let g = sds_pixel_gradient(&x, &mut provider, &prompt, &cam(), t, &e, &s, 50.0, true).unwrap();
            let ab = s.alpha_bar(t).unwrap();
            let c = (1.0 - ab) * ab.sqrt() / (1.0 - ab).sqrt();
            let expect = x.zip_map(&target, |a, b| c * (a - b));
            assert!(g.zip_map(&expect, |a, b| (a - b).abs()).as_slice().iter().all(|d| *d < 1e-6));

            let fixed = sds_pixel_gradient(&target, &mut provider, &prompt, &cam(), t, &e, &s, 50.0, true).unwrap();
            assert!(fixed.as_slice().iter().all(|v| v.abs() < 1e-9));
        }
    }

    struct EchoNoise;

    impl ScoreProvider for EchoNoise {
        fn score(&mut self, req: &ScoreRequest<'_>) -> Result<ScoreOutput> {
            // recovers ε exactly from x_t and the clean render
            let b = (1.0 - req.alpha_bar).sqrt();
            let a = req.alpha_bar.sqrt();
            let eps: Vec<RgbImage> =
                req.noisy.iter().zip(req.clean).map(|(xt, x)| xt.zip_map(x, |n, c| (n - a * c) / b)).collect();
            Ok(ScoreOutput::Noise {
                cond: eps.clone(),
                uncond: eps,
            })
        }
    }

    #[test]
    fn perfect_noise_prediction_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = NoiseSchedule::default();
        let prompt = Prompt::new("a corgi").unwrap();
        let x = random_image(&mut rng, 8, 6);
        let e = noise(&mut rng, 8, 6);
        let g = sds_pixel_gradient(&x, &mut EchoNoise, &prompt, &cam(), 300, &e, &s, 50.0, false).unwrap();
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-9));
    }

    /// ε̂ = a·x_t + b, linear in the noisy input.
    struct LinearProvider {
        gain: f64,
        bias: f64,
    }

    impl ScoreProvider for LinearProvider {
        fn score(&mut self, req: &ScoreRequest<'_>) -> Result<ScoreOutput> {
            let pred: Vec<RgbImage> = req.noisy.iter().map(|xt| xt.map(|v| self.gain * v + self.bias)).collect();
            Ok(ScoreOutput::Noise {
                cond: pred.clone(),
                uncond: pred,
            })
        }
    }

    #[test]
    fn expected_gradient_concentrates_for_linear_provider() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = NoiseSchedule::default();
        let prompt = Prompt::new("a corgi").unwrap();
        let x = RgbImage::filled(1, 1, Vector3::new(0.2, 0.5, 0.9));
        let camera = CameraPose::new(0.0, 0.0, 3.0, 40.0, 1, 1);
        let (gain, bias) = (0.7, 0.1);
        let mut provider = LinearProvider { gain, bias };
        let t = 400;
        let ab = s.alpha_bar(t).unwrap();
        let w = 1.0 - ab;
        let n = 10_000;
        let mut sum = [0.0; 3];
        for _ in 0..n {
            let e = noise(&mut rng, 1, 1);
            let g = sds_pixel_gradient(&x, &mut provider, &prompt, &camera, t, &e, &s, 50.0, false).unwrap();
            for k in 0..3 {
                sum[k] += g.as_slice()[k];
            }
        }
        // E[w(ε̂ − ε)] = w(gain·√ᾱ·x + bias); per-sample std is w·|gain·√(1−ᾱ) − 1|.
        let sigma = w * (gain * (1.0 - ab).sqrt() - 1.0).abs() / (n as f64).sqrt();
        for k in 0..3 {
            let expect = w * (gain * ab.sqrt() * x.as_slice()[k] + bias);
            let mean = sum[k] / n as f64;
            assert!((mean - expect).abs() < 5.0 * sigma, "channel {k}: {mean} vs {expect} (σ={sigma})");
        }
    }

    #[test]
    fn multiview_degenerates_to_single_view() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = NoiseSchedule::default();
        let prompt = Prompt::new("a corgi").unwrap();
        let target = random_image(&mut rng, 8, 6);
        let mut provider = AnalyticDenoiser::new(target);
        let x = random_image(&mut rng, 8, 6);
        let e = noise(&mut rng, 8, 6);
        let single = sds_pixel_gradient(&x, &mut provider, &prompt, &cam(), 321, &e, &s, 50.0, false).unwrap();
        let multi = multiview_sds_pixel_gradients(
            std::slice::from_ref(&x),
            &[cam()],
            &mut provider,
            &prompt,
            321,
            std::slice::from_ref(&e),
            &s,
            50.0,
            false,
        )
        .unwrap();
        assert_eq!(multi, vec![single]);
    }

    #[test]
    fn multiview_per_view_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = NoiseSchedule::default();
        let prompt = Prompt::new("a corgi").unwrap();
        let cams: Vec<CameraPose> =
            (0..4).map(|k| CameraPose::new(30.0 + 90.0 * k as f64, 15.0, 3.0, 40.0, 8, 6)).collect();
        let targets: Vec<RgbImage> = (0..4).map(|_| random_image(&mut rng, 8, 6)).collect();
        let mut provider =
            AnalyticDenoiser::new(ReferenceViews::new(cams.iter().copied().zip(targets.iter().cloned()).collect()));
        let xs: Vec<RgbImage> = (0..4).map(|_| random_image(&mut rng, 8, 6)).collect();
        let es: Vec<RgbImage> = (0..4).map(|_| noise(&mut rng, 8, 6)).collect();
        let t = 640;
        let grads = multiview_sds_pixel_gradients(&xs, &cams, &mut provider, &prompt, t, &es, &s, 50.0, false).unwrap();
        let ab = s.alpha_bar(t).unwrap();
        let c = (1.0 - ab) * ab.sqrt() / (1.0 - ab).sqrt();
        for i in 0..4 {
            let expect = xs[i].zip_map(&targets[i], |a, b| c * (a - b));
            assert!(grads[i].zip_map(&expect, |a, b| (a - b).abs()).as_slice().iter().all(|d| *d < 1e-6));
        }
        let fixed = multiview_sds_pixel_gradients(&targets, &cams, &mut provider, &prompt, t, &es, &s, 50.0, false)
            .unwrap();
        assert!(fixed.iter().all(|g| g.as_slice().iter().all(|v| v.abs() < 1e-9)));
    }

    struct Broken;

    impl ScoreProvider for Broken {
        fn score(&mut self, _: &ScoreRequest<'_>) -> Result<ScoreOutput> {
            Err(Error::Io {
                path: "bridge".into(),
                source: std::io::Error::other("connection refused"),
            })
        }
    }

    #[test]
    fn provider_failures_surface_as_guidance_unavailable() {
        let s = NoiseSchedule::default();
        let prompt = Prompt::new("a corgi").unwrap();
        let x = RgbImage::zeros(8, 6);
        let err = sds_pixel_gradient(&x, &mut Broken, &prompt, &cam(), 10, &x, &s, 50.0, false).unwrap_err();
        assert!(matches!(err, Error::GuidanceUnavailable(_)));
    }

    #[test]
    fn config_validation() {
        assert!(GuidanceConfig::multiview_default().validate().is_ok());
        assert!(GuidanceConfig::single_view_default().validate().is_ok());
        let mut c = GuidanceConfig::multiview_default();
        c.t_min_percent = 0.99;
        assert!(c.validate().is_err());
        let mut c = GuidanceConfig::multiview_default();
        c.cfg_scale = 0.0;
        assert!(c.validate().is_err());
    }
}
