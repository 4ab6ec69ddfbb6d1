use nalgebra::Vector3;

use super::{ScoreOutput, ScoreProvider, ScoreRequest};
use crate::error::{Error, Result};
use crate::gaussians::{CameraPose, GaussianCloud};
use crate::image::RgbImage;
use crate::rasterizer::render;

/// Supplies the clean image `x*` the analytic denoiser pulls each view towards.
pub trait TargetSource {
    fn target(&self, camera: &CameraPose) -> Result<RgbImage>;
}

/// The same target for every camera.
impl TargetSource for RgbImage {
    fn target(&self, camera: &CameraPose) -> Result<RgbImage> {
        if self.width() != camera.width || self.height() != camera.height {
            return Err(Error::Shape("fixed target does not match the camera resolution".into()));
        }
        Ok(self.clone())
    }
}

/// Fixed set of posed reference images; only those exact cameras can be queried.
#[derive(Debug, Clone)]
pub struct ReferenceViews {
    views: Vec<(CameraPose, RgbImage)>,
}

impl ReferenceViews {
    pub fn new(views: Vec<(CameraPose, RgbImage)>) -> Self {
        Self { views }
    }

    /// Renders `cloud` from every camera.
    pub fn render_from(cloud: &GaussianCloud, cameras: &[CameraPose], background: Vector3<f64>) -> Result<Self> {
        let views = cameras
            .iter()
            .map(|c| Ok((*c, render(cloud, c, background)?.rgb)))
            .collect::<Result<_>>()?;
        Ok(Self { views })
    }

    pub fn cameras(&self) -> impl Iterator<Item = &CameraPose> {
        self.views.iter().map(|(c, _)| c)
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

impl TargetSource for ReferenceViews {
    fn target(&self, camera: &CameraPose) -> Result<RgbImage> {
        self.views
            .iter()
            .find(|(c, _)| c == camera)
            .map(|(_, img)| img.clone())
            .ok_or_else(|| Error::GuidanceUnavailable(format!("no reference view for camera {camera:?}")))
    }
}

/// Renders a known scene from whatever camera is asked for.
#[derive(Debug, Clone)]
pub struct RenderedTarget {
    pub cloud: GaussianCloud,
    pub background: Vector3<f64>,
}

impl TargetSource for RenderedTarget {
    fn target(&self, camera: &CameraPose) -> Result<RgbImage> {
        Ok(render(&self.cloud, camera, self.background)?.rgb)
    }
}

/// Exact denoiser for a point-mass data distribution at the target image:
/// `ε̂ = (x_t − √ᾱ_t·x*) / √(1 − ᾱ_t)`.
///
/// Conditional and unconditional predictions coincide, so guidance scale has no
/// effect and the SDS gradient reduces to `(1 − ᾱ_t)·√ᾱ_t/√(1 − ᾱ_t)·(x − x*)`.
#[derive(Debug, Clone)]
pub struct AnalyticDenoiser<S> {
    targets: S,
}

impl<S: TargetSource> AnalyticDenoiser<S> {
    pub fn new(targets: S) -> Self {
        Self { targets }
    }

    pub fn targets(&self) -> &S {
        &self.targets
    }
}

impl<S: TargetSource> ScoreProvider for AnalyticDenoiser<S> {
    fn score(&mut self, req: &ScoreRequest<'_>) -> Result<ScoreOutput> {
        let a = req.alpha_bar.sqrt();
        let b = (1.0 - req.alpha_bar).sqrt();
        let pred = req
            .noisy
            .iter()
            .zip(req.cameras)
            .map(|(xt, cam)| {
                let target = self.targets.target(cam)?;
                if !target.same_shape(xt) {
                    return Err(Error::Shape("target does not match the render".into()));
                }
                Ok(xt.zip_map(&target, |n, x| (n - a * x) / b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreOutput::Noise {
            cond: pred.clone(),
            uncond: pred,
        })
    }
}
