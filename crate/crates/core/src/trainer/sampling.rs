use nalgebra::{Vector3, Vector4};
use rand::Rng;
use rand_distr::{Distribution, UnitBall};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::gaussians::{logit, sh_basis, CameraPose, Gaussian, GaussianCloud};

/// Random initialization: positions uniform in a ball of `radius`, identity
/// rotations, isotropic σ = radius·(4/n)^⅓, opacity 0.1 and a random gray base
/// color in `[0.3, 0.7]`.
pub fn init_cloud(n: usize, rng: &mut impl Rng, radius: f64, sh_degree: usize) -> Result<GaussianCloud> {
    if n == 0 {
        return Err(Error::Config("cannot initialize an empty cloud".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Config(format!("init radius {radius} must be > 0")));
    }
    let mut cloud = GaussianCloud::new(sh_degree)?;
    let log_sigma = (radius * (4.0 / n as f64).cbrt()).ln();
    let y00 = sh_basis(0, &Vector3::z())[0];
    for _ in 0..n {
        let p: [f64; 3] = UnitBall.sample(rng);
        let gray: f64 = rng.random_range(0.3..=0.7);
        let mut sh = vec![Vector3::zeros(); cloud.sh_count()];
        sh[0] = Vector3::repeat((gray - 0.5) / y00);
        cloud.push(Gaussian {
            position: Vector3::from(p) * radius,
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            log_scale: Vector3::repeat(log_sigma),
            opacity_logit: logit(0.1),
            sh,
        })?;
    }
    Ok(cloud)
}

/// Axis-aligned boxes from which training cameras are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRanges {
    pub distance: (f64, f64),
    pub fov: (f64, f64),
    pub elevation: (f64, f64),
    pub azimuth: (f64, f64),
    pub resolution: usize,
}

impl CameraRanges {
    pub fn from_config(c: &TrainConfig) -> Self {
        Self {
            distance: (c.distance_min, c.distance_max),
            fov: (c.fov_min, c.fov_max),
            elevation: (c.elevation_min, c.elevation_max),
            azimuth: (c.azimuth_min, c.azimuth_max),
            resolution: c.render_resolution,
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// `k` independent poses, each uniform in the boxes.
pub fn sample_cameras(rng: &mut impl Rng, ranges: &CameraRanges, k: usize) -> Vec<CameraPose> {
    (0..k)
        .map(|_| {
            let azimuth = uniform(rng, ranges.azimuth);
            let elevation = uniform(rng, ranges.elevation);
            let distance = uniform(rng, ranges.distance);
            let fov = uniform(rng, ranges.fov);
            CameraPose::new(azimuth, elevation, distance, fov, ranges.resolution, ranges.resolution)
        })
        .collect()
}

/// One multiview group: shared elevation, distance and fov, azimuths evenly
/// spaced around the object starting from a random offset.
pub fn sample_multiview_group(rng: &mut impl Rng, ranges: &CameraRanges, views: usize) -> Vec<CameraPose> {
    let base = sample_cameras(rng, ranges, 1)[0];
    let gap = 360.0 / views as f64;
    (0..views)
        .map(|k| {
            let mut c = base;
            c.azimuth = (base.azimuth + gap * k as f64).rem_euclid(360.0);
            c
        })
        .collect()
}

/// Where training cameras come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CameraSampler {
    Random(CameraRanges),
    /// A fixed rig: each step draws whole groups, single views come from any group.
    Fixed(Vec<Vec<CameraPose>>),
}

impl CameraSampler {
    pub fn group(&self, rng: &mut impl Rng, views: usize) -> Vec<CameraPose> {
        match self {
            CameraSampler::Random(r) => sample_multiview_group(rng, r, views),
            CameraSampler::Fixed(groups) => groups[rng.random_range(0..groups.len())].clone(),
        }
    }

    pub fn single(&self, rng: &mut impl Rng) -> CameraPose {
        match self {
            CameraSampler::Random(r) => sample_cameras(rng, r, 1)[0],
            CameraSampler::Fixed(groups) => {
                let g = &groups[rng.random_range(0..groups.len())];
                g[rng.random_range(0..g.len())]
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let CameraSampler::Fixed(groups) = self {
            if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
                return Err(Error::Config("fixed camera rig needs non-empty groups".into()));
            }
            for c in groups.iter().flatten() {
                c.validate()?;
            }
        }
        Ok(())
    }
}
