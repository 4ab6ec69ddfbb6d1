//! Synthetic inputs shared by the benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatdream::gaussians::{logit, sh_coeff_count, CameraPose, Gaussian, GaussianCloud};
use splatdream::metrics::FeatureSet;
use splatdream::nalgebra::{Vector3, Vector4};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` Gaussians scattered in a ball of radius 0.5 with small random scales.
pub fn cloud(n: usize, sh_degree: usize, seed: u64) -> GaussianCloud {
    let mut rng = rng(seed);
    let k = sh_coeff_count(sh_degree);
    GaussianCloud::from_gaussians(
        sh_degree,
        (0..n).map(|_| Gaussian {
            position: Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)),
            rotation: Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize(),
            log_scale: Vector3::from_fn(|_, _| rng.random_range(0.005f64..0.04).ln()),
            opacity_logit: logit(rng.random_range(0.1..0.9)),
            sh: (0..k).map(|_| Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3))).collect(),
        }),
    )
    .unwrap()
}

pub fn camera(resolution: usize) -> CameraPose {
    CameraPose::new(30.0, 15.0, 2.0, 40.0, resolution, resolution)
}

pub fn features(rows: usize, dim: usize, seed: u64) -> FeatureSet {
    let mut rng = rng(seed);
    let data: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureSet::from_row_major(rows, dim, &data).unwrap()
}

pub fn class_probs(rows: usize, classes: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng(seed);
    (0..rows)
        .map(|_| {
            let r: Vec<f64> = (0..classes).map(|_| rng.random_range(0.0..1.0f64).powi(4)).collect();
            let s: f64 = r.iter().sum();
            r.into_iter().map(|v| v / s).collect()
        })
        .collect()
}
