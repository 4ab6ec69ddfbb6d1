#![allow(dead_code)]

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use splatdream::gaussians::{eval_sh, logit, project_gaussian, sh_basis, sh_coeff_count, CameraPose, Gaussian, GaussianCloud};
use splatdream::guidance::{AnalyticDenoiser, Prompt, ReferenceViews};
use splatdream::image::RgbImage;
use splatdream::rasterizer::{render, ALPHA_MAX, MIN_TRANSMITTANCE, SUPPORT_SIGMAS};
use splatdream::trainer::{CameraSampler, TrainConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-pixel loop over every Gaussian, no tiles and no bounding boxes.
pub fn brute_force_render(cloud: &GaussianCloud, camera: &CameraPose, bg: Vector3<f64>) -> (RgbImage, Vec<f64>) {
    struct Entry {
        index: usize,
        depth: f64,
        mean: (f64, f64),
        conic: [f64; 3],
        opacity: f64,
        color: Vector3<f64>,
    }
    let mut entries = Vec::new();
    for i in 0..cloud.len() {
        let cov = cloud.covariance(i).unwrap();
        let Some(p) = project_gaussian(&cloud.positions[i], &cov, camera) else {
            continue;
        };
        let (a, b, c) = (p.cov2d[(0, 0)], p.cov2d[(0, 1)], p.cov2d[(1, 1)]);
        let det = a * c - b * b;
        if det == 0.0 {
            continue;
        }
        let dir = (cloud.positions[i] - camera.center()).normalize();
        entries.push(Entry {
            index: i,
            depth: p.depth,
            mean: (p.mean2d.x, p.mean2d.y),
            conic: [c / det, -b / det, a / det],
            opacity: cloud.opacity(i),
            color: eval_sh(cloud.sh(i), &dir).unwrap().map(|v| v.clamp(0.0, 1.0)),
        });
    }
    entries.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let mut rgb = RgbImage::zeros(camera.width, camera.height);
    let mut alpha = vec![0.0; camera.width * camera.height];
    for y in 0..camera.height {
        for x in 0..camera.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut color = Vector3::zeros();
            let mut t = 1.0;
            for e in &entries {
                let (dx, dy) = (px - e.mean.0, py - e.mean.1);
                let m = e.conic[0] * dx * dx + 2.0 * e.conic[1] * dx * dy + e.conic[2] * dy * dy;
                if m > SUPPORT_SIGMAS * SUPPORT_SIGMAS {
                    continue;
                }
                let a = (e.opacity * (-0.5 * m).exp()).min(ALPHA_MAX);
                if t * (1.0 - a) < MIN_TRANSMITTANCE {
                    break;
                }
                color += e.color * (a * t);
                t *= 1.0 - a;
            }
            rgb.set_pixel(x, y, color + bg * t);
            alpha[y * camera.width + x] = 1.0 - t;
        }
    }
    (rgb, alpha)
}

pub fn random_quaternion(rng: &mut impl Rng) -> Vector4<f64> {
    Vector4::from_fn(|_, _| StandardNormal.sample(rng))
}

/// Random scene of `n` Gaussians around the origin. Colors stay inside `[0, 1]`
/// for every view direction and opacities stay below the clip.
pub fn random_cloud(rng: &mut impl Rng, n: usize, sh_degree: usize) -> GaussianCloud {
    let y00 = sh_basis(0, &Vector3::z())[0];
    let count = sh_coeff_count(sh_degree);
    GaussianCloud::from_gaussians(
        sh_degree,
        (0..n).map(|_| {
            let base: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(0.25..0.75));
            let mut sh = vec![(base - Vector3::repeat(0.5)) / y00];
            sh.extend((1..count).map(|_| Vector3::from_fn(|_, _| rng.random_range(-0.04..0.04))));
            Gaussian {
                position: Vector3::from_fn(|_, _| rng.random_range(-0.4..0.4)),
                rotation: random_quaternion(rng),
                log_scale: Vector3::from_fn(|_, _| rng.random_range(0.02f64..0.15).ln()),
                opacity_logit: logit(rng.random_range(0.1..0.9)),
                sh,
            }
        }),
    )
    .unwrap()
}

pub fn random_camera(rng: &mut impl Rng, width: usize, height: usize) -> CameraPose {
    CameraPose::new(
        rng.random_range(0.0..360.0),
        rng.random_range(-30.0..60.0),
        rng.random_range(2.5..3.5),
        rng.random_range(30.0..50.0),
        width,
        height,
    )
}

pub fn random_image(rng: &mut impl Rng, width: usize, height: usize) -> RgbImage {
    RgbImage::from_vec(width, height, (0..width * height * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

pub fn noise_image(rng: &mut impl Rng, width: usize, height: usize) -> RgbImage {
    RgbImage::from_vec(width, height, (0..width * height * 3).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

/// Central difference of `f` at `x` along one coordinate.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `‖a − b‖ / ‖b‖`, or the absolute error when `b` vanishes.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

/// A small planted scene: 20 opaque-ish blobs inside a 0.6-wide cube.
pub fn planted_scene() -> GaussianCloud {
    let mut rng = rng(42);
    let y00 = sh_basis(0, &Vector3::z())[0];
    GaussianCloud::from_gaussians(
        0,
        (0..20).map(|_| {
            let position = Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3));
            let color: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(0.1..0.9));
            Gaussian {
                position,
                rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
                log_scale: Vector3::from_fn(|_, _| rng.random_range(0.06f64..0.14).ln()),
                opacity_logit: logit(rng.random_range(0.7..0.95)),
                sh: vec![(color - Vector3::repeat(0.5)) / y00],
            }
        }),
    )
    .unwrap()
}

/// Four orthogonal groups of four views each, 16 cameras in total.
pub fn reference_rig(resolution: usize) -> Vec<Vec<CameraPose>> {
    [(0.0, 0.0), (22.5, 20.0), (45.0, 40.0), (67.5, -10.0)]
        .iter()
        .map(|&(a0, el)| {
            (0..4)
                .map(|k| CameraPose::new(a0 + 90.0 * k as f64, el, 3.0, 40.0, resolution, resolution))
                .collect()
        })
        .collect()
}

pub fn held_out_camera(resolution: usize) -> CameraPose {
    CameraPose::new(30.0, 10.0, 3.0, 40.0, resolution, resolution)
}

/// Reconstruction setup: denoisers pulling towards renders of `scene` from the rig.
pub struct Reconstruction {
    pub scene: GaussianCloud,
    pub rig: Vec<Vec<CameraPose>>,
    pub multiview: AnalyticDenoiser<ReferenceViews>,
    pub single_view: AnalyticDenoiser<ReferenceViews>,
}

impl Reconstruction {
    pub fn new(resolution: usize) -> Self {
        let scene = planted_scene();
        let rig = reference_rig(resolution);
        let refs = ReferenceViews::render_from(&scene, &rig.concat(), Vector3::zeros()).unwrap();
        Self {
            scene,
            rig,
            multiview: AnalyticDenoiser::new(refs.clone()),
            single_view: AnalyticDenoiser::new(refs),
        }
    }

    pub fn sampler(&self) -> CameraSampler {
        CameraSampler::Fixed(self.rig.clone())
    }

    pub fn prompt() -> Prompt {
        Prompt::new("a cluster of colored blobs").unwrap()
    }
}

pub fn small_config(resolution: usize, stage1: usize, stage2: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        stage1_steps: stage1,
        stage2_steps: stage2,
        n_init_gaussians: 200,
        render_resolution: resolution,
        seed,
        ..TrainConfig::default()
    }
}

/// Mean alpha of `alpha` over pixels farther than `dilation` px from any pixel
/// where `silhouette` exceeds 0.01.
pub fn background_alpha(silhouette: &[f64], alpha: &[f64], width: usize, height: usize, dilation: i64) -> Option<f64> {
    let (w, h) = (width as i64, height as i64);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            let near = (-dilation..=dilation).any(|dy| {
                (-dilation..=dilation).any(|dx| {
                    let (xx, yy) = (x + dx, y + dy);
                    dx * dx + dy * dy <= dilation * dilation
                        && (0..w).contains(&xx)
                        && (0..h).contains(&yy)
                        && silhouette[(yy * w + xx) as usize] > 0.01
                })
            });
            if !near {
                sum += alpha[(y * w + x) as usize];
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Mean background alpha of `cloud` over `cameras`, relative to `scene`.
pub fn mean_background_alpha(scene: &GaussianCloud, cloud: &GaussianCloud, cameras: &[CameraPose]) -> f64 {
    let values: Vec<f64> = cameras
        .iter()
        .filter_map(|c| {
            let silhouette = render(scene, c, Vector3::zeros()).unwrap().alpha;
            let alpha = render(cloud, c, Vector3::zeros()).unwrap().alpha;
            background_alpha(&silhouette, &alpha, c.width, c.height, 5)
        })
        .collect();
    values.iter().sum::<f64>() / values.len() as f64
}

pub const PARAMETER_GROUPS: [&str; 5] = ["positions", "rotations", "log_scales", "opacity_logits", "sh_coeffs"];

fn group_len(cloud: &GaussianCloud, group: usize) -> usize {
    match group {
        0 | 2 => cloud.len() * 3,
        1 => cloud.len() * 4,
        3 => cloud.len(),
        _ => cloud.sh_coeffs.len() * 3,
    }
}

fn scalar_mut(cloud: &mut GaussianCloud, group: usize, i: usize) -> &mut f64 {
    match group {
        0 => &mut cloud.positions[i / 3][i % 3],
        1 => &mut cloud.rotations[i / 4][i % 4],
        2 => &mut cloud.log_scales[i / 3][i % 3],
        3 => &mut cloud.opacity_logits[i],
        _ => &mut cloud.sh_coeffs[i / 3][i % 3],
    }
}

fn flat_grads(g: &splatdream::rasterizer::RenderGrads, group: usize) -> Vec<f64> {
    match group {
        0 => g.positions.iter().flat_map(|v| v.iter().copied()).collect(),
        1 => g.rotations.iter().flat_map(|v| v.iter().copied()).collect(),
        2 => g.log_scales.iter().flat_map(|v| v.iter().copied()).collect(),
        3 => g.opacity_logits.clone(),
        _ => g.sh_coeffs.iter().flat_map(|v| v.iter().copied()).collect(),
    }
}

/// Relative error per parameter group between the analytic backward pass and
/// central differences of `L = Σ w_rgb·rgb + Σ w_alpha·alpha`.
pub fn gradient_errors(
    cloud: &GaussianCloud,
    camera: &CameraPose,
    bg: Vector3<f64>,
    w_rgb: &RgbImage,
    w_alpha: &[f64],
    h: f64,
) -> [f64; 5] {
    let loss = |c: &GaussianCloud| {
        let out = render(c, camera, bg).unwrap();
        let a: f64 = out.rgb.as_slice().iter().zip(w_rgb.as_slice()).map(|(x, w)| x * w).sum();
        let b: f64 = out.alpha.iter().zip(w_alpha).map(|(x, w)| x * w).sum();
        a + b
    };
    let analytic = splatdream::rasterizer::render_backward(cloud, camera, bg, w_rgb, w_alpha).unwrap();
    std::array::from_fn(|group| {
        let numeric: Vec<f64> = (0..group_len(cloud, group))
            .map(|i| {
                let x = *scalar_mut(&mut cloud.clone(), group, i);
                central_difference(
                    |v| {
                        let mut c = cloud.clone();
                        *scalar_mut(&mut c, group, i) = v;
                        loss(&c)
                    },
                    x,
                    h,
                )
            })
            .collect();
        relative_error(&flat_grads(&analytic, group), &numeric)
    })
}
