use nalgebra::{Matrix2, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use super::{prepare_frame, splat_kernel, tile_pixels, ALPHA_MAX, MIN_TRANSMITTANCE};
use crate::error::{Error, Result};
use crate::gaussians::{
    build_covariance, build_covariance_backward, eval_sh_backward, normalize_quaternion, project_gaussian_backward,
    CameraPose, GaussianCloud,
};
use crate::image::RgbImage;

/// Gradients for every [`GaussianCloud`] parameter, row-aligned with the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGrads {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Vector4<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    pub sh_coeffs: Vec<Vector3<f64>>,
    /// Norm of `∂L/∂mean2d` in normalized device coordinates; densification statistic.
    pub mean2d_grad_norm: Vec<f64>,
    /// Whether the Gaussian touched any pixel in this render.
    pub visible: Vec<bool>,
}

impl RenderGrads {
    pub fn zeros(n: usize, sh_count: usize) -> Self {
        Self {
            positions: vec![Vector3::zeros(); n],
            rotations: vec![Vector4::zeros(); n],
            log_scales: vec![Vector3::zeros(); n],
            opacity_logits: vec![0.0; n],
            sh_coeffs: vec![Vector3::zeros(); n * sh_count],
            mean2d_grad_norm: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Adds the parameter gradients of `other`; the 2D statistics are left alone.
    pub fn accumulate(&mut self, other: &RenderGrads) {
        assert_eq!(self.len(), other.len(), "gradient row counts differ");
        fn add<T: std::ops::AddAssign + Copy>(a: &mut [T], b: &[T]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        add(&mut self.positions, &other.positions);
        add(&mut self.rotations, &other.rotations);
        add(&mut self.log_scales, &other.log_scales);
        add(&mut self.opacity_logits, &other.opacity_logits);
        add(&mut self.sh_coeffs, &other.sh_coeffs);
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotations.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.log_scales.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacity_logits.iter().all(|x| x.is_finite())
            && self.sh_coeffs.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Screen-space gradients of one splat, accumulated over pixels.
#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    mean2d: Vector2<f64>,
    /// Full-matrix gradient with respect to the inverse 2D covariance.
    conic: Matrix2<f64>,
    opacity: f64,
    color: Vector3<f64>,
    touched: bool,
}

struct Contribution {
    slot: usize,
    alpha: f64,
    kernel: f64,
    clipped: bool,
    trans: f64,
    d: Vector2<f64>,
}

/// Reverse-mode pass of [`super::render`] for a loss with the given per-pixel
/// upstream gradients. The forward compositing is replayed per pixel, including
/// the transmittance cutoff, so the gradients are those of the function the
/// forward pass computes.
pub fn render_backward(
    cloud: &GaussianCloud,
    camera: &CameraPose,
    background: Vector3<f64>,
    upstream_rgb: &RgbImage,
    upstream_alpha: &[f64],
) -> Result<RenderGrads> {
    if upstream_rgb.width() != camera.width || upstream_rgb.height() != camera.height {
        return Err(Error::Shape(format!(
            "upstream rgb gradient is {}x{}, render is {}x{}",
            upstream_rgb.width(),
            upstream_rgb.height(),
            camera.width,
            camera.height
        )));
    }
    if upstream_alpha.len() != camera.pixel_count() {
        return Err(Error::Shape(format!(
            "upstream alpha gradient has {} values, expected {}",
            upstream_alpha.len(),
            camera.pixel_count()
        )));
    }
    let frame = prepare_frame(cloud, camera)?;

    let per_tile: Vec<Vec<SplatGrad>> = (0..frame.tiles.len())
        .into_par_iter()
        .map(|t| {
            let list = &frame.tiles[t];
            let mut grads = vec![SplatGrad::default(); list.len()];
            if list.is_empty() {
                return grads;
            }
            let (xs, ys) = tile_pixels(t, &frame, camera);
            let mut contribs: Vec<Contribution> = Vec::new();
            for y in ys {
                for x in xs.clone() {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    contribs.clear();
                    let mut trans = 1.0;
                    for (slot, &s) in list.iter().enumerate() {
                        let splat = &frame.splats[s as usize];
                        let Some((g, d)) = splat_kernel(splat, px, py) else {
                            continue;
                        };
                        let raw = splat.opacity * g;
                        let alpha = raw.min(ALPHA_MAX);
                        let next = trans * (1.0 - alpha);
                        if next < MIN_TRANSMITTANCE {
                            break;
                        }
                        contribs.push(Contribution {
                            slot,
                            alpha,
                            kernel: g,
                            clipped: raw > ALPHA_MAX,
                            trans,
                            d,
                        });
                        trans = next;
                    }
                    if contribs.is_empty() {
                        continue;
                    }
                    let t_end = trans;
                    let g_rgb = upstream_rgb.pixel(x, y);
                    let g_a = upstream_alpha[y * camera.width + x];
                    // color of everything behind the current splat, background included
                    let mut behind = background * t_end;
                    for c in contribs.iter().rev() {
                        let splat = &frame.splats[list[c.slot] as usize];
                        let sg = &mut grads[c.slot];
                        sg.touched = true;
                        let w = c.alpha * c.trans;
                        sg.color += g_rgb * w;
                        let one_minus = 1.0 - c.alpha;
                        let d_alpha = g_rgb.dot(&(splat.color * c.trans - behind / one_minus)) + g_a * t_end / one_minus;
                        behind += splat.color * w;
                        if c.clipped {
                            continue;
                        }
                        sg.opacity += d_alpha * c.kernel;
                        // dL/d(power), power = -½ dᵀ Q d
                        let gp = d_alpha * splat.opacity * c.kernel;
                        let q = &splat.conic;
                        sg.mean2d += gp * (q * c.d);
                        sg.conic += -0.5 * gp * (c.d * c.d.transpose());
                    }
                }
            }
            grads
        })
        .collect();

    // Merge per-tile buffers in fixed tile order.
    let mut screen = vec![SplatGrad::default(); frame.splats.len()];
    for (t, grads) in per_tile.iter().enumerate() {
        for (slot, g) in grads.iter().enumerate() {
            if !g.touched {
                continue;
            }
            let acc = &mut screen[frame.tiles[t][slot] as usize];
            acc.mean2d += g.mean2d;
            acc.conic += g.conic;
            acc.opacity += g.opacity;
            acc.color += g.color;
            acc.touched = true;
        }
    }

    let sh_count = cloud.sh_count();
    let center = camera.center();
    let ndc_scale = Vector2::new(camera.width as f64 / 2.0, camera.height as f64 / 2.0);
    let per_splat: Vec<_> = frame
        .splats
        .par_iter()
        .zip(screen.par_iter())
        .filter(|(_, g)| g.touched)
        .map(|(splat, g)| -> Result<_> {
            let i = splat.index;
            let mut color_grad = g.color;
            for k in 0..3 {
                if !splat.color_live[k] {
                    color_grad[k] = 0.0;
                }
            }
            let mut g_sh = vec![Vector3::zeros(); sh_count];
            let g_dir = eval_sh_backward(cloud.sh(i), &(cloud.positions[i] - center), &color_grad, &mut g_sh);

            let o = splat.opacity;
            let g_logit = g.opacity * o * (1.0 - o);

            let q = &splat.conic;
            let g_cov2d = -(q * g.conic * q);
            let rot = normalize_quaternion(&cloud.rotations[i])?;
            let cov = build_covariance(&rot, &cloud.log_scales[i])?;
            let (g_mean, g_cov) = project_gaussian_backward(&cloud.positions[i], &cov, camera, &g.mean2d, &g_cov2d);
            let (g_rot, g_ls) = build_covariance_backward(&cloud.rotations[i], &cloud.log_scales[i], &g_cov);
            let norm2d = g.mean2d.component_mul(&ndc_scale).norm();
            Ok((i, g_mean + g_dir, g_rot, g_ls, g_logit, g_sh, norm2d))
        })
        .collect::<Result<_>>()?;

    let mut out = RenderGrads::zeros(cloud.len(), sh_count);
    for (i, g_pos, g_rot, g_ls, g_logit, g_sh, norm2d) in per_splat {
        out.positions[i] = g_pos;
        out.rotations[i] = g_rot;
        out.log_scales[i] = g_ls;
        out.opacity_logits[i] = g_logit;
        out.sh_coeffs[i * sh_count..(i + 1) * sh_count].copy_from_slice(&g_sh);
        out.mean2d_grad_norm[i] = norm2d;
        out.visible[i] = true;
    }
    Ok(out)
}
