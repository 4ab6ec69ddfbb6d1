//! Tile-based forward rendering and the analytic backward pass.
//!
//! Per pixel, visible Gaussians are composited front to back in a single global
//! depth order (ties broken by index):
//!
//! ```text
//! αᵢ = min(0.99, oᵢ · exp(-½ dᵀ Σ₂ᵢ⁻¹ d))        if dᵀ Σ₂ᵢ⁻¹ d ≤ SUPPORT_SIGMAS²
//! C  = Σᵢ cᵢ αᵢ Tᵢ + T_end · background,  Tᵢ = Πⱼ<ᵢ (1 - αⱼ)
//! A  = 1 - T_end
//! ```
//!
//! A Gaussian is skipped (and compositing stops) as soon as including it would
//! drop transmittance below [`MIN_TRANSMITTANCE`]. Tiles only restrict which
//! Gaussians a pixel looks at; the support test above is what defines coverage,
//! so the tiled result equals a per-pixel loop over every Gaussian.

mod backward;

pub use backward::{render_backward, RenderGrads};

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::Result;
use crate::gaussians::{eval_sh, normalize_quaternion, project_gaussian, build_covariance, CameraPose, GaussianCloud};
use crate::image::RgbImage;

pub const TILE_SIZE: usize = 16;

/// Per-Gaussian opacity clip.
pub const ALPHA_MAX: f64 = 0.99;

/// Compositing stops before transmittance would fall below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

/// Support radius of each splat in units of its projected standard deviation
/// (Mahalanobis distance). Beyond it the kernel is below 3e-11 and is treated as
/// exactly zero; tile binning uses the same extent.
pub const SUPPORT_SIGMAS: f64 = 7.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: RgbImage,
    pub alpha: Vec<f64>,
    pub background: Vector3<f64>,
}

/// Screen-space state of a visible Gaussian, shared by forward and backward.
#[derive(Debug, Clone)]
pub(crate) struct Splat {
    pub index: usize,
    pub mean2d: Vector2<f64>,
    pub conic: Matrix2<f64>,
    pub opacity: f64,
    /// Color after clamping to `[0, 1]`.
    pub color: Vector3<f64>,
    /// Channels whose unclamped value was inside `[0, 1]`.
    pub color_live: [bool; 3],
    pub depth: f64,
    /// Inclusive pixel-index bounds `[x0, x1] × [y0, y1]`.
    pub bounds: [usize; 4],
}

pub(crate) struct Frame {
    pub splats: Vec<Splat>,
    /// Per tile, indices into `splats` sorted front to back.
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
}

fn prepare_splat(cloud: &GaussianCloud, i: usize, camera: &CameraPose) -> Result<Option<Splat>> {
    let q = normalize_quaternion(&cloud.rotations[i])?;
    let cov = build_covariance(&q, &cloud.log_scales[i])?;
    let Some(p) = project_gaussian(&cloud.positions[i], &cov, camera) else {
        return Ok(None);
    };
    let Some(conic) = p.cov2d.try_inverse() else {
        return Ok(None);
    };
    let raw = eval_sh(cloud.sh(i), &(cloud.positions[i] - camera.center()).normalize())?;
    let color = raw.map(|c| c.clamp(0.0, 1.0));
    let color_live = [0, 1, 2].map(|k| (0.0..=1.0).contains(&raw[k]));

    let ext_x = SUPPORT_SIGMAS * p.cov2d[(0, 0)].sqrt() * (1.0 + 1e-9);
    let ext_y = SUPPORT_SIGMAS * p.cov2d[(1, 1)].sqrt() * (1.0 + 1e-9);
    // pixel centers sit at index + 0.5
    let x0 = (p.mean2d.x - ext_x - 0.5).ceil();
    let x1 = (p.mean2d.x + ext_x - 0.5).floor();
    let y0 = (p.mean2d.y - ext_y - 0.5).ceil();
    let y1 = (p.mean2d.y + ext_y - 0.5).floor();
    let (w, h) = (camera.width as f64, camera.height as f64);
    if x1 < 0.0 || y1 < 0.0 || x0 > w - 1.0 || y0 > h - 1.0 || x0 > x1 || y0 > y1 {
        return Ok(None);
    }
    let bounds = [
        x0.max(0.0) as usize,
        x1.min(w - 1.0) as usize,
        y0.max(0.0) as usize,
        y1.min(h - 1.0) as usize,
    ];
    Ok(Some(Splat {
        index: i,
        mean2d: p.mean2d,
        conic,
        opacity: cloud.opacity(i),
        color,
        color_live,
        depth: p.depth,
        bounds,
    }))
}

pub(crate) fn prepare_frame(cloud: &GaussianCloud, camera: &CameraPose) -> Result<Frame> {
    camera.validate()?;
    cloud.validate()?;
    let prepared: Vec<Option<Splat>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| prepare_splat(cloud, i, camera))
        .collect::<Result<_>>()?;
    let mut splats: Vec<Splat> = prepared.into_iter().flatten().collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let tiles_x = camera.width.div_ceil(TILE_SIZE);
    let tiles_y = camera.height.div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (s, splat) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = splat.bounds;
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                tiles[ty * tiles_x + tx].push(s as u32);
            }
        }
    }
    Ok(Frame {
        splats,
        tiles,
        tiles_x,
    })
}

/// Kernel value `exp(-½ dᵀ Q d)` at a pixel center, or `None` outside the support.
#[inline]
pub(crate) fn splat_kernel(splat: &Splat, px: f64, py: f64) -> Option<(f64, Vector2<f64>)> {
    let d = Vector2::new(px - splat.mean2d.x, py - splat.mean2d.y);
    let q = &splat.conic;
    let m = q[(0, 0)] * d.x * d.x + 2.0 * q[(0, 1)] * d.x * d.y + q[(1, 1)] * d.y * d.y;
    if !(m <= SUPPORT_SIGMAS * SUPPORT_SIGMAS) {
        return None;
    }
    Some(((-0.5 * m).exp(), d))
}

pub(crate) fn tile_pixels(tile: usize, frame: &Frame, camera: &CameraPose) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let tx = tile % frame.tiles_x;
    let ty = tile / frame.tiles_x;
    let xs = tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(camera.width);
    let ys = ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(camera.height);
    (xs, ys)
}

/// Renders premultiplied color composited over `background`, plus the alpha map.
pub fn render(cloud: &GaussianCloud, camera: &CameraPose, background: Vector3<f64>) -> Result<RenderOutput> {
    let frame = prepare_frame(cloud, camera)?;
    let per_tile: Vec<Vec<(usize, usize, Vector3<f64>, f64)>> = (0..frame.tiles.len())
        .into_par_iter()
        .map(|t| {
            let (xs, ys) = tile_pixels(t, &frame, camera);
            let list = &frame.tiles[t];
            let mut out = Vec::with_capacity(xs.len() * ys.len());
            for y in ys {
                for x in xs.clone() {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut color = Vector3::zeros();
                    let mut trans = 1.0;
                    for &s in list {
                        let splat = &frame.splats[s as usize];
                        let Some((g, _)) = splat_kernel(splat, px, py) else {
                            continue;
                        };
                        let alpha = (splat.opacity * g).min(ALPHA_MAX);
                        let next = trans * (1.0 - alpha);
                        if next < MIN_TRANSMITTANCE {
                            break;
                        }
                        color += splat.color * (alpha * trans);
                        trans = next;
                    }
                    out.push((x, y, color + background * trans, 1.0 - trans));
                }
            }
            out
        })
        .collect();

    let mut rgb = RgbImage::zeros(camera.width, camera.height);
    let mut alpha = vec![0.0; camera.pixel_count()];
    for (x, y, c, a) in per_tile.into_iter().flatten() {
        rgb.set_pixel(x, y, c);
        alpha[y * camera.width + x] = a;
    }
    Ok(RenderOutput { rgb, alpha, background })
}
