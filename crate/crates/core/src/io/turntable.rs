use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use super::atomic::write_atomic;
use crate::error::{Error, Result};
use crate::gaussians::{CameraPose, GaussianCloud};
use crate::image::RgbImage;
use crate::rasterizer::render;

pub const EVAL_DISTANCE: f64 = 3.0;
pub const EVAL_FOV_DEG: f64 = 40.0;
pub const DEFAULT_FRAMES: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurntableOptions {
    pub frames: usize,
    pub resolution: usize,
    pub background: Vector3<f64>,
}

impl Default for TurntableOptions {
    fn default() -> Self {
        Self {
            frames: DEFAULT_FRAMES,
            resolution: 256,
            background: Vector3::repeat(1.0),
        }
    }
}

/// Evaluation cameras at azimuth `k·360/frames`, elevation 0.
pub fn turntable_cameras(frames: usize, resolution: usize) -> Vec<CameraPose> {
    (0..frames)
        .map(|k| {
            let az = k as f64 * 360.0 / frames as f64;
            CameraPose::new(az, 0.0, EVAL_DISTANCE, EVAL_FOV_DEG, resolution, resolution)
        })
        .collect()
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::io("png", std::io::Error::other(e)))?;
        w.write_image_data(&img.to_rgb8())
            .map_err(|e| Error::io("png", std::io::Error::other(e)))?;
    }
    Ok(out)
}

/// Decodes an 8-bit RGB PNG into `[0, 1]` floats.
pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::parse(0, format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::parse(0, "png too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::parse(0, format!("png: {e}")))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::parse(0, "expected an 8-bit RGB png"));
    }
    let data = buf[..info.buffer_size()].iter().map(|b| *b as f64 / 255.0).collect();
    RgbImage::from_vec(info.width as usize, info.height as usize, data)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}

/// Renders the evaluation turntable into `out_dir/frame_NNN.png`.
pub fn render_turntable(cloud: &GaussianCloud, options: &TurntableOptions, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if options.frames == 0 {
        return Err(Error::InvalidParameter("turntable needs at least one frame".into()));
    }
    cloud.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    turntable_cameras(options.frames, options.resolution)
        .iter()
        .enumerate()
        .map(|(k, cam)| {
            let img = render(cloud, cam, options.background)?.rgb;
            let path = out_dir.join(format!("frame_{k:03}.png"));
            save_png(&img, &path)?;
            Ok(path)
        })
        .collect()
}
