//! JSON messages of the guidance bridge protocol.
//!
//! `POST /v1/guidance` takes a [`GuidanceRequest`] and answers with a
//! [`GuidanceResponse`]; `GET /v1/schedule` answers with a [`ScheduleResponse`].
//! Images travel as base64 of little-endian `f32` in `H×W×3` row-major order.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::CameraPose;
use crate::guidance::{GuidanceMode, NoiseSchedule};
use crate::image::RgbImage;

pub const GUIDANCE_PATH: &str = "/v1/guidance";
pub const SCHEDULE_PATH: &str = "/v1/schedule";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCamera {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub fov_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub camera: WireCamera,
    pub rgb: String,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceRequest {
    pub mode: String,
    pub prompt: String,
    pub negative_prompt: Option<String>,
    pub timestep: usize,
    pub cfg_scale: f64,
    pub images: Vec<WireImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GuidanceResponse {
    Grads { grads: Vec<String> },
    Error { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResponse {
    #[serde(rename = "T")]
    pub steps: usize,
    pub alpha_bar: Vec<f64>,
}

impl ScheduleResponse {
    pub fn into_schedule(self) -> Result<NoiseSchedule> {
        if self.alpha_bar.len() != self.steps {
            return Err(Error::Shape(format!(
                "schedule advertises T={} but carries {} alpha_bar values",
                self.steps,
                self.alpha_bar.len()
            )));
        }
        NoiseSchedule::from_alpha_bar(self.alpha_bar)
    }

    pub fn from_schedule(schedule: &NoiseSchedule) -> Self {
        Self {
            steps: schedule.steps(),
            alpha_bar: schedule.alpha_bars().to_vec(),
        }
    }
}

pub fn encode_image(img: &RgbImage) -> String {
    let mut bytes = Vec::with_capacity(img.as_slice().len() * 4);
    for v in img.as_slice() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_image(data: &str, width: usize, height: usize) -> Result<RgbImage> {
    let bytes = STANDARD
        .decode(data)
        .map_err(|e| Error::parse(0, format!("invalid base64 image: {e}")))?;
    let expected = width * height * 3 * 4;
    if bytes.len() != expected {
        return Err(Error::Shape(format!(
            "image payload has {} bytes, expected {expected} for {height}x{width}x3 f32",
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    RgbImage::from_vec(width, height, values)
}

impl From<&CameraPose> for WireCamera {
    fn from(c: &CameraPose) -> Self {
        Self {
            azimuth: c.azimuth,
            elevation: c.elevation,
            distance: c.distance,
            fov_deg: c.fov_deg,
        }
    }
}

impl GuidanceRequest {
    pub fn new(
        mode: GuidanceMode,
        prompt: &str,
        negative_prompt: Option<&str>,
        timestep: usize,
        cfg_scale: f64,
        cameras: &[CameraPose],
        images: &[RgbImage],
    ) -> Self {
        Self {
            mode: mode.wire_name().to_string(),
            prompt: prompt.to_string(),
            negative_prompt: negative_prompt.map(str::to_string),
            timestep,
            cfg_scale,
            images: cameras
                .iter()
                .zip(images)
                .map(|(c, img)| WireImage {
                    camera: c.into(),
                    rgb: encode_image(img),
                    height: img.height(),
                    width: img.width(),
                })
                .collect(),
        }
    }

    pub fn guidance_mode(&self) -> Result<GuidanceMode> {
        match self.mode.as_str() {
            "sd" => Ok(GuidanceMode::SingleView),
            "mv" => Ok(GuidanceMode::Multiview),
            other => Err(Error::parse(0, format!("unknown guidance mode {other:?}"))),
        }
    }

    /// Decodes the request images; used by test bridges.
    pub fn decode_images(&self) -> Result<Vec<RgbImage>> {
        self.images.iter().map(|i| decode_image(&i.rgb, i.width, i.height)).collect()
    }
}

impl GuidanceResponse {
    /// Decodes the gradients against the shapes of the request that produced them.
    pub fn into_grads(self, request: &GuidanceRequest) -> Result<Vec<RgbImage>> {
        match self {
            GuidanceResponse::Error { error } => Err(Error::GuidanceUnavailable(error)),
            GuidanceResponse::Grads { grads } => {
                if grads.len() != request.images.len() {
                    return Err(Error::GuidanceUnavailable(format!(
                        "bridge returned {} gradients for {} images",
                        grads.len(),
                        request.images.len()
                    )));
                }
                grads
                    .iter()
                    .zip(&request.images)
                    .map(|(g, img)| decode_image(g, img.width, img.height))
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f32_images_survive_encoding(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            let data: Vec<f64> = (0..w * h * 3)
                .map(|i| ((seed.wrapping_mul(i as u64 + 1) % 10_000) as f32 / 977.0 - 3.0) as f64)
                .collect();
            let img = RgbImage::from_vec(w, h, data).unwrap();
            let back = decode_image(&encode_image(&img), w, h).unwrap();
            prop_assert_eq!(back, img);
        }
    }

    #[test]
    fn request_json_shape() {
        let cam = CameraPose::new(10.0, 20.0, 1.0, 40.0, 2, 1);
        let img = RgbImage::zeros(2, 1);
        let req = GuidanceRequest::new(GuidanceMode::Multiview, "a corgi", None, 500, 50.0, &[cam], &[img]);
        let v: serde_json::Value = serde_json::to_value(&req).unwrap();
        assert_eq!(v["mode"], "mv");
        assert_eq!(v["timestep"], 500);
        assert!(v["negative_prompt"].is_null());
        assert_eq!(v["images"][0]["camera"]["fov_deg"], 40.0);
        assert_eq!(v["images"][0]["height"], 1);
        let rgb = STANDARD.decode(v["images"][0]["rgb"].as_str().unwrap()).unwrap();
        assert_eq!(rgb.len(), 2 * 3 * 4);
    }

    #[test]
    fn response_variants() {
        let ok: GuidanceResponse = serde_json::from_str(r#"{"grads":["AAAAAAAAAAAAAAAA"]}"#).unwrap();
        assert!(matches!(ok, GuidanceResponse::Grads { .. }));
        let err: GuidanceResponse = serde_json::from_str(r#"{"error":"out of memory"}"#).unwrap();
        assert_eq!(err, GuidanceResponse::Error { error: "out of memory".into() });
        let sched: ScheduleResponse = serde_json::from_str(r#"{"T":3,"alpha_bar":[0.9,0.5,0.1]}"#).unwrap();
        assert_eq!(sched.into_schedule().unwrap().steps(), 3);
    }

    #[test]
    fn wrong_payload_size_rejected() {
        assert!(matches!(decode_image("AAAA", 1, 1), Err(Error::Shape(_))));
        assert!(decode_image("not base64!", 1, 1).is_err());
    }
}
