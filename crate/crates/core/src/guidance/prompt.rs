use crate::error::{Error, Result};
use crate::gaussians::CameraPose;

pub const DEFAULT_NEGATIVE_PROMPT: &str =
    "unrealistic, blurry, low quality, out of focus, low contrast, low-resolution";

/// Cameras above this elevation (degrees) get the overhead phrase.
const OVERHEAD_ELEVATION: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub negative_text: String,
}

impl Prompt {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        Self::with_negative(text, DEFAULT_NEGATIVE_PROMPT)
    }

    pub fn with_negative(text: impl Into<String>, negative: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::InvalidParameter("prompt text must be non-empty".into()));
        }
        Ok(Self {
            text,
            negative_text: negative.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViewPhrase {
    Front,
    Side,
    Back,
    Overhead,
}

impl ViewPhrase {
    pub fn suffix(self) -> &'static str {
        match self {
            ViewPhrase::Front => ", front view",
            ViewPhrase::Side => ", side view",
            ViewPhrase::Back => ", back view",
            ViewPhrase::Overhead => ", overhead view",
        }
    }
}

/// Quantizes a camera into a viewpoint phrase: overhead above 60° elevation,
/// otherwise four 90° azimuth sectors centered on 0 (front), 90 (side),
/// 180 (back) and 270 (side). Sector boundaries belong to the sector that follows.
pub fn view_phrase(camera: &CameraPose) -> ViewPhrase {
    if camera.elevation > OVERHEAD_ELEVATION {
        return ViewPhrase::Overhead;
    }
    let az = camera.azimuth_wrapped();
    if !(45.0..315.0).contains(&az) {
        ViewPhrase::Front
    } else if az < 135.0 {
        ViewPhrase::Side
    } else if az < 225.0 {
        ViewPhrase::Back
    } else {
        ViewPhrase::Side
    }
}

pub fn augment_prompt(prompt: &Prompt, camera: &CameraPose) -> String {
    format!("{}{}", prompt.text, view_phrase(camera).suffix())
}
