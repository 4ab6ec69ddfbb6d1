use std::time::Duration;

use ureq::Agent;

use super::{NoiseSchedule, ScoreOutput, ScoreProvider, ScoreRequest};
use crate::error::{Error, Result};
use crate::io::wire::{GuidanceRequest, GuidanceResponse, ScheduleResponse, GUIDANCE_PATH, SCHEDULE_PATH};

const RESPONSE_LIMIT: u64 = 1 << 30;

/// HTTP client for an external guidance bridge.
///
/// The bridge does its own noising and encoding, so only the clean renders are
/// sent and finished pixel gradients come back.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    base_url: String,
    agent: Agent,
}

impl RemoteProvider {
    pub fn new(base_url: &str) -> Self {
        Self::with_timeout(base_url, Duration::from_secs(600))
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Self {
        let agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn unavailable(&self, what: &str, e: impl std::fmt::Display) -> Error {
        Error::GuidanceUnavailable(format!("{what} {}: {e}", self.base_url))
    }
}

impl ScoreProvider for RemoteProvider {
    fn schedule(&mut self) -> Result<Option<NoiseSchedule>> {
        let mut resp = self
            .agent
            .get(format!("{}{SCHEDULE_PATH}", self.base_url))
            .call()
            .map_err(|e| self.unavailable("schedule handshake with", e))?;
        if !resp.status().is_success() {
            return Err(self.unavailable("schedule handshake with", resp.status()));
        }
        let body: ScheduleResponse = resp
            .body_mut()
            .with_config()
            .limit(RESPONSE_LIMIT)
            .read_json()
            .map_err(|e| self.unavailable("bad schedule from", e))?;
        body.into_schedule()
            .map(Some)
            .map_err(|e| self.unavailable("bad schedule from", e))
    }

    fn score(&mut self, req: &ScoreRequest<'_>) -> Result<ScoreOutput> {
        let wire = GuidanceRequest::new(
            req.mode,
            req.prompt,
            req.negative_prompt,
            req.timestep,
            req.cfg_scale,
            req.cameras,
            req.clean,
        );
        let mut resp = self
            .agent
            .post(format!("{}{GUIDANCE_PATH}", self.base_url))
            .send_json(&wire)
            .map_err(|e| self.unavailable("guidance request to", e))?;
        let status = resp.status();
        let body: GuidanceResponse = match resp.body_mut().with_config().limit(RESPONSE_LIMIT).read_json() {
            Ok(b) => b,
            Err(e) if status.is_success() => return Err(self.unavailable("bad response from", e)),
            Err(_) => return Err(self.unavailable("guidance request to", status)),
        };
        body.into_grads(&wire).map(ScoreOutput::PixelGrads)
    }
}
