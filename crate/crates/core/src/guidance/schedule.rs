use crate::error::{Error, Result};

/// Discrete diffusion schedule, timesteps indexed `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl Default for NoiseSchedule {
    /// `T = 1000`, β linear from 1e-4 to 2e-2.
    fn default() -> Self {
        Self::linear(1000, 1e-4, 2e-2).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("noise schedule needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!("invalid beta range [{beta_start}, {beta_end}]")));
        }
        let mut prod = 1.0;
        let alpha_bar = (0..steps)
            .map(|i| {
                let beta = if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                };
                prod *= 1.0 - beta;
                prod
            })
            .collect();
        Self::from_alpha_bar(alpha_bar)
    }

    /// Builds a schedule from cumulative products, e.g. from a bridge handshake.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.is_empty() {
            return Err(Error::Config("empty alpha_bar".into()));
        }
        if !alpha_bar.iter().all(|a| *a > 0.0 && *a < 1.0) {
            return Err(Error::Config("alpha_bar values must lie in (0, 1)".into()));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("alpha_bar must be strictly decreasing".into()));
        }
        Ok(Self { alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.steps() {
            return Err(Error::Range(format!("timestep {t} outside [1, {}]", self.steps())));
        }
        Ok(self.alpha_bar[t - 1])
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn betas(&self) -> Vec<f64> {
        let mut prev = 1.0;
        self.alpha_bar
            .iter()
            .map(|a| {
                let b = 1.0 - a / prev;
                prev = *a;
                b
            })
            .collect()
    }
}
