//! Evaluation kernels: Janus detection, retrieval precision, FID, inception
//! score and generation cost. All of them work on precomputed features, so the
//! choice of feature extractor stays outside this crate.

mod features;
mod fid;
mod inception;
mod janus;
mod retrieval;

pub use features::FeatureSet;
pub use fid::{fid, fid_from_moments, mean_and_covariance, EIGEN_TOLERANCE};
pub use inception::{inception_score, ROW_SUM_TOLERANCE};
pub use janus::{janus_detect, janus_frequency, verdict_from_mask, Distance, JanusOptions, JanusVerdict};
pub use retrieval::{r_precision, RetrievalResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::RunReport;

/// Wall-clock hours of one generation run.
pub fn gpu_hours(report: &RunReport) -> f64 {
    report.gpu_hours()
}

/// Summary row of an evaluation. Metrics that were not computed are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub janus_frequency_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub good_alignment_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_precision_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inception_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inception_score_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gpu_hours: Option<f64>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("janus_frequency_percent", self.janus_frequency_percent),
            ("good_alignment_percent", self.good_alignment_percent),
            ("r_precision_percent", self.r_precision_percent),
        ] {
            if let Some(p) = p {
                if !(0.0..=100.0).contains(&p) {
                    return Err(Error::Range(format!("{name} = {p} is not a percentage")));
                }
            }
        }
        if self.fid.is_some_and(|f| !(f >= 0.0)) {
            return Err(Error::Range("fid must be >= 0".into()));
        }
        if self.gpu_hours.is_some_and(|h| !(h >= 0.0)) {
            return Err(Error::Range("gpu_hours must be >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::TrainConfig;

    #[test]
    fn gpu_hours_from_report() {
        let mut r = RunReport::new("a corgi", &TrainConfig::default());
        assert_eq!(gpu_hours(&r), 0.0);
        r.total_seconds = 1800.0;
        assert_eq!(gpu_hours(&r), 0.5);
    }

    #[test]
    fn report_json_omits_missing_metrics() {
        let r = MetricReport {
            fid: Some(0.0),
            ..Default::default()
        };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"fid":0.0}"#);
        let bad = MetricReport {
            r_precision_percent: Some(101.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
