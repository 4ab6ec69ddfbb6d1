use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, GuidanceMode};

/// Value types that can appear in a flat `key=value` config file.
pub trait ConfigValue: Sized {
    fn format_value(&self) -> String;
    fn parse_value(key: &str, s: &str) -> Result<Self>;
}

impl ConfigValue for f64 {
    fn format_value(&self) -> String {
        // Debug prints the shortest representation that parses back exactly
        format!("{self:?}")
    }

    fn parse_value(key: &str, s: &str) -> Result<Self> {
        let v: f64 = s
            .parse()
            .map_err(|_| Error::Config(format!("{key}: {s:?} is not a number")))?;
        if !v.is_finite() {
            return Err(Error::Config(format!("{key}: value must be finite")));
        }
        Ok(v)
    }
}

macro_rules! integer_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn format_value(&self) -> String {
                self.to_string()
            }

            fn parse_value(key: &str, s: &str) -> Result<Self> {
                s.parse().map_err(|_| Error::Config(format!("{key}: {s:?} is not a non-negative integer")))
            }
        }
    )*};
}

integer_value!(usize, u64);

impl ConfigValue for bool {
    fn format_value(&self) -> String {
        self.to_string()
    }

    fn parse_value(key: &str, s: &str) -> Result<Self> {
        match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(Error::Config(format!("{key}: {s:?} is not true/false"))),
        }
    }
}

macro_rules! train_config {
    ($($(#[doc = $doc:literal])* $name:ident: $ty:ty = $default:expr,)*) => {
        /// Hyperparameters of the two-stage pipeline. Field names double as the
        /// keys of the run-config file.
        #[derive(Debug, Clone, PartialEq)]
        pub struct TrainConfig {
            $($(#[doc = $doc])* pub $name: $ty,)*
        }

        impl Default for TrainConfig {
            fn default() -> Self {
                Self { $($name: $default,)* }
            }
        }

        impl TrainConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($name)),*];

            /// `(key, value)` pairs in declaration order.
            pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($name), self.$name.format_value())),*]
            }

            /// Sets one field from its textual value; unknown keys are an error.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($name) => self.$name = <$ty>::parse_value(key, value)?,)*
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }
        }
    };
}

train_config! {
    stage1_steps: usize = 2000,
    /// 0 gives the first-stage-only model.
    stage2_steps: usize = 1000,
    /// Views rendered per step.
    batch_cameras: usize = 12,
    /// Views per multiview group.
    multiview_views: usize = 4,
    /// Independent single-view cameras within the stage-2 batch.
    stage2_single_views: usize = 4,
    n_init_gaussians: usize = 5000,
    init_radius: f64 = 0.5,
    sh_degree: usize = 0,
    densify_interval: usize = 100,
    /// Threshold on the mean per-view 2D mean-gradient norm, in NDC units.
    densify_grad_threshold: f64 = 0.02,
    densify_in_stage2: bool = true,
    prune_interval: usize = 100,
    prune_opacity_threshold: f64 = 0.05,
    /// Gaussians with a larger world-space σ (relative to the scene extent) are pruned.
    prune_scale_fraction: f64 = 0.5,
    /// Densified Gaussians larger than this fraction of the scene extent are split, smaller ones cloned.
    split_scale_fraction: f64 = 0.01,
    split_factor: f64 = 1.6,
    /// Clone jitter in units of the Gaussian's largest σ.
    clone_jitter: f64 = 0.01,
    scene_extent: f64 = 1.0,
    lr_position: f64 = 1e-4,
    lr_feature: f64 = 1e-2,
    lr_opacity: f64 = 3e-3,
    lr_scale: f64 = 3e-3,
    lr_rotation: f64 = 3e-3,
    weight_mv: f64 = 1.0,
    weight_sparsity: f64 = 1.0,
    weight_sd: f64 = 0.5,
    render_resolution: usize = 256,
    distance_min: f64 = 0.8,
    distance_max: f64 = 1.2,
    fov_min: f64 = 15.0,
    fov_max: f64 = 60.0,
    elevation_min: f64 = -20.0,
    elevation_max: f64 = 60.0,
    azimuth_min: f64 = 0.0,
    azimuth_max: f64 = 360.0,
    mv_cfg_scale: f64 = 50.0,
    mv_t_min_percent: f64 = 0.02,
    mv_t_max_percent: f64 = 0.98,
    mv_use_negative_prompt: bool = false,
    sd_cfg_scale: f64 = 50.0,
    sd_t_min_percent: f64 = 0.2,
    sd_t_max_percent: f64 = 0.5,
    sd_use_negative_prompt: bool = true,
    /// Training background; black when false.
    white_background: bool = false,
    /// Consecutive guidance failures tolerated before the run aborts.
    max_guidance_failures: usize = 10,
    seed: u64 = 0,
}

impl TrainConfig {
    pub fn mv_guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            cfg_scale: self.mv_cfg_scale,
            t_min_percent: self.mv_t_min_percent,
            t_max_percent: self.mv_t_max_percent,
            weight: self.weight_mv,
            mode: GuidanceMode::Multiview,
            use_negative_prompt: self.mv_use_negative_prompt,
        }
    }

    pub fn sd_guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            cfg_scale: self.sd_cfg_scale,
            t_min_percent: self.sd_t_min_percent,
            t_max_percent: self.sd_t_max_percent,
            weight: self.weight_sd,
            mode: GuidanceMode::SingleView,
            use_negative_prompt: self.sd_use_negative_prompt,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.stage1_steps + self.stage2_steps
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        for (name, w) in [
            ("weight_mv", self.weight_mv),
            ("weight_sparsity", self.weight_sparsity),
            ("weight_sd", self.weight_sd),
        ] {
            if w < 0.0 {
                return fail(format!("{name} must be >= 0"));
            }
        }
        for (name, lr) in [
            ("lr_position", self.lr_position),
            ("lr_feature", self.lr_feature),
            ("lr_opacity", self.lr_opacity),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
        ] {
            if lr < 0.0 {
                return fail(format!("{name} must be >= 0"));
            }
        }
        if self.densify_interval == 0 || self.prune_interval == 0 {
            return fail("densify_interval and prune_interval must be > 0".into());
        }
        if self.multiview_views == 0 || self.batch_cameras < self.multiview_views {
            return fail(format!(
                "batch_cameras {} must hold at least one group of {} views",
                self.batch_cameras, self.multiview_views
            ));
        }
        if !self.batch_cameras.is_multiple_of(self.multiview_views) {
            return fail("batch_cameras must be a multiple of multiview_views".into());
        }
        if self.stage2_single_views >= self.batch_cameras
            || !(self.batch_cameras - self.stage2_single_views).is_multiple_of(self.multiview_views)
        {
            return fail(format!(
                "stage-2 batch of {} cannot be split into {} single views plus whole groups of {}",
                self.batch_cameras, self.stage2_single_views, self.multiview_views
            ));
        }
        if self.n_init_gaussians == 0 {
            return fail("n_init_gaussians must be >= 1".into());
        }
        if self.sh_degree > crate::gaussians::MAX_SH_DEGREE {
            return fail(format!("sh_degree {} exceeds 3", self.sh_degree));
        }
        if self.render_resolution == 0 {
            return fail("render_resolution must be > 0".into());
        }
        if !(self.init_radius > 0.0 && self.scene_extent > 0.0 && self.split_factor > 1.0) {
            return fail("init_radius and scene_extent must be > 0, split_factor > 1".into());
        }
        for (name, lo, hi) in [
            ("distance", self.distance_min, self.distance_max),
            ("fov", self.fov_min, self.fov_max),
            ("elevation", self.elevation_min, self.elevation_max),
            ("azimuth", self.azimuth_min, self.azimuth_max),
        ] {
            if lo > hi {
                return fail(format!("{name} range [{lo}, {hi}] is empty"));
            }
        }
        if self.distance_min <= 0.0 || self.fov_min <= 0.0 || self.fov_max >= 180.0 {
            return fail("camera distance must be > 0 and fov inside (0, 180)".into());
        }
        if self.elevation_min <= -90.0 || self.elevation_max >= 90.0 {
            return fail("elevation range must stay inside (-90, 90)".into());
        }
        if self.max_guidance_failures == 0 {
            return fail("max_guidance_failures must be >= 1".into());
        }
        self.mv_guidance().validate()?;
        self.sd_guidance().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.total_steps(), 3000);
        assert_eq!(c.mv_guidance().t_min_percent, 0.02);
        assert_eq!(c.sd_guidance().weight, 0.5);
    }

    #[test]
    fn set_rejects_unknown_and_malformed() {
        let mut c = TrainConfig::default();
        c.set("lr_position", "2e-4").unwrap();
        assert_eq!(c.lr_position, 2e-4);
        assert!(matches!(c.set("lr_postion", "1"), Err(Error::Config(_))));
        assert!(c.set("stage1_steps", "-3").is_err());
        assert!(c.set("weight_sd", "nan").is_err());
        assert!(c.set("densify_in_stage2", "yes").is_err());
    }

    #[test]
    fn batch_allocation_checked() {
        let mut c = TrainConfig::default();
        c.batch_cameras = 10;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.stage2_single_views = 3;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.elevation_min = 70.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn pairs_cover_every_key() {
        let pairs = TrainConfig::default().to_pairs();
        let keys: Vec<_> = pairs.iter().map(|(k, _)| *k).collect();
        assert_eq!(keys, TrainConfig::KEYS);
    }
}
