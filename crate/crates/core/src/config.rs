//! Plain-text `key = value` run configuration covering every tunable
//! constant. Unknown keys are rejected so typos fail loudly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::optim::LearningRates;
use crate::rasterizer::RenderSettings;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub iterations: u64,
    pub sh_degree: usize,
    pub appearance_hidden: usize,
    pub medium_hidden: usize,
    pub identity_medium: bool,
    /// Held-out view index, excluded from training and scored each iteration.
    pub holdout_view: usize,

    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub gamma_eps: f64,

    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_networks: f64,
    pub lr_medium: f64,

    pub densify_interval: u64,
    pub densify_warmup: u64,
    /// Densification stops at this fraction of the run.
    pub densify_stop_fraction: f64,
    pub densify_grad_threshold: f64,
    pub densify_size_threshold: f64,
    pub prune_alpha: f64,
    pub split_factor: f64,

    pub near_plane: f64,
    pub opacity_cull: f64,
    pub lowpass: f64,
    pub early_stop: f64,
    pub radius_sigmas: f64,

    /// Background distance assigned where coverage is low.
    pub far_distance: f64,
    /// Checkpoint write period in iterations (0 = final only).
    pub checkpoint_interval: u64,
    /// Holdout-view PSNR refresh period; intermediate metric rows repeat the
    /// last measured value.
    pub holdout_interval: u64,
    /// For this many leading iterations only the medium heads are updated, so
    /// the water column is claimed by the medium rather than baked into the
    /// scene colors.
    pub medium_warmup: u64,
}

impl Default for Config {
    fn default() -> Self {
        let lw = LossWeights::default();
        let lr = LearningRates::default();
        let rs = RenderSettings::default();
        Self {
            iterations: 2000,
            sh_degree: 3,
            appearance_hidden: 128,
            medium_hidden: 16,
            identity_medium: false,
            holdout_view: 0,
            lambda1: lw.lambda1,
            lambda2: lw.lambda2,
            lambda3: lw.lambda3,
            lambda4: lw.lambda4,
            lambda5: lw.lambda5,
            gamma_eps: lw.gamma_eps,
            lr_position_init: lr.position_init,
            lr_position_final: lr.position_final,
            lr_color: lr.color,
            lr_opacity: lr.opacity,
            lr_scale: lr.scale,
            lr_rotation: lr.rotation,
            lr_networks: lr.networks,
            lr_medium: lr.medium,
            densify_interval: 100,
            densify_warmup: 500,
            densify_stop_fraction: 0.5,
            densify_grad_threshold: 2e-4,
            densify_size_threshold: 0.05,
            prune_alpha: 0.005,
            split_factor: 1.6,
            near_plane: rs.near_plane,
            opacity_cull: rs.opacity_cull,
            lowpass: rs.lowpass,
            early_stop: rs.early_stop,
            radius_sigmas: rs.radius_sigmas,
            far_distance: 10.0,
            checkpoint_interval: 0,
            holdout_interval: 10,
            medium_warmup: 1800,
        }
    }
}

macro_rules! config_fields {
    ($($name:ident : $kind:ident),* $(,)?) => {
        impl Config {
            pub fn set_entry(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($name) => {
                        self.$name = value.trim().parse().map_err(|_| {
                            Error::Usage(format!("config key '{key}' has invalid value '{value}'"))
                        })?;
                        Ok(())
                    })*
                    _ => Err(Error::Usage(format!("unknown config key '{key}'"))),
                }
            }

            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(let _ = writeln!(s, "{} = {}", stringify!($name), self.$name);)*
                s
            }
        }
    };
}

config_fields!(
    iterations: u64,
    sh_degree: usize,
    appearance_hidden: usize,
    medium_hidden: usize,
    identity_medium: bool,
    holdout_view: usize,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
    lambda4: f64,
    lambda5: f64,
    gamma_eps: f64,
    lr_position_init: f64,
    lr_position_final: f64,
    lr_color: f64,
    lr_opacity: f64,
    lr_scale: f64,
    lr_rotation: f64,
    lr_networks: f64,
    lr_medium: f64,
    densify_interval: u64,
    densify_warmup: u64,
    densify_stop_fraction: f64,
    densify_grad_threshold: f64,
    densify_size_threshold: f64,
    prune_alpha: f64,
    split_factor: f64,
    near_plane: f64,
    opacity_cull: f64,
    lowpass: f64,
    early_stop: f64,
    radius_sigmas: f64,
    far_distance: f64,
    checkpoint_interval: u64,
    holdout_interval: u64,
    medium_warmup: u64,
);

impl Config {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Usage(format!("config line {} is not 'key = value'", lineno + 1))
            })?;
            cfg.set_entry(key.trim(), value)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lambda4: self.lambda4,
            lambda5: self.lambda5,
            gamma_eps: self.gamma_eps,
        }
    }

    pub fn learning_rates(&self) -> LearningRates {
        LearningRates {
            position_init: self.lr_position_init,
            position_final: self.lr_position_final,
            color: self.lr_color,
            opacity: self.lr_opacity,
            scale: self.lr_scale,
            rotation: self.lr_rotation,
            networks: self.lr_networks,
            medium: self.lr_medium,
        }
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            near_plane: self.near_plane,
            opacity_cull: self.opacity_cull,
            lowpass: self.lowpass,
            early_stop: self.early_stop,
            radius_sigmas: self.radius_sigmas,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_weights() {
        let c = Config::default();
        assert_eq!(
            (c.lambda1, c.lambda2, c.lambda3, c.lambda4, c.lambda5),
            (0.2, 0.1, 0.01, 0.1, 100.0)
        );
        assert_eq!(c.gamma_eps, 1e-3);
        assert_eq!(c.iterations, 2000);
    }

    #[test]
    fn text_round_trip() {
        let mut c = Config::default();
        c.iterations = 777;
        c.lambda5 = 42.5;
        c.identity_medium = true;
        let parsed = Config::from_text(&c.to_text()).unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn parses_comments_and_spacing() {
        let c = Config::from_text("# comment\n  iterations =  50 # tail\n\nsh_degree=1\n").unwrap();
        assert_eq!(c.iterations, 50);
        assert_eq!(c.sh_degree, 1);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(Config::from_text("no_such_key = 1").is_err());
        assert!(Config::from_text("iterations").is_err());
        assert!(Config::from_text("iterations = abc").is_err());
    }
}
