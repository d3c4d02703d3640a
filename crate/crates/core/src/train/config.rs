//! Training configuration: profiles, the flat key-value config file format,
//! and validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    /// "desk" or "paper"
    pub profile: String,
    pub stage1_steps: usize,
    pub stage2_steps_per_resolution: usize,
    pub stage2_fade_steps: usize,
    /// stage II output resolutions, strictly doubling from 2x train_res
    pub resolutions: Vec<usize>,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lr_g_final: f64,
    pub lr_d_final: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub lambda_r1: f64,
    pub mu_ssim: f64,
    pub samples_per_ray: usize,
    pub seed: u64,
    /// "synthetic" or a directory of PNG files
    pub dataset: String,
    pub scene_kind: String,
    pub scene_seed: u64,
    pub scene_count: usize,
    /// rendering (stage I / feature) resolution
    pub train_res: usize,
    pub field_width: usize,
    pub latent_dim: usize,
    pub fov_deg: f64,
    pub cam_radius: f64,
    pub near: f64,
    pub far: f64,
    /// "gaussian" or "uniform"
    pub pose_kind: String,
    pub pose_h_spread: f64,
    pub pose_v_spread: f64,
    /// set 0 to disable the adversarial game (overfit experiments)
    pub adv_weight: f64,
    /// weight on L_re (L_ir in stage I, L_fr in stage II)
    pub reproj_weight: f64,
    pub mixup_enabled: bool,
    /// draw eta per sample instead of once per iteration
    pub eta_per_sample: bool,
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn desk() -> TrainConfig {
        TrainConfig {
            profile: "desk".into(),
            stage1_steps: 20_000,
            stage2_steps_per_resolution: 20_000,
            stage2_fade_steps: 2_000,
            resolutions: vec![64],
            batch_size: 8,
            lr_g: 6.0e-5,
            lr_d: 2.0e-4,
            lr_g_final: 1.5e-5,
            lr_d_final: 5.0e-5,
            adam_beta1: 0.0,
            adam_beta2: 0.9,
            lambda_r1: 10.0,
            mu_ssim: 0.85,
            samples_per_ray: 12,
            seed: 7,
            dataset: "synthetic".into(),
            scene_kind: "textured_sphere".into(),
            scene_seed: 77,
            scene_count: 2_000,
            train_res: 32,
            field_width: 32,
            latent_dim: 256,
            fov_deg: 12.0,
            cam_radius: 1.0,
            near: 0.88,
            far: 1.12,
            pose_kind: "gaussian".into(),
            pose_h_spread: 0.3,
            pose_v_spread: 0.155,
            adv_weight: 1.0,
            reproj_weight: 1.0,
            mixup_enabled: true,
            eta_per_sample: false,
            checkpoint_every: 1_000,
        }
    }

    pub fn paper() -> TrainConfig {
        TrainConfig {
            profile: "paper".into(),
            batch_size: 56,
            train_res: 64,
            field_width: 256,
            resolutions: vec![128, 256, 512],
            scene_count: 10_000,
            ..TrainConfig::desk()
        }
    }

    /// Parse the flat `key = value` config format ('#' starts a comment).
    /// The `profile` key picks the defaults; every other key overrides one
    /// field. Unknown keys or malformed values are config errors.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("config line {}: expected key = value", lineno + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let profile = pairs
            .iter()
            .find(|(k, _)| k == "profile")
            .map(|(_, v)| v.as_str())
            .unwrap_or("desk");
        let mut cfg = match profile {
            "desk" => TrainConfig::desk(),
            "paper" => TrainConfig::paper(),
            other => {
                return Err(Error::InvalidArgument(format!("unknown profile {other}")))
            }
        };
        for (k, v) in &pairs {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
        })?;
        TrainConfig::parse(&text)
    }

    fn apply(&mut self, key: &str, val: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, val: &str) -> Result<T> {
            val.parse().map_err(|_| {
                Error::InvalidArgument(format!("config key {key}: bad value {val:?}"))
            })
        }
        match key {
            "profile" => {} // consumed up front
            "stage1_steps" => self.stage1_steps = num(key, val)?,
            "stage2_steps_per_resolution" => self.stage2_steps_per_resolution = num(key, val)?,
            "stage2_fade_steps" => self.stage2_fade_steps = num(key, val)?,
            "resolutions" => {
                // empty value = stage I only
                self.resolutions = val
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| num("resolutions", s))
                    .collect::<Result<_>>()?
            }
            "batch_size" => self.batch_size = num(key, val)?,
            "lr_g" => self.lr_g = num(key, val)?,
            "lr_d" => self.lr_d = num(key, val)?,
            "lr_g_final" => self.lr_g_final = num(key, val)?,
            "lr_d_final" => self.lr_d_final = num(key, val)?,
            "adam_beta1" => self.adam_beta1 = num(key, val)?,
            "adam_beta2" => self.adam_beta2 = num(key, val)?,
            "lambda_r1" => self.lambda_r1 = num(key, val)?,
            "mu_ssim" => self.mu_ssim = num(key, val)?,
            "samples_per_ray" => self.samples_per_ray = num(key, val)?,
            "seed" => self.seed = num(key, val)?,
            "dataset" => self.dataset = val.to_string(),
            "scene_kind" => self.scene_kind = val.to_string(),
            "scene_seed" => self.scene_seed = num(key, val)?,
            "scene_count" => self.scene_count = num(key, val)?,
            "train_res" => self.train_res = num(key, val)?,
            "field_width" => self.field_width = num(key, val)?,
            "latent_dim" => self.latent_dim = num(key, val)?,
            "fov_deg" => self.fov_deg = num(key, val)?,
            "cam_radius" => self.cam_radius = num(key, val)?,
            "near" => self.near = num(key, val)?,
            "far" => self.far = num(key, val)?,
            "pose_kind" => self.pose_kind = val.to_string(),
            "pose_h_spread" => self.pose_h_spread = num(key, val)?,
            "pose_v_spread" => self.pose_v_spread = num(key, val)?,
            "adv_weight" => self.adv_weight = num(key, val)?,
            "reproj_weight" => self.reproj_weight = num(key, val)?,
            "mixup_enabled" => self.mixup_enabled = num(key, val)?,
            "eta_per_sample" => self.eta_per_sample = num(key, val)?,
            "checkpoint_every" => self.checkpoint_every = num(key, val)?,
            other => {
                return Err(Error::InvalidArgument(format!("unknown config key {other}")))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("adam betas must be in [0,1), got {b}"));
            }
        }
        let mut prev = self.train_res;
        for &r in &self.resolutions {
            if r != prev * 2 {
                return bad(format!(
                    "resolutions must double starting at {}, got {:?}",
                    2 * self.train_res,
                    self.resolutions
                ));
            }
            prev = r;
        }
        if !self.train_res.is_power_of_two() {
            return bad(format!("train_res {} must be a power of two", self.train_res));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return bad(format!("near/far {}/{} invalid", self.near, self.far));
        }
        if self.samples_per_ray == 0 || self.stage2_fade_steps == 0 {
            return bad("samples_per_ray and stage2_fade_steps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mu_ssim) {
            return bad(format!("mu_ssim {} outside [0,1]", self.mu_ssim));
        }
        match self.scene_kind.as_str() {
            "textured_sphere" | "textured_plane" | "two_tone_blob" => {}
            other => return bad(format!("unknown scene_kind {other}")),
        }
        match self.pose_kind.as_str() {
            "gaussian" | "uniform" => {}
            other => return bad(format!("unknown pose_kind {other}")),
        }
        Ok(())
    }

    /// Stage II total steps across all resolutions.
    pub fn stage2_total_steps(&self) -> usize {
        self.stage2_steps_per_resolution * self.resolutions.len()
    }

    pub fn total_steps(&self) -> usize {
        self.stage1_steps + self.stage2_total_steps()
    }
}

/// Linear learning-rate decay from `lr0` at step 0 to `lr_final` at `total`.
pub fn lr_schedule(step: usize, total: usize, lr0: f64, lr_final: f64) -> f64 {
    if total == 0 {
        return lr_final;
    }
    let t = (step as f64 / total as f64).min(1.0);
    lr0 * (1.0 - t) + lr_final * t
}
