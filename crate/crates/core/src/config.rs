//! Run configuration: a flat `key = value` text format with named profiles.
//!
//! Grammar: one `key = value` pair per line; blank lines and lines starting
//! with `#` are ignored; text after ` #` on a value line is a comment. A
//! `profile` line, if present, selects the defaults every other key
//! overrides, regardless of where it appears. Unknown and repeated keys are
//! errors.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flowgen::ModelDims;
use crate::netcore::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Laptop-scale settings used by the test suite.
    Desk,
    /// Sizes of the reference architecture: 2048 points, 1000 Euler steps,
    /// 64-d point features, Adam at 1e-4.
    Full,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::config("profile", format!("unknown profile `{other}` (expected desk or full)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub feature_dim: usize,
    pub language_dim: usize,
    pub time_dim: usize,
    pub mask_dim: usize,
    pub encoder_hidden: usize,
    pub hidden: usize,
    pub time_scale: f64,
    pub points: usize,
    pub gripper_points: usize,
    /// Voxel edge in meters; 0 disables voxel downsampling.
    pub voxel_cell: f64,
    pub flow_steps: usize,
    /// Noise standard deviation as a fraction of the RMS target radius.
    pub sigma_scale: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplicative learning-rate decay applied every `decay_every` steps.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub train_steps: usize,
    pub batch: usize,
    pub augment: bool,
    pub train_seed: u64,
    pub log_every: usize,
    pub eval_runs: usize,
    pub eval_seed: u64,
    pub data_path: String,
    pub bundle_path: String,
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            feature_dim: 32,
            language_dim: 32,
            time_dim: 32,
            mask_dim: 32,
            encoder_hidden: 64,
            hidden: 96,
            time_scale: 100.0,
            points: 256,
            gripper_points: 128,
            voxel_cell: 0.004,
            flow_steps: 100,
            sigma_scale: 0.5,
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_decay: 0.99,
            decay_every: 100,
            train_steps: 50_000,
            batch: 1,
            augment: true,
            train_seed: 0,
            log_every: 100,
            eval_runs: 100,
            eval_seed: 0,
            data_path: String::new(),
            bundle_path: String::new(),
        }
    }

    pub fn full() -> Self {
        Self {
            profile: Profile::Full,
            feature_dim: 64,
            encoder_hidden: 128,
            hidden: 256,
            time_scale: 1000.0,
            points: 2048,
            gripper_points: 2048,
            flow_steps: 1000,
            lr: 1e-4,
            lr_decay: 0.998,
            train_steps: 200_000,
            ..Self::desk()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Full => Self::full(),
        }
    }

    pub fn model_dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            feature: self.feature_dim,
            language: self.language_dim,
            time: self.time_dim,
            mask: self.mask_dim,
            encoder_hidden: self.encoder_hidden,
            hidden: self.hidden,
            vocab,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Learning rate after `step` optimizer steps.
    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr * self.lr_decay.powi((step / self.decay_every) as i32)
    }

    /// All keys with their values, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("profile", self.profile.name().to_string()),
            ("dims.feature", self.feature_dim.to_string()),
            ("dims.language", self.language_dim.to_string()),
            ("dims.time", self.time_dim.to_string()),
            ("dims.mask", self.mask_dim.to_string()),
            ("net.encoder_hidden", self.encoder_hidden.to_string()),
            ("net.hidden", self.hidden.to_string()),
            ("embed.time_scale", self.time_scale.to_string()),
            ("preprocess.points", self.points.to_string()),
            ("preprocess.gripper_points", self.gripper_points.to_string()),
            ("preprocess.voxel_cell", self.voxel_cell.to_string()),
            ("flow.steps", self.flow_steps.to_string()),
            ("flow.sigma_scale", self.sigma_scale.to_string()),
            ("optim.lr", self.lr.to_string()),
            ("optim.beta1", self.beta1.to_string()),
            ("optim.beta2", self.beta2.to_string()),
            ("optim.eps", self.eps.to_string()),
            ("optim.decay", self.lr_decay.to_string()),
            ("optim.decay_every", self.decay_every.to_string()),
            ("train.steps", self.train_steps.to_string()),
            ("train.batch", self.batch.to_string()),
            ("train.augment", self.augment.to_string()),
            ("train.seed", self.train_seed.to_string()),
            ("train.log_every", self.log_every.to_string()),
            ("eval.runs", self.eval_runs.to_string()),
            ("eval.seed", self.eval_seed.to_string()),
            ("paths.data", self.data_path.clone()),
            ("paths.bundle", self.bundle_path.clone()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Stable digest of the full configuration, embedded in reports.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(&digest[..8])
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
        }
        match key {
            "profile" => self.profile = Profile::parse(value)?,
            "dims.feature" => self.feature_dim = num(key, value)?,
            "dims.language" => self.language_dim = num(key, value)?,
            "dims.time" => self.time_dim = num(key, value)?,
            "dims.mask" => self.mask_dim = num(key, value)?,
            "net.encoder_hidden" => self.encoder_hidden = num(key, value)?,
            "net.hidden" => self.hidden = num(key, value)?,
            "embed.time_scale" => self.time_scale = num(key, value)?,
            "preprocess.points" => self.points = num(key, value)?,
            "preprocess.gripper_points" => self.gripper_points = num(key, value)?,
            "preprocess.voxel_cell" => self.voxel_cell = num(key, value)?,
            "flow.steps" => self.flow_steps = num(key, value)?,
            "flow.sigma_scale" => self.sigma_scale = num(key, value)?,
            "optim.lr" => self.lr = num(key, value)?,
            "optim.beta1" => self.beta1 = num(key, value)?,
            "optim.beta2" => self.beta2 = num(key, value)?,
            "optim.eps" => self.eps = num(key, value)?,
            "optim.decay" => self.lr_decay = num(key, value)?,
            "optim.decay_every" => self.decay_every = num(key, value)?,
            "train.steps" => self.train_steps = num(key, value)?,
            "train.batch" => self.batch = num(key, value)?,
            "train.augment" => self.augment = num(key, value)?,
            "train.seed" => self.train_seed = num(key, value)?,
            "train.log_every" => self.log_every = num(key, value)?,
            "eval.runs" => self.eval_runs = num(key, value)?,
            "eval.seed" => self.eval_seed = num(key, value)?,
            "paths.data" => self.data_path = value.to_string(),
            "paths.bundle" => self.bundle_path = value.to_string(),
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dims.feature", self.feature_dim),
            ("dims.language", self.language_dim),
            ("dims.time", self.time_dim),
            ("dims.mask", self.mask_dim),
            ("net.encoder_hidden", self.encoder_hidden),
            ("net.hidden", self.hidden),
            ("preprocess.points", self.points),
            ("preprocess.gripper_points", self.gripper_points),
            ("flow.steps", self.flow_steps),
            ("optim.decay_every", self.decay_every),
            ("train.batch", self.batch),
            ("train.log_every", self.log_every),
            ("eval.runs", self.eval_runs),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        for (key, v) in [("dims.time", self.time_dim), ("dims.mask", self.mask_dim)] {
            if v % 2 != 0 {
                return Err(Error::config(key, "must be even"));
            }
        }
        let reals = [
            ("embed.time_scale", self.time_scale),
            ("flow.sigma_scale", self.sigma_scale),
            ("optim.lr", self.lr),
            ("optim.eps", self.eps),
            ("optim.decay", self.lr_decay),
        ];
        for (key, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        if !(self.voxel_cell.is_finite() && self.voxel_cell >= 0.0) {
            return Err(Error::config("preprocess.voxel_cell", "must be zero (disabled) or positive"));
        }
        for (key, v) in [("optim.beta1", self.beta1), ("optim.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(key, "must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split(" #").next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if pairs.iter().any(|(k, _)| k == key) {
                return Err(Error::config(key, "repeated key"));
            }
            pairs.push((key.to_string(), value.to_string()));
        }
        let profile = match pairs.iter().find(|(k, _)| k == "profile") {
            Some((_, v)) => Profile::parse(v)?,
            None => Profile::Desk,
        };
        let mut config = Self::for_profile(profile);
        for (k, v) in &pairs {
            config.set(k, v)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config { key, msg } => Error::Config {
                key,
                msg: format!("{msg} (in {})", path.display()),
            },
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}
