//! Run configuration: defaults, a line-based `key = value` file, and
//! overrides from command-line flags.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use inpaint_dpo_core::diffusion::{NoiseSchedule, DEFAULT_BETA_START, DEFAULT_STEPS};
use inpaint_dpo_core::losses::{LossWeights, Variant};
use inpaint_dpo_core::nn::{Architecture, ModelSpec};
use inpaint_dpo_core::scene::SceneConfig;
use inpaint_dpo_core::trainer::{digest_u64, CropConfig, TrainConfig};

use crate::error::{LabError, Result};

/// Optimizer settings of one training phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

/// Everything a desk-scale experiment depends on besides the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct LabConfig {
    pub scene: SceneConfig,
    pub architecture: Architecture,
    pub hidden_channels: usize,
    pub hidden_layers: usize,
    pub time_embed_dim: usize,
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Pretraining scenes have ground-line offsets uniform in
    /// `[-pretrain_offset, pretrain_offset]`.
    pub pretrain_scenes: usize,
    pub pretrain_offset: i32,
    pub pairs: usize,
    pub winwin_pairs: usize,
    pub pretrain: PhaseConfig,
    pub dpo: PhaseConfig,
    pub weights: LossWeights,
    pub crop: CropConfig,
    pub eval_samples: usize,
    pub segment_threshold: f64,
    pub elo_rounds: usize,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            architecture: Architecture::Convolutional,
            hidden_channels: 16,
            hidden_layers: 2,
            time_embed_dim: 16,
            schedule_steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            // A short chain needs a larger final noise level to reach N(0, I).
            beta_end: 0.2,
            pretrain_scenes: 256,
            pretrain_offset: 6,
            pairs: 128,
            winwin_pairs: 64,
            pretrain: PhaseConfig {
                learning_rate: 2e-3,
                warmup_steps: 100,
                steps: 2000,
                batch_size: 4,
                weight_decay: 1e-2,
                grad_clip: 10.0,
            },
            dpo: PhaseConfig {
                learning_rate: 1e-3,
                warmup_steps: 50,
                steps: 500,
                batch_size: 2,
                weight_decay: 1e-2,
                grad_clip: 10.0,
            },
            weights: LossWeights::default(),
            crop: CropConfig::default(),
            eval_samples: 64,
            segment_threshold: inpaint_dpo_core::metrics::DEFAULT_SEGMENT_THRESHOLD,
            elo_rounds: 2000,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| LabError::Config(format!("cannot parse `{value}` for key `{key}`")))
}

impl LabConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "height" => self.scene.height = parse(key, v)?,
            "width" => self.scene.width = parse(key, v)?,
            "classes" => self.scene.num_classes = parse(key, v)?,
            "subject_min" => self.scene.subject_min = parse(key, v)?,
            "subject_max" => self.scene.subject_max = parse(key, v)?,
            "lose_offset_min" => self.scene.lose_offset_min = parse(key, v)?,
            "lose_offset_max" => self.scene.lose_offset_max = parse(key, v)?,
            "architecture" => {
                self.architecture = match v {
                    "pointwise" => Architecture::Pointwise,
                    "convolutional" | "conv" => Architecture::Convolutional,
                    _ => return Err(LabError::Config(format!("unknown architecture `{v}`"))),
                }
            }
            "hidden_channels" => self.hidden_channels = parse(key, v)?,
            "hidden_layers" => self.hidden_layers = parse(key, v)?,
            "time_embed_dim" => self.time_embed_dim = parse(key, v)?,
            "schedule_steps" => self.schedule_steps = parse(key, v)?,
            "beta_start" => self.beta_start = parse(key, v)?,
            "beta_end" => self.beta_end = parse(key, v)?,
            "pretrain_scenes" => self.pretrain_scenes = parse(key, v)?,
            "pretrain_offset" => self.pretrain_offset = parse(key, v)?,
            "pairs" => self.pairs = parse(key, v)?,
            "winwin_pairs" => self.winwin_pairs = parse(key, v)?,
            "pretrain_lr" => self.pretrain.learning_rate = parse(key, v)?,
            "pretrain_warmup" => self.pretrain.warmup_steps = parse(key, v)?,
            "pretrain_steps" => self.pretrain.steps = parse(key, v)?,
            "pretrain_batch" => self.pretrain.batch_size = parse(key, v)?,
            "lr" => self.dpo.learning_rate = parse(key, v)?,
            "warmup" => self.dpo.warmup_steps = parse(key, v)?,
            "steps" => self.dpo.steps = parse(key, v)?,
            "batch_size" => self.dpo.batch_size = parse(key, v)?,
            "weight_decay" => {
                let wd = parse(key, v)?;
                self.pretrain.weight_decay = wd;
                self.dpo.weight_decay = wd;
            }
            "grad_clip" => {
                let c = parse(key, v)?;
                self.pretrain.grad_clip = c;
                self.dpo.grad_clip = c;
            }
            "beta" => self.weights.beta = parse(key, v)?,
            "omega" => self.weights.omega = parse(key, v)?,
            "lambda" => self.weights.lambda = parse(key, v)?,
            "gamma" => self.weights.gamma = parse(key, v)?,
            "mu" => self.weights.mu = parse(key, v)?,
            "crop_height" => self.crop.height = parse(key, v)?,
            "crop_width" => self.crop.width = parse(key, v)?,
            "min_offset" => self.crop.min_offset = parse(key, v)?,
            "eval_samples" => self.eval_samples = parse(key, v)?,
            "segment_threshold" => self.segment_threshold = parse(key, v)?,
            "elo_rounds" => self.elo_rounds = parse(key, v)?,
            other => return Err(LabError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LabError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            architecture: self.architecture,
            in_channels: 3,
            hidden_channels: self.hidden_channels,
            hidden_layers: self.hidden_layers,
            time_embed_dim: self.time_embed_dim,
            num_classes: self.scene.num_classes,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::linear(self.schedule_steps, self.beta_start, self.beta_end)?)
    }

    fn phase(&self, p: &PhaseConfig, seed: u64, variant: Variant) -> TrainConfig {
        TrainConfig {
            learning_rate: p.learning_rate,
            warmup_steps: p.warmup_steps,
            batch_size: p.batch_size,
            weight_decay: p.weight_decay,
            seed,
            variant,
            weights: self.weights,
            max_steps: Some(p.steps),
            crop: self.crop,
            grad_clip: p.grad_clip,
            ..TrainConfig::default()
        }
    }

    pub fn pretrain_config(&self, seed: u64) -> TrainConfig {
        // The variant plays no part in pretraining; fix it so the hash does
        // not depend on it.
        self.phase(&self.pretrain, seed, Variant::StandardDpo)
    }

    pub fn dpo_config(&self, seed: u64, variant: Variant) -> TrainConfig {
        self.phase(&self.dpo, seed, variant)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_spec().validate()?;
        self.schedule()?;
        self.pretrain_config(0).validate()?;
        self.dpo_config(0, Variant::Full).validate()?;
        if self.pairs == 0 || self.pretrain_scenes == 0 {
            return Err(LabError::Config("pairs and pretrain_scenes must be positive".into()));
        }
        if self.pretrain_offset < 0 {
            return Err(LabError::Config("pretrain_offset must be non-negative".into()));
        }
        Ok(())
    }

    /// Every setting as `key = value` lines, in a fixed order. Feeding the
    /// output back through [`LabConfig::apply_text`] reproduces the config.
    pub fn canonical(&self) -> String {
        let arch = match self.architecture {
            Architecture::Pointwise => "pointwise",
            Architecture::Convolutional => "convolutional",
        };
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("height", self.scene.height.to_string());
        line("width", self.scene.width.to_string());
        line("classes", self.scene.num_classes.to_string());
        line("subject_min", self.scene.subject_min.to_string());
        line("subject_max", self.scene.subject_max.to_string());
        line("lose_offset_min", self.scene.lose_offset_min.to_string());
        line("lose_offset_max", self.scene.lose_offset_max.to_string());
        line("architecture", arch.to_string());
        line("hidden_channels", self.hidden_channels.to_string());
        line("hidden_layers", self.hidden_layers.to_string());
        line("time_embed_dim", self.time_embed_dim.to_string());
        line("schedule_steps", self.schedule_steps.to_string());
        line("beta_start", format!("{:?}", self.beta_start));
        line("beta_end", format!("{:?}", self.beta_end));
        line("pretrain_scenes", self.pretrain_scenes.to_string());
        line("pretrain_offset", self.pretrain_offset.to_string());
        line("pairs", self.pairs.to_string());
        line("winwin_pairs", self.winwin_pairs.to_string());
        line("pretrain_lr", format!("{:?}", self.pretrain.learning_rate));
        line("pretrain_warmup", self.pretrain.warmup_steps.to_string());
        line("pretrain_steps", self.pretrain.steps.to_string());
        line("pretrain_batch", self.pretrain.batch_size.to_string());
        line("lr", format!("{:?}", self.dpo.learning_rate));
        line("warmup", self.dpo.warmup_steps.to_string());
        line("steps", self.dpo.steps.to_string());
        line("batch_size", self.dpo.batch_size.to_string());
        line("weight_decay", format!("{:?}", self.dpo.weight_decay));
        line("grad_clip", format!("{:?}", self.dpo.grad_clip));
        line("beta", format!("{:?}", self.weights.beta));
        line("omega", format!("{:?}", self.weights.omega));
        line("lambda", format!("{:?}", self.weights.lambda));
        line("gamma", format!("{:?}", self.weights.gamma));
        line("mu", format!("{:?}", self.weights.mu));
        line("crop_height", self.crop.height.to_string());
        line("crop_width", self.crop.width.to_string());
        line("min_offset", self.crop.min_offset.to_string());
        line("eval_samples", self.eval_samples.to_string());
        line("segment_threshold", format!("{:?}", self.segment_threshold));
        line("elo_rounds", self.elo_rounds.to_string());
        s
    }

    pub fn hash(&self) -> u64 {
        digest_u64(self.canonical().as_bytes())
    }
}
