//! Pretraining and preference fine-tuning.
//!
//! Both phases use AdamW with a linear warmup to a constant learning rate
//! and clip the gradient norm at [`TrainConfig::grad_clip`]. Every random
//! draw of step `s` comes from a generator keyed by `(seed, s)`, so a run is
//! a pure function of its config, seed and data.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng as _, RngCore};
use sha2::{Digest, Sha256};

use crate::diffusion::{add_noise, assemble_input, mean_squared_error, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{BatchItem, CropDraw, LossBreakdown, LossWeights, PreferenceModels, Variant, WinWinDraw};
use crate::nn::{init_params, loss_and_grad, GradVector, ModelSpec, ParamVector, Query};
use crate::rng::{self, stream};
use crate::scene::{differentiated_crop, PreferencePair, Scene, WinWinPair};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropConfig {
    pub height: usize,
    pub width: usize,
    pub min_offset: usize,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            height: 24,
            width: 24,
            min_offset: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub variant: Variant,
    pub weights: LossWeights,
    /// Overrides `epochs` when set.
    pub max_steps: Option<usize>,
    pub crop: CropConfig,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            warmup_steps: 1000,
            epochs: 5,
            batch_size: 2,
            weight_decay: 1e-2,
            seed: 0,
            variant: Variant::Full,
            weights: LossWeights::default(),
            max_steps: None,
            crop: CropConfig::default(),
            grad_clip: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("weight decay and grad clip must be non-negative/positive".into()));
        }
        self.weights.validate()
    }

    /// `lr · min(1, step / warmup)` for 1-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * (step as f64 / self.warmup_steps as f64).min(1.0)
        }
    }

    pub fn total_steps(&self, dataset_len: usize) -> usize {
        self.max_steps
            .unwrap_or_else(|| self.epochs * dataset_len.div_ceil(self.batch_size))
    }

    /// Canonical text form; the config hash is computed over it.
    pub fn canonical(&self) -> String {
        let w = &self.weights;
        format!(
            "lr={:?};warmup={};epochs={};batch={};wd={:?};seed={};variant={};beta={:?};omega={:?};lambda={:?};gamma={:?};mu={:?};steps={:?};crop={}x{}+{};clip={:?}",
            self.learning_rate,
            self.warmup_steps,
            self.epochs,
            self.batch_size,
            self.weight_decay,
            self.seed,
            self.variant.name(),
            w.beta,
            w.omega,
            w.lambda,
            w.gamma,
            w.mu,
            self.max_steps,
            self.crop.height,
            self.crop.width,
            self.crop.min_offset,
            self.grad_clip,
        )
    }

    pub fn hash(&self) -> u64 {
        digest_u64(self.canonical().as_bytes())
    }
}

/// First eight bytes of SHA-256, little-endian.
pub fn digest_u64(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    u64::from_le_bytes(b)
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamW {
    pub fn new(len: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: alloc::vec![0.0; len],
            v: alloc::vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = (*m / bc1) / (libm::sqrt(*v / bc2) + self.eps);
            *p -= lr * (update + self.weight_decay * *p);
        }
    }
}

/// Model, optimizer state and the hash of the config that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ParamVector,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step: u64,
    pub config_hash: u64,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        let n = self.spec.param_count()?;
        if self.params.len() != n || self.adam_m.len() != n || self.adam_v.len() != n {
            return Err(Error::Shape(format!(
                "checkpoint arrays do not match the spec's {n} parameters"
            )));
        }
        Ok(())
    }

    fn optimizer(&self, cfg: &TrainConfig) -> AdamW {
        let mut opt = AdamW::new(self.params.len(), cfg.weight_decay);
        if self.config_hash == cfg.hash() {
            opt.m = self.adam_m.clone();
            opt.v = self.adam_v.clone();
            opt.t = self.step;
        }
        opt
    }
}

/// Frozen copy of a checkpoint's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenReference {
    params: ParamVector,
    digest: u64,
}

impl FrozenReference {
    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Hash of the parameter bytes, fixed at snapshot time.
    pub fn digest(&self) -> u64 {
        self.digest
    }

    /// Recomputes the hash; equal to [`FrozenReference::digest`] as long as
    /// nothing has touched the parameters.
    pub fn recompute_digest(&self) -> u64 {
        params_digest(&self.params)
    }
}

pub fn params_digest(params: &ParamVector) -> u64 {
    let bytes: Vec<u8> = params.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    digest_u64(&bytes)
}

pub fn snapshot_reference(ckpt: &Checkpoint) -> FrozenReference {
    let params = ckpt.params.clone();
    let digest = params_digest(&params);
    FrozenReference { params, digest }
}

/// Per-step training record.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub terms: BTreeMap<&'static str, f64>,
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub entries: Vec<HistoryEntry>,
    pub clip_events: usize,
}

impl History {
    pub fn last_total(&self) -> Option<f64> {
        self.entries.last().map(|e| e.total)
    }

    /// `(step, term, value)` rows; `total` first, then each term.
    pub fn rows(&self) -> Vec<(usize, &'static str, f64)> {
        let mut rows = Vec::new();
        for e in &self.entries {
            rows.push((e.step, "total", e.total));
            for (k, v) in &e.terms {
                rows.push((e.step, *k, *v));
            }
        }
        rows
    }
}

fn clip(grad: &mut GradVector, max_norm: f64) -> (f64, bool) {
    let norm = grad.norm();
    if norm > max_norm {
        grad.scale(max_norm / norm);
        (norm, true)
    } else {
        (norm, false)
    }
}

/// Random scene indices and `(t, ε)` for one pretraining step.
pub fn draw_pretrain_batch(
    scenes: &[Scene],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    step: usize,
) -> Vec<(usize, usize, Image)> {
    let mut r = rng::derive(cfg.seed, stream::PRETRAIN + step as u64);
    (0..cfg.batch_size)
        .map(|_| {
            let idx = r.random_range(0..scenes.len());
            let t = r.random_range(1..=schedule.steps());
            let (h, w) = scenes[idx].dims();
            (idx, t, rng::normal_image(&mut r, h, w))
        })
        .collect()
}

/// Full-image ε-MSE training from freshly initialized parameters.
pub fn pretrain(
    spec: &ModelSpec,
    scenes: &[Scene],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, History)> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Config("pretraining needs at least one scene".into()));
    }
    let mut params = init_params(spec, cfg.seed)?;
    let mut opt = AdamW::new(params.len(), cfg.weight_decay);
    let mut history = History::default();
    let steps = cfg.total_steps(scenes.len());
    for step in 1..=steps {
        let draws = draw_pretrain_batch(scenes, schedule, cfg, step);
        let mut inputs = Vec::with_capacity(draws.len());
        for (idx, t, eps) in &draws {
            let state = add_noise(&scenes[*idx].image, eps, *t, schedule)?;
            inputs.push(assemble_input(&scenes[*idx], &state)?);
        }
        let queries: Vec<Query<'_>> = draws
            .iter()
            .zip(&inputs)
            .map(|((idx, t, _), input)| Query {
                input,
                t: crate::nn::Timestep::new(*t, schedule.steps()),
                class: scenes[*idx].class,
            })
            .collect();
        let n = draws.len() as f64;
        let result = loss_and_grad(spec, &params, &queries, |preds| {
            let mut value = 0.0;
            let mut grads = Vec::with_capacity(preds.len());
            for ((_, _, eps), p) in draws.iter().zip(preds) {
                value += mean_squared_error(eps, p) / n;
                let scale = -2.0 / (p.len() as f64 * n);
                let g = eps.data().iter().zip(p.data()).map(|(e, pv)| scale * (e - pv)).collect();
                grads.push(Image::from_vec(p.height(), p.width(), g)?);
            }
            Ok((value, grads))
        });
        let (value, mut grad) = result.map_err(|e| match e {
            Error::Numerics(m) => Error::Training(format!("step {step}: {m}")),
            other => other,
        })?;
        let lr = cfg.lr_at(step);
        let (grad_norm, clipped) = clip(&mut grad, cfg.grad_clip);
        history.clip_events += clipped as usize;
        opt.step(params.as_mut_slice(), grad.as_slice(), lr);
        let mut terms = BTreeMap::new();
        terms.insert("pretrain", value);
        history.entries.push(HistoryEntry {
            step,
            lr,
            total: value,
            terms,
            grad_norm,
            clipped,
        });
    }
    Ok((
        Checkpoint {
            spec: *spec,
            params,
            adam_m: opt.m,
            adam_v: opt.v,
            step: opt.t,
            config_hash: cfg.hash(),
        },
        history,
    ))
}

/// Win/lose and win/win pairs for the preference phase.
#[derive(Clone, Copy, Debug)]
pub struct PreferenceData<'a> {
    pub win_lose: &'a [PreferencePair],
    pub win_win: &'a [WinWinPair],
}

impl PreferenceData<'_> {
    pub fn check(&self, variant: Variant) -> Result<()> {
        if self.win_lose.is_empty() {
            return Err(Error::Config("no win/lose pairs supplied".into()));
        }
        if variant.uses_scpo() && self.win_win.is_empty() {
            return Err(Error::Config(format!(
                "variant {} needs a win/win pack",
                variant.name()
            )));
        }
        Ok(())
    }
}

/// The batch of step `step`: pairs, shared `(t, ε)`, crop draws and win/win
/// draws. Win/lose pairs, timesteps, noise and crops use one stream for
/// every variant, so variants trained from one seed see the same pairs.
pub fn draw_preference_batch(
    data: &PreferenceData<'_>,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    step: usize,
) -> Result<Vec<BatchItem>> {
    let mut r = rng::derive(cfg.seed, stream::DPO + step as u64);
    let mut rw = rng::derive(cfg.seed, stream::DPO + (1 << 32) + step as u64);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let pair = &data.win_lose[r.random_range(0..data.win_lose.len())];
        let t = r.random_range(1..=schedule.steps());
        let (h, w) = pair.win.dims();
        let eps = rng::normal_image(&mut r, h, w);
        let crop_seed = r.next_u64();
        let eps_win = rng::normal_image(&mut r, cfg.crop.height, cfg.crop.width);
        let eps_lose = rng::normal_image(&mut r, cfg.crop.height, cfg.crop.width);
        let crop = if cfg.variant.uses_capo() {
            match differentiated_crop(pair, crop_seed, cfg.crop.height, cfg.crop.width, cfg.crop.min_offset) {
                Ok(cp) => Some(CropDraw {
                    pair: cp,
                    eps_win,
                    eps_lose,
                }),
                // Subjects wedged into a corner admit no shifted windows.
                Err(Error::NoFeasibleOffset { .. }) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let winwin = if cfg.variant.uses_scpo() {
            let ww = &data.win_win[rw.random_range(0..data.win_win.len())];
            let tw = rw.random_range(1..=schedule.steps());
            let (h, w) = ww.first.dims();
            Some(WinWinDraw {
                pair: ww.clone(),
                t: tw,
                eps: rng::normal_image(&mut rw, h, w),
            })
        } else {
            None
        };
        batch.push(BatchItem {
            pair: pair.clone(),
            t,
            eps,
            crop,
            winwin,
        });
    }
    Ok(batch)
}

fn breakdown_terms(b: &LossBreakdown) -> BTreeMap<&'static str, f64> {
    b.terms.iter().map(|(k, v)| (k.name(), *v)).collect()
}

/// Preference fine-tuning of `ckpt` against a frozen reference.
///
/// Optimizer moments carry over only when `ckpt` was written under the same
/// config hash (a resumed run); otherwise the phase starts a fresh optimizer.
pub fn dpo_train(
    ckpt: &Checkpoint,
    reference: &FrozenReference,
    data: &PreferenceData<'_>,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, History)> {
    cfg.validate()?;
    ckpt.validate()?;
    data.check(cfg.variant)?;
    if reference.params().len() != ckpt.params.len() {
        return Err(Error::Shape("reference and policy differ in size".into()));
    }
    let spec = ckpt.spec;
    let mut params = ckpt.params.clone();
    let mut opt = ckpt.optimizer(cfg);
    let first = opt.t as usize + 1;
    let steps = cfg.total_steps(data.win_lose.len());
    let mut history = History::default();
    for step in first..=steps {
        let batch = draw_preference_batch(data, schedule, cfg, step)?;
        let models = PreferenceModels::new(&spec, &params, reference.params(), schedule);
        let objective = models.objective(&batch, cfg.variant)?;
        let (breakdown, mut grad) = objective
            .value_and_grad(&spec, &params, &cfg.weights)
            .map_err(|e| match e {
                Error::Numerics(m) => Error::Training(format!("step {step}: {m}")),
                other => other,
            })?;
        let lr = cfg.lr_at(step);
        let (grad_norm, clipped) = clip(&mut grad, cfg.grad_clip);
        history.clip_events += clipped as usize;
        opt.step(params.as_mut_slice(), grad.as_slice(), lr);
        history.entries.push(HistoryEntry {
            step,
            lr,
            total: breakdown.total,
            terms: breakdown_terms(&breakdown),
            grad_norm,
            clipped,
        });
    }
    Ok((
        Checkpoint {
            spec,
            params,
            adam_m: opt.m,
            adam_v: opt.v,
            step: opt.t,
            config_hash: cfg.hash(),
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_is_linear_then_flat() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(1), 1e-4 * (1.0 / 1000.0));
        assert_eq!(cfg.lr_at(500), 1e-4 * 0.5);
        assert_eq!(cfg.lr_at(1000), 1e-4);
        assert_eq!(cfg.lr_at(5000), 1e-4);
        let flat = TrainConfig {
            warmup_steps: 0,
            ..TrainConfig::default()
        };
        assert_eq!(flat.lr_at(1), 1e-4);
    }

    #[test]
    fn adamw_minimizes_a_parabola() {
        let mut theta = [1.0];
        let mut opt = AdamW::new(1, 0.0);
        for _ in 0..500 {
            let g = [2.0 * theta[0]];
            opt.step(&mut theta, &g, 0.01);
        }
        assert!(theta[0].abs() < 1e-3, "theta = {}", theta[0]);
    }

    #[test]
    fn config_hash_tracks_every_field() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.weights.mu = 0.25;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = TrainConfig {
            learning_rate: f64::NAN,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
