//! Forward noising, denoiser-input assembly and ancestral sampling.
//!
//! Pixel space doubles as the latent space, so masks need no resampling
//! before they are applied to `z_t`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::nn::{Denoiser, DenoiserInput, ModelSpec, ParamVector, Query, Timestep};
use crate::rng::{self, stream};
use crate::scene::Scene;

/// Linear β schedule and its cumulative products ᾱ_t = Π_{s≤t}(1 − β_s).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Schedule("at least one step required".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Schedule(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    /// T = 100, β ∈ [1e-4, 0.02].
    pub fn default_linear() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// β_t for `t ∈ [1, T]`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// ᾱ_t for `t ∈ [1, T]`; ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn timestep(&self, t: usize) -> Result<Timestep> {
        self.check(t)?;
        Ok(Timestep::new(t, self.steps()))
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Schedule(format!(
                "timestep {t} outside [1, {}]",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// `z_t` together with the timestep and noise draw that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyState {
    pub z_t: Image,
    pub t: usize,
    pub eps: Image,
}

/// `z_t = √ᾱ_t · x0 + √(1 − ᾱ_t) · ε`.
pub fn add_noise(x0: &Image, eps: &Image, t: usize, schedule: &NoiseSchedule) -> Result<NoisyState> {
    eps.ensure_dims(x0.dims(), "noise")?;
    schedule.check(t)?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (libm::sqrt(ab), libm::sqrt(1.0 - ab));
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(x, e)| a * x + b * e)
        .collect();
    Ok(NoisyState {
        z_t: Image::from_vec(x0.height(), x0.width(), data)?,
        t,
        eps: eps.clone(),
    })
}

/// What the sampler is allowed to see of a scene: the foreground pixels,
/// the mask and the class. Background pixels are zeroed on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    pub foreground: Image,
    pub mask: Mask,
    pub class: u32,
}

impl Conditioning {
    pub fn new(image: &Image, mask: &Mask, class: u32) -> Result<Self> {
        mask.ensure_dims(image.dims(), "mask")?;
        let foreground = Image::from_vec(
            image.height(),
            image.width(),
            image
                .data()
                .iter()
                .zip(mask.data())
                .map(|(v, &m)| if m == 1 { 0.0 } else { *v })
                .collect(),
        )?;
        Ok(Self {
            foreground,
            mask: mask.clone(),
            class,
        })
    }

    pub fn from_scene(scene: &Scene) -> Self {
        Self::new(&scene.image, &scene.mask, scene.class).expect("scene dims are consistent")
    }

    pub fn dims(&self) -> (usize, usize) {
        self.foreground.dims()
    }

    /// Foreground indicator `1 − m`.
    pub fn indicator(&self) -> Image {
        let data = self.mask.data().iter().map(|&m| 1.0 - m as f64).collect();
        Image::from_vec(self.mask.height(), self.mask.width(), data).expect("mask dims")
    }

    /// Channel stack `[z_t, x0 ⊙ (1 − m), 1 − m]`.
    pub fn input_for(&self, z_t: &Image) -> Result<DenoiserInput> {
        z_t.ensure_dims(self.dims(), "z_t")?;
        DenoiserInput::from_planes(&[z_t, &self.foreground, &self.indicator()])
    }
}

/// Denoiser input for a training scene at a noisy state.
pub fn assemble_input(scene: &Scene, state: &NoisyState) -> Result<DenoiserInput> {
    state.z_t.ensure_dims(scene.image.dims(), "z_t")?;
    scene.mask.ensure_dims(scene.image.dims(), "mask")?;
    Conditioning::from_scene(scene).input_for(&state.z_t)
}

/// Ancestral DDPM sampling from `x_T ~ N(0, I)` down to `x_0`, using the
/// posterior mean
/// `(x_t − β_t/√(1−ᾱ_t) · ε_θ) / √(1−β_t)` and variance
/// `β̃_t = β_t (1−ᾱ_{t−1})/(1−ᾱ_t)` for `t > 1`.
pub fn sample(
    spec: &ModelSpec,
    params: &ParamVector,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Image> {
    let model = Denoiser::new(spec, params)?;
    let (h, w) = cond.dims();
    let mut r = rng::derive(seed, stream::SAMPLE);
    let mut x = rng::normal_image(&mut r, h, w);
    let indicator = cond.indicator();
    for t in (1..=schedule.steps()).rev() {
        let input = DenoiserInput::from_planes(&[&x, &cond.foreground, &indicator])?;
        let eps = model.predict(Query {
            input: &input,
            t: Timestep::new(t, schedule.steps()),
            class: cond.class,
        })?;
        let beta = schedule.beta(t);
        let ab = schedule.alpha_bar(t);
        let coef = beta / libm::sqrt(1.0 - ab);
        let scale = 1.0 / libm::sqrt(1.0 - beta);
        let sigma = if t > 1 {
            libm::sqrt(beta * (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - ab))
        } else {
            0.0
        };
        for (xv, e) in x.data_mut().iter_mut().zip(eps.data()) {
            *xv = scale * (*xv - coef * e);
        }
        if t > 1 {
            for xv in x.data_mut() {
                *xv += sigma * rng::standard_normal(&mut r);
            }
        }
        if !x.is_finite() {
            return Err(Error::Numerics(format!("sample diverged at t = {t}")));
        }
    }
    Ok(x)
}

/// Mean squared ε-prediction error over every pixel.
pub fn pretrain_loss(
    spec: &ModelSpec,
    params: &ParamVector,
    scene: &Scene,
    state: &NoisyState,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    let input = assemble_input(scene, state)?;
    let pred = Denoiser::new(spec, params)?.predict(Query {
        input: &input,
        t: schedule.timestep(state.t)?,
        class: scene.class,
    })?;
    Ok(mean_squared_error(&state.eps, &pred))
}

pub(crate) fn mean_squared_error(target: &Image, pred: &Image) -> f64 {
    let n = target.len() as f64;
    target
        .data()
        .iter()
        .zip(pred.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}
