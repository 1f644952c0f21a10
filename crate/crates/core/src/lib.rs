//! Preference optimization for foreground-conditioned diffusion inpainting,
//! at desk scale.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every numerical
//! piece of the laboratory:
//!
//! | module | contents |
//! |--------|----------|
//! | [`nn`] | the toy denoiser, its parameter layout and exact backprop |
//! | [`diffusion`] | noise schedule, forward noising, input assembly, ancestral sampling |
//! | [`scene`] | procedural scenes, the ground-line rationality oracle, pair construction, cropping |
//! | [`losses`] | implicit rewards, DPO, masked DPO, inpainting, CAPO, SCPO and the combined objective |
//! | [`trainer`] | AdamW with warmup, pretraining and preference fine-tuning |
//! | [`metrics`] | OER, context coherence, foreground fidelity, gradient conflict, Elo |
//!
//! File formats, the experiment harness and the command line live in the
//! `inpaint-dpo` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod diffusion;
mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{Image, Mask, Rect};
