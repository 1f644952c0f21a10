//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! generator keyed by a user seed and a stream id, so records and steps can
//! be generated independently of one another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::image::Image;

pub type Rng = ChaCha8Rng;

/// Stream tags keep unrelated consumers of one seed apart.
pub mod stream {
    pub const INIT: u64 = 1 << 40;
    pub const SCENE: u64 = 2 << 40;
    pub const PAIR: u64 = 3 << 40;
    pub const CROP: u64 = 4 << 40;
    pub const SAMPLE: u64 = 5 << 40;
    pub const PRETRAIN: u64 = 6 << 40;
    pub const DPO: u64 = 7 << 40;
    pub const EVAL: u64 = 8 << 40;
    pub const MATCH: u64 = 9 << 40;
    pub const CONFLICT: u64 = 10 << 40;
}

/// Generator for `(seed, stream)`.
pub fn derive(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Image of i.i.d. standard normal draws.
pub fn normal_image(rng: &mut Rng, height: usize, width: usize) -> Image {
    let data = (0..height * width).map(|_| standard_normal(rng)).collect();
    Image::from_vec(height, width, data).expect("length matches")
}
