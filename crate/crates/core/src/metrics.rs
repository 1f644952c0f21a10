//! Evaluation metrics.
//!
//! Segmentation here is a threshold plus largest connected component (toy
//! subjects are the only bright objects), and the context-coherence
//! embedding is a fixed ten-entry descriptor instead of a learned feature
//! extractor. Both keep the algebra of the metrics they feed.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use crate::diffusion::{sample, Conditioning, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::losses::{LossTerm, LossWeights, PreferenceModels, Region, Term};
use crate::losses::Objective;
use crate::nn::{Denoiser, GradVector, ModelSpec, ParamVector};
use crate::rng::{self, stream};
use crate::scene::{gen_scene, rationality_score, PreferencePair, Scene, SceneConfig};

pub const DEFAULT_SEGMENT_THRESHOLD: f64 = 0.7;
pub const COHERENCE_DILATION: usize = 4;
pub const ELO_K: f64 = 32.0;
pub const ELO_START: f64 = 1000.0;

/// Pixels above `threshold`, reduced to their largest 4-connected
/// component (the first one in raster order on ties). 1 marks the subject.
pub fn segment_subject(image: &Image, threshold: f64) -> Mask {
    let (h, w) = image.dims();
    let mut label = vec![usize::MAX; h * w];
    let mut best: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if label[start] != usize::MAX || image.data()[start] <= threshold {
            continue;
        }
        let mut component = Vec::new();
        label[start] = start;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            component.push(p);
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if label[q] == usize::MAX && image.data()[q] > threshold {
                    label[q] = start;
                    queue.push_back(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        if component.len() > best.len() {
            best = component;
        }
    }
    let mut mask = Mask::filled(h, w, false);
    for p in best {
        mask.set(p / w, p % w, true);
    }
    mask
}

/// Detected subject mask `M` and ground-truth subject mask `M_o`, both with
/// 1 marking the subject.
#[derive(Clone, Debug, PartialEq)]
pub struct SegMaskPair {
    pub detected: Mask,
    pub truth: Mask,
}

impl SegMaskPair {
    /// Segments `generated` and takes `M_o = 1 − m` from the scene mask.
    pub fn from_generated(generated: &Image, scene_mask: &Mask, threshold: f64) -> Self {
        Self {
            detected: segment_subject(generated, threshold),
            truth: scene_mask.complement(),
        }
    }
}

/// Object extension ratio `Σ ReLU(M − M_o) / Σ M_o`.
pub fn oer(pair: &SegMaskPair) -> Result<f64> {
    pair.detected.ensure_dims(pair.truth.dims(), "detected mask")?;
    let truth = pair.truth.count_ones();
    if truth == 0 {
        return Err(Error::DegenerateMask("ground-truth subject mask is empty".into()));
    }
    let extension = pair
        .detected
        .data()
        .iter()
        .zip(pair.truth.data())
        .filter(|(&m, &mo)| m == 1 && mo == 0)
        .count();
    Ok(extension as f64 / truth as f64)
}

/// Unit-norm region descriptor: region mean minus the image mean, region
/// standard deviation, and an 8-bin histogram (bin width 0.1, last bin open)
/// of forward-difference gradient magnitudes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureEmbedding(pub [f64; 10]);

impl FeatureEmbedding {
    pub const BINS: usize = 8;
    pub const BIN_WIDTH: f64 = 0.1;

    /// Normalizes an arbitrary non-zero vector.
    pub fn from_raw(raw: [f64; 10]) -> Result<Self> {
        let norm = libm::sqrt(raw.iter().map(|v| v * v).sum());
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Numerics(format!("feature norm {norm}")));
        }
        Ok(Self(raw.map(|v| v / norm)))
    }

    pub fn of_region(image: &Image, region: &[bool]) -> Result<Self> {
        let (h, w) = image.dims();
        if region.len() != h * w {
            return Err(Error::Shape("region length differs from image".into()));
        }
        let n = region.iter().filter(|&&b| b).count();
        if n == 0 {
            return Err(Error::DegenerateMask("feature region is empty".into()));
        }
        let global = image.data().iter().sum::<f64>() / image.len() as f64;
        let vals: Vec<f64> = image
            .data()
            .iter()
            .zip(region)
            .filter(|(_, &b)| b)
            .map(|(v, _)| *v)
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let mut raw = [0.0; 10];
        raw[0] = mean - global;
        raw[1] = libm::sqrt(var);
        for r in 0..h {
            for c in 0..w {
                if !region[r * w + c] {
                    continue;
                }
                let v = image.get(r, c);
                let gx = if c + 1 < w { image.get(r, c + 1) - v } else { 0.0 };
                let gy = if r + 1 < h { image.get(r + 1, c) - v } else { 0.0 };
                let mag = libm::sqrt(gx * gx + gy * gy);
                let bin = ((mag / Self::BIN_WIDTH) as usize).min(Self::BINS - 1);
                raw[2 + bin] += 1.0 / n as f64;
            }
        }
        Self::from_raw(raw)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// `1 − f_aᵀ f_b`.
pub fn coherence_from_embeddings(a: &FeatureEmbedding, b: &FeatureEmbedding) -> f64 {
    1.0 - a.dot(b)
}

/// `d = 1 − f(Ω_M)ᵀ f(Ω_{B∖M})`, where `Ω_M` is the foreground (`m = 0`)
/// and `Ω_{B∖M}` is the foreground bounding box dilated by
/// [`COHERENCE_DILATION`] pixels, minus the foreground.
pub fn context_coherence(image: &Image, mask: &Mask) -> Result<f64> {
    mask.ensure_dims(image.dims(), "mask")?;
    let (h, w) = image.dims();
    let bbox = mask
        .zeros_bbox()
        .ok_or_else(|| Error::DegenerateMask("no foreground".into()))?
        .dilate(COHERENCE_DILATION, h, w);
    let fg: Vec<bool> = mask.data().iter().map(|&m| m == 0).collect();
    let ring: Vec<bool> = (0..h * w)
        .map(|p| mask.data()[p] == 1 && bbox.contains(p / w, p % w))
        .collect();
    let a = FeatureEmbedding::of_region(image, &fg)?;
    let b = FeatureEmbedding::of_region(image, &ring)?;
    Ok(coherence_from_embeddings(&a, &b))
}

/// Mean squared error between `generated` and the scene over foreground
/// pixels.
pub fn foreground_mse(generated: &Image, scene: &Scene) -> Result<f64> {
    generated.ensure_dims(scene.dims(), "generated image")?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((g, x), &m) in generated.data().iter().zip(scene.image.data()).zip(scene.mask.data()) {
        if m == 0 {
            sum += (g - x) * (g - x);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::DegenerateMask("scene has no foreground".into()));
    }
    Ok(sum / n as f64)
}

/// Anything that fills in a background given the conditioning.
pub trait Inpainter {
    fn inpaint(&self, cond: &Conditioning, seed: u64) -> Result<Image>;
}

/// Ancestral sampling with a trained denoiser.
#[derive(Clone, Copy, Debug)]
pub struct DiffusionInpainter<'a> {
    pub spec: &'a ModelSpec,
    pub params: &'a ParamVector,
    pub schedule: &'a NoiseSchedule,
}

impl Inpainter for DiffusionInpainter<'_> {
    fn inpaint(&self, cond: &Conditioning, seed: u64) -> Result<Image> {
        sample(self.spec, self.params, cond, self.schedule, seed)
    }
}

/// Conditioning scenes for evaluation; classes cycle through `0..K`.
pub fn eval_scenes(cfg: &SceneConfig, n: usize, seed: u64) -> Result<Vec<Scene>> {
    let mut r = rng::derive(seed, stream::EVAL);
    (0..n)
        .map(|i| gen_scene(cfg, r.next_u64(), (i % cfg.num_classes) as u32, 0))
        .collect()
}

fn sample_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut r = rng::derive(seed, stream::EVAL + 1);
    (0..n).map(|_| r.next_u64()).collect()
}

/// Oracle score of a generated image under the scene's mask; generations
/// without a detectable ground line score 0.
pub fn score_generated(generated: &Image, scene: &Scene) -> Result<f64> {
    let s = Scene {
        image: generated.clone(),
        mask: scene.mask.clone(),
        class: scene.class,
        oracle_offset: scene.oracle_offset,
    };
    match rationality_score(&s) {
        Ok(v) => Ok(v),
        Err(Error::Oracle(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Per-sample metric values over an evaluation set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalSummary {
    pub rationality: Vec<f64>,
    pub foreground_mse: Vec<f64>,
    pub oer: Vec<f64>,
    pub coherence: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl EvalSummary {
    pub fn len(&self) -> usize {
        self.rationality.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rationality.is_empty()
    }

    pub fn mean_rationality(&self) -> f64 {
        mean(&self.rationality)
    }

    pub fn mean_foreground_mse(&self) -> f64 {
        mean(&self.foreground_mse)
    }

    pub fn mean_oer(&self) -> f64 {
        mean(&self.oer)
    }

    pub fn mean_coherence(&self) -> f64 {
        mean(&self.coherence)
    }
}

/// Inpaints every scene once and records all four metrics per sample.
pub fn evaluate<I: Inpainter + ?Sized>(gen: &I, scenes: &[Scene], seed: u64, threshold: f64) -> Result<EvalSummary> {
    let mut out = EvalSummary::default();
    for (scene, s) in scenes.iter().zip(sample_seeds(seed, scenes.len())) {
        let img = gen.inpaint(&Conditioning::from_scene(scene), s)?;
        out.rationality.push(score_generated(&img, scene)?);
        out.foreground_mse.push(foreground_mse(&img, scene)?);
        out.oer.push(oer(&SegMaskPair::from_generated(&img, &scene.mask, threshold))?);
        out.coherence.push(context_coherence(&img, &scene.mask)?);
    }
    Ok(out)
}

/// Mean oracle rationality of `gen` over the given conditioning scenes.
pub fn rationality_eval_with<I: Inpainter + ?Sized>(gen: &I, scenes: &[Scene], seed: u64) -> Result<f64> {
    let mut scores = Vec::with_capacity(scenes.len());
    for (scene, s) in scenes.iter().zip(sample_seeds(seed, scenes.len())) {
        let img = gen.inpaint(&Conditioning::from_scene(scene), s)?;
        scores.push(score_generated(&img, scene)?);
    }
    Ok(mean(&scores))
}

/// Mean oracle rationality of `n_samples` samples from a trained model.
pub fn rationality_eval(
    spec: &ModelSpec,
    params: &ParamVector,
    n_samples: usize,
    schedule: &NoiseSchedule,
    scene_cfg: &SceneConfig,
    seed: u64,
) -> Result<f64> {
    let scenes = eval_scenes(scene_cfg, n_samples, seed)?;
    let gen = DiffusionInpainter {
        spec,
        params,
        schedule,
    };
    rationality_eval_with(&gen, &scenes, seed)
}

/// How the two branches of a pair are noised.
#[derive(Clone, Copy, Debug)]
pub enum BranchNoise<'a> {
    Shared(&'a Image),
    Independent { win: &'a Image, lose: &'a Image },
}

/// Which preference loss the conflict analysis differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConflictLoss {
    StandardDpo,
    Mpo,
}

/// Parameter-space gradient contributions of the two branches, each
/// restricted to foreground output coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ConflictReport {
    /// `None` when either branch has zero norm.
    pub cosine: Option<f64>,
    pub win_norm: f64,
    pub lose_norm: f64,
    /// `‖g_w + g_l‖`.
    pub sum_norm: f64,
}

/// Splits the preference gradient into its win- and lose-branch terms over
/// foreground output pixels and compares their directions.
pub fn gradient_conflict(
    models: &PreferenceModels<'_>,
    pair: &PreferencePair,
    t: usize,
    noise: BranchNoise<'_>,
    loss: ConflictLoss,
    w: &LossWeights,
) -> Result<ConflictReport> {
    let (eps_w, eps_l) = match noise {
        BranchNoise::Shared(e) => (e, e),
        BranchNoise::Independent { win, lose } => (win, lose),
    };
    let mut obj = Objective::new();
    let win = obj.add_branch(models.branch(&pair.win, t, eps_w)?);
    let lose = obj.add_branch(models.branch(&pair.lose, t, eps_l)?);
    let (kind, region) = match loss {
        ConflictLoss::StandardDpo => (LossTerm::Dpo, Region::Full),
        ConflictLoss::Mpo => (LossTerm::Mpo, Region::Background),
    };
    obj.add_term(kind, Term::Preference { win, lose, region });

    let model = Denoiser::new(models.spec, models.policy)?;
    let traces = obj
        .branches()
        .iter()
        .map(|b| model.forward(b.query()))
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<Image> = traces.iter().map(|t| t.output().clone()).collect();
    let (_, out_grads) = obj.evaluate(&preds, w)?;

    let mut branch_grads = Vec::with_capacity(2);
    for (i, branch) in obj.branches().iter().enumerate() {
        let fg = Region::Foreground.weights(&branch.mask);
        let masked = Image::from_vec(
            out_grads[i].height(),
            out_grads[i].width(),
            out_grads[i].data().iter().zip(&fg).map(|(g, m)| g * m).collect(),
        )?;
        let mut g = GradVector::zeros(models.policy.len());
        model.backward(branch.query(), &traces[i], &masked, &mut g)?;
        branch_grads.push(g);
    }
    let (gw, gl) = (&branch_grads[0], &branch_grads[1]);
    let (nw, nl) = (gw.norm(), gl.norm());
    let mut sum = gw.clone();
    sum.add_assign(gl);
    let cosine = if nw > 0.0 && nl > 0.0 {
        Some(gw.dot(gl) / (nw * nl))
    } else {
        None
    };
    Ok(ConflictReport {
        cosine,
        win_norm: nw,
        lose_norm: nl,
        sum_norm: sum.norm(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EloEntry {
    pub rating: f64,
    pub appearances: usize,
}

/// Ratings per method, all starting at [`ELO_START`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EloTable {
    entries: BTreeMap<String, EloEntry>,
}

impl EloTable {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Self {
        let entries = names
            .iter()
            .map(|n| {
                (
                    n.as_ref().to_string(),
                    EloEntry {
                        rating: ELO_START,
                        appearances: 0,
                    },
                )
            })
            .collect();
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Option<EloEntry> {
        self.entries.get(name).copied()
    }

    pub fn rating(&self, name: &str) -> Option<f64> {
        self.get(name).map(|e| e.rating)
    }

    pub fn total_rating(&self) -> f64 {
        self.entries.values().map(|e| e.rating).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EloEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Names ordered by rating, best first.
    pub fn ranking(&self) -> Vec<(String, EloEntry)> {
        let mut v: Vec<(String, EloEntry)> = self.entries.iter().map(|(k, e)| (k.clone(), *e)).collect();
        v.sort_by(|a, b| b.1.rating.total_cmp(&a.1.rating).then_with(|| a.0.cmp(&b.0)));
        v
    }
}

/// `E = 1/(1 + 10^((R_l − R_w)/400))`; the winner gains `K(1 − E)` and the
/// loser gives up the same amount.
pub fn elo_update(table: &mut EloTable, winner: &str, loser: &str, k: f64) -> Result<()> {
    if winner == loser {
        return Err(Error::Config("a method cannot play itself".into()));
    }
    let rw = table
        .rating(winner)
        .ok_or_else(|| Error::Config(format!("unknown method {winner}")))?;
    let rl = table
        .rating(loser)
        .ok_or_else(|| Error::Config(format!("unknown method {loser}")))?;
    let expected = 1.0 / (1.0 + libm::pow(10.0, (rl - rw) / 400.0));
    let delta = k * (1.0 - expected);
    for (name, change) in [(winner, delta), (loser, -delta)] {
        let e = table.entries.get_mut(name).expect("checked above");
        e.rating += change;
        e.appearances += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Rect;

    #[test]
    fn segmentation_keeps_the_larger_blob() {
        let mut img = Image::zeros(8, 8);
        for r in 0..2 {
            for c in 0..2 {
                img.set(r, c, 0.9);
            }
        }
        for r in 4..7 {
            for c in 4..7 {
                img.set(r, c, 0.95);
            }
        }
        let m = segment_subject(&img, 0.7);
        assert_eq!(m.count_ones(), 9);
        assert!(m.get(5, 5) && !m.get(0, 0));
        assert_eq!(segment_subject(&Image::zeros(4, 4), 0.7).count_ones(), 0);
    }

    #[test]
    fn oer_requires_ground_truth() {
        let pair = SegMaskPair {
            detected: Mask::filled(3, 3, true),
            truth: Mask::filled(3, 3, false),
        };
        assert!(matches!(oer(&pair), Err(Error::DegenerateMask(_))));
    }

    #[test]
    fn elo_equal_ratings() {
        let mut t = EloTable::new(&["a", "b"]);
        elo_update(&mut t, "a", "b", 32.0).unwrap();
        assert_eq!(t.rating("a"), Some(1016.0));
        assert_eq!(t.rating("b"), Some(984.0));
        assert!(elo_update(&mut t, "a", "a", 32.0).is_err());
        assert!(elo_update(&mut t, "a", "zzz", 32.0).is_err());
    }

    #[test]
    fn coherence_needs_both_regions() {
        let img = Image::zeros(4, 4);
        let all_bg = Mask::filled(4, 4, true);
        assert!(context_coherence(&img, &all_bg).is_err());
        let rect = Rect {
            top: 0,
            left: 0,
            bottom: 3,
            right: 3,
        };
        let all_fg = Mask::with_foreground_rect(4, 4, rect);
        assert!(matches!(
            context_coherence(&img, &all_fg),
            Err(Error::DegenerateMask(_))
        ));
    }
}
