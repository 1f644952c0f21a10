//! Preference losses for foreground-conditioned inpainting.
//!
//! Every reward-bearing loss is built from *branches*: one noised scene with
//! its noise draw and the frozen reference prediction. The policy prediction
//! for each branch is the only differentiable quantity. A branch's implicit
//! reward over a region `w` is
//!
//! ```text
//! r = ‖(ε − ε_ref) ⊙ w‖² − ‖(ε − ε_θ) ⊙ w‖²
//! ```
//!
//! and terms combine branch rewards:
//!
//! | term | value |
//! |------|-------|
//! | preference (DPO, MPO, CAPO) | `softplus(−βω (r_win − r_lose))` |
//! | commonality (SCPO, Subject-SCPO) | `softplus(βω |r_1 − r_2|)` |
//! | inpainting | `‖(ε − ε_θ) ⊙ (1 − m)‖² / |foreground|` |
//!
//! An [`Objective`] holds branches and weighted terms and returns the loss
//! breakdown together with `∂L/∂ε_θ` for every branch, which is what
//! [`crate::nn::loss_and_grad`] consumes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::diffusion::{add_noise, assemble_input, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::nn::{loss_and_grad, Denoiser, DenoiserInput, GradVector, ModelSpec, ParamVector, Query, Timestep};
use crate::scene::{CroppedPair, PreferencePair, Scene, WinWinPair};

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// DPO temperature β.
    pub beta: f64,
    /// Timestep weight ω(λ_t), held constant.
    pub omega: f64,
    /// Foreground inpainting weight λ.
    pub lambda: f64,
    /// CAPO weight γ.
    pub gamma: f64,
    /// SCPO weight μ.
    pub mu: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta: 100.0,
            omega: 1.0,
            lambda: 2.0,
            gamma: 1.0,
            mu: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.omega > 0.0) {
            return Err(Error::Config(format!(
                "beta and omega must be positive, got {} and {}",
                self.beta, self.omega
            )));
        }
        if !(self.lambda >= 0.0 && self.gamma >= 0.0 && self.mu >= 0.0) {
            return Err(Error::Config("lambda, gamma and mu must be non-negative".into()));
        }
        Ok(())
    }

    /// β·ω, the scale inside every sigmoid.
    pub fn temperature(&self) -> f64 {
        self.beta * self.omega
    }

    /// Weight of a term in the combined objective. Subject-SCPO stands in
    /// for the inpainting term and inherits λ.
    pub fn term_weight(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Dpo | LossTerm::Mpo => 1.0,
            LossTerm::Inpainting | LossTerm::SubjectScpo => self.lambda,
            LossTerm::Capo => self.gamma,
            LossTerm::Scpo => self.mu,
        }
    }
}

/// `r_win − r_lose`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardGap {
    pub r_win: f64,
    pub r_lose: f64,
    pub delta: f64,
}

impl RewardGap {
    pub fn new(r_win: f64, r_lose: f64) -> Self {
        Self {
            r_win,
            r_lose,
            delta: r_win - r_lose,
        }
    }
}

/// `−log σ(βω·Δ)`.
pub fn dpo_loss(gap: &RewardGap, w: &LossWeights) -> Result<f64> {
    if !gap.delta.is_finite() {
        return Err(Error::Numerics(format!("reward gap {}", gap.delta)));
    }
    Ok(softplus(-w.temperature() * gap.delta))
}

/// `−log(1 − σ(βω·|r₁ − r₂|))`.
pub fn commonality_loss(r_first: f64, r_second: f64, w: &LossWeights) -> Result<f64> {
    let d = r_first - r_second;
    if !d.is_finite() {
        return Err(Error::Numerics(format!("reward gap {d}")));
    }
    Ok(softplus(w.temperature() * d.abs()))
}

/// Pixels a reward or loss looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Full,
    /// `m = 1`.
    Background,
    /// `1 − m`.
    Foreground,
}

impl Region {
    pub fn weights(self, mask: &Mask) -> Vec<f64> {
        match self {
            Region::Full => vec![1.0; mask.data().len()],
            Region::Background => mask.to_weights(),
            Region::Foreground => mask.complement().to_weights(),
        }
    }
}

/// Neumaier-compensated sum. Reward gaps subtract two sums over the whole
/// image, so plain summation leaves rounding noise well above one ulp.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// `Σ w²[(ε − ε_ref)² − (ε − ε_θ)²]` for explicit region weights.
pub fn reward_from_predictions(eps: &Image, reference: &Image, policy: &Image, weights: &[f64]) -> Result<f64> {
    reference.ensure_dims(eps.dims(), "reference prediction")?;
    policy.ensure_dims(eps.dims(), "policy prediction")?;
    if weights.len() != eps.len() {
        return Err(Error::Shape("region weights differ in length from the image".into()));
    }
    Ok(compensated_sum(
        eps.data()
            .iter()
            .zip(reference.data())
            .zip(policy.data())
            .zip(weights)
            .map(|(((e, r), p), w)| {
                let w2 = w * w;
                w2 * ((e - r) * (e - r) - (e - p) * (e - p))
            }),
    ))
}

/// Named loss terms, in breakdown order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossTerm {
    /// Unmasked DPO over a win/lose pair.
    Dpo,
    /// Background-masked DPO.
    Mpo,
    /// Foreground ε-MSE.
    Inpainting,
    /// Unmasked DPO over differentiated crops.
    Capo,
    /// Commonality loss over a win/win pair.
    Scpo,
    /// Commonality loss over the foreground of a win/lose pair.
    SubjectScpo,
}

impl LossTerm {
    pub const ALL: [LossTerm; 6] = [
        LossTerm::Dpo,
        LossTerm::Mpo,
        LossTerm::Inpainting,
        LossTerm::Capo,
        LossTerm::Scpo,
        LossTerm::SubjectScpo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Dpo => "dpo",
            LossTerm::Mpo => "mpo",
            LossTerm::Inpainting => "inpainting",
            LossTerm::Capo => "capo",
            LossTerm::Scpo => "scpo",
            LossTerm::SubjectScpo => "subject_scpo",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

/// Total loss and the (batch-mean) value of each term present.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub terms: BTreeMap<LossTerm, f64>,
}

impl LossBreakdown {
    pub fn term(&self, term: LossTerm) -> Option<f64> {
        self.terms.get(&term).copied()
    }

    /// `Σ weight(term) · value(term)`.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        self.terms.iter().map(|(t, v)| w.term_weight(*t) * v).sum()
    }
}

/// One noised scene seen by both models.
#[derive(Clone, Debug)]
pub struct Branch {
    pub input: DenoiserInput,
    pub t: Timestep,
    pub class: u32,
    pub eps: Image,
    pub mask: Mask,
    /// ε_ref(z_t, c, t), a constant.
    pub reference: Image,
}

impl Branch {
    pub fn query(&self) -> Query<'_> {
        Query {
            input: &self.input,
            t: self.t,
            class: self.class,
        }
    }

    fn reward(&self, policy: &Image, region: Region) -> Result<f64> {
        reward_from_predictions(&self.eps, &self.reference, policy, &region.weights(&self.mask))
    }

    /// `∂r/∂ε_θ = 2 w² (ε − ε_θ)`.
    fn reward_grad(&self, policy: &Image, region: Region) -> Image {
        let w = region.weights(&self.mask);
        let data = self
            .eps
            .data()
            .iter()
            .zip(policy.data())
            .zip(&w)
            .map(|((e, p), wv)| 2.0 * wv * wv * (e - p))
            .collect();
        Image::from_vec(policy.height(), policy.width(), data).expect("dims checked")
    }

    fn foreground_count(&self) -> usize {
        self.mask.count_zeros()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Term {
    Preference { win: usize, lose: usize, region: Region },
    Commonality { first: usize, second: usize, region: Region },
    Inpainting { branch: usize },
}

/// Branches plus the weighted terms defined over them. Repeated terms of one
/// kind (a batch) are averaged.
#[derive(Clone, Debug, Default)]
pub struct Objective {
    branches: Vec<Branch>,
    terms: Vec<(LossTerm, Term)>,
}

impl Objective {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_branch(&mut self, branch: Branch) -> usize {
        self.branches.push(branch);
        self.branches.len() - 1
    }

    pub fn add_term(&mut self, kind: LossTerm, term: Term) {
        self.terms.push((kind, term));
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn queries(&self) -> Vec<Query<'_>> {
        self.branches.iter().map(Branch::query).collect()
    }

    /// Loss breakdown and `∂L/∂ε_θ` for each branch, given the policy
    /// predictions in branch order.
    pub fn evaluate(&self, preds: &[Image], w: &LossWeights) -> Result<(LossBreakdown, Vec<Image>)> {
        w.validate()?;
        if preds.len() != self.branches.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} branches",
                preds.len(),
                self.branches.len()
            )));
        }
        let mut counts: BTreeMap<LossTerm, usize> = BTreeMap::new();
        for (kind, _) in &self.terms {
            *counts.entry(*kind).or_default() += 1;
        }
        let tau = w.temperature();
        let mut sums: BTreeMap<LossTerm, f64> = BTreeMap::new();
        let mut grads: Vec<Image> = preds
            .iter()
            .map(|p| Image::zeros(p.height(), p.width()))
            .collect();
        let accumulate = |grads: &mut Vec<Image>, idx: usize, scale: f64, g: Image| {
            for (a, b) in grads[idx].data_mut().iter_mut().zip(g.data()) {
                *a += scale * b;
            }
        };
        for (kind, term) in &self.terms {
            let coef = w.term_weight(*kind) / counts[kind] as f64;
            let value = match *term {
                Term::Preference { win, lose, region } => {
                    let (bw, bl) = (&self.branches[win], &self.branches[lose]);
                    let gap = RewardGap::new(bw.reward(&preds[win], region)?, bl.reward(&preds[lose], region)?);
                    let value = dpo_loss(&gap, w)?;
                    // d softplus(−τΔ)/dΔ = −τ σ(−τΔ)
                    let d = -tau * sigmoid(-tau * gap.delta);
                    accumulate(&mut grads, win, coef * d, bw.reward_grad(&preds[win], region));
                    accumulate(&mut grads, lose, -coef * d, bl.reward_grad(&preds[lose], region));
                    value
                }
                Term::Commonality { first, second, region } => {
                    let (b1, b2) = (&self.branches[first], &self.branches[second]);
                    let (r1, r2) = (b1.reward(&preds[first], region)?, b2.reward(&preds[second], region)?);
                    let value = commonality_loss(r1, r2, w)?;
                    let delta = r1 - r2;
                    let sign = if delta > 0.0 {
                        1.0
                    } else if delta < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    let d = tau * sigmoid(tau * delta.abs()) * sign;
                    accumulate(&mut grads, first, coef * d, b1.reward_grad(&preds[first], region));
                    accumulate(&mut grads, second, -coef * d, b2.reward_grad(&preds[second], region));
                    value
                }
                Term::Inpainting { branch } => {
                    let b = &self.branches[branch];
                    let n = b.foreground_count();
                    if n == 0 {
                        return Err(Error::DegenerateMask("inpainting loss needs a foreground".into()));
                    }
                    let p = &preds[branch];
                    let fg = Region::Foreground.weights(&b.mask);
                    let mut g = Vec::with_capacity(p.len());
                    let value = compensated_sum(b.eps.data().iter().zip(p.data()).zip(&fg).map(|((e, pv), wv)| {
                        let r = wv * (e - pv);
                        g.push(-2.0 * wv * r / n as f64);
                        r * r
                    }));
                    accumulate(&mut grads, branch, coef, Image::from_vec(p.height(), p.width(), g)?);
                    value / n as f64
                }
            };
            *sums.entry(*kind).or_default() += value;
        }
        let terms: BTreeMap<LossTerm, f64> = sums
            .into_iter()
            .map(|(k, v)| (k, v / counts[&k] as f64))
            .collect();
        let total = terms.iter().map(|(k, v)| w.term_weight(*k) * v).sum();
        Ok((LossBreakdown { total, terms }, grads))
    }

    /// Breakdown and parameter gradient for the given policy.
    pub fn value_and_grad(
        &self,
        spec: &ModelSpec,
        policy: &ParamVector,
        w: &LossWeights,
    ) -> Result<(LossBreakdown, GradVector)> {
        let mut breakdown = None;
        let (_, grad) = loss_and_grad(spec, policy, &self.queries(), |preds| {
            let (b, g) = self.evaluate(preds, w)?;
            let total = b.total;
            breakdown = Some(b);
            Ok((total, g))
        })?;
        Ok((breakdown.expect("loss closure ran"), grad))
    }

    /// Breakdown only.
    pub fn value(&self, spec: &ModelSpec, policy: &ParamVector, w: &LossWeights) -> Result<LossBreakdown> {
        let model = Denoiser::new(spec, policy)?;
        let preds = self
            .branches
            .iter()
            .map(|b| model.predict(b.query()))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.evaluate(&preds, w)?.0)
    }
}

/// Which terms make up the preference-phase objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Unmasked DPO.
    StandardDpo,
    /// MPO + λ·inpainting.
    MaskDpo,
    /// MaskDPO + γ·CAPO.
    MaskDpoCapo,
    /// MaskDPO + γ·CAPO + μ·SCPO.
    Full,
    /// MPO + λ·Subject-SCPO.
    MpoSubjectScpo,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::StandardDpo,
        Variant::MaskDpo,
        Variant::MaskDpoCapo,
        Variant::Full,
        Variant::MpoSubjectScpo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::StandardDpo => "standard",
            Variant::MaskDpo => "maskdpo",
            Variant::MaskDpoCapo => "capo",
            Variant::Full => "full",
            Variant::MpoSubjectScpo => "subject-scpo",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "standard" | "standard-dpo" => Some(Variant::StandardDpo),
            "maskdpo" => Some(Variant::MaskDpo),
            "capo" | "maskdpo+capo" => Some(Variant::MaskDpoCapo),
            "full" => Some(Variant::Full),
            "subject-scpo" | "mpo+subject-scpo" => Some(Variant::MpoSubjectScpo),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Variant::StandardDpo => 0,
            Variant::MaskDpo => 1,
            Variant::MaskDpoCapo => 2,
            Variant::Full => 3,
            Variant::MpoSubjectScpo => 4,
        }
    }

    pub fn uses_mpo(self) -> bool {
        !matches!(self, Variant::StandardDpo)
    }

    pub fn uses_inpainting(self) -> bool {
        matches!(self, Variant::MaskDpo | Variant::MaskDpoCapo | Variant::Full)
    }

    pub fn uses_capo(self) -> bool {
        matches!(self, Variant::MaskDpoCapo | Variant::Full)
    }

    pub fn uses_scpo(self) -> bool {
        matches!(self, Variant::Full)
    }

    pub fn uses_subject_scpo(self) -> bool {
        matches!(self, Variant::MpoSubjectScpo)
    }
}

/// Noise draws for a differentiated crop pair; the two crops are noised
/// independently.
#[derive(Clone, Debug)]
pub struct CropDraw {
    pub pair: CroppedPair,
    pub eps_win: Image,
    pub eps_lose: Image,
}

/// A win/win pair with its own shared timestep and noise.
#[derive(Clone, Debug)]
pub struct WinWinDraw {
    pub pair: WinWinPair,
    pub t: usize,
    pub eps: Image,
}

/// One element of a preference batch: a win/lose pair with a shared `(t, ε)`
/// and, when the variant needs them, a crop draw and a win/win draw.
#[derive(Clone, Debug)]
pub struct BatchItem {
    pub pair: PreferencePair,
    pub t: usize,
    pub eps: Image,
    pub crop: Option<CropDraw>,
    pub winwin: Option<WinWinDraw>,
}

/// Policy, frozen reference and schedule: everything a loss needs besides
/// data.
#[derive(Clone, Copy, Debug)]
pub struct PreferenceModels<'a> {
    pub spec: &'a ModelSpec,
    pub policy: &'a ParamVector,
    pub reference: &'a ParamVector,
    pub schedule: &'a NoiseSchedule,
}

impl<'a> PreferenceModels<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        policy: &'a ParamVector,
        reference: &'a ParamVector,
        schedule: &'a NoiseSchedule,
    ) -> Self {
        Self {
            spec,
            policy,
            reference,
            schedule,
        }
    }

    /// Noises `scene` with `(t, eps)` and records the reference prediction.
    pub fn branch(&self, scene: &Scene, t: usize, eps: &Image) -> Result<Branch> {
        let state = add_noise(&scene.image, eps, t, self.schedule)?;
        let input = assemble_input(scene, &state)?;
        let t = self.schedule.timestep(t)?;
        let reference = Denoiser::new(self.spec, self.reference)?.predict(Query {
            input: &input,
            t,
            class: scene.class,
        })?;
        Ok(Branch {
            input,
            t,
            class: scene.class,
            eps: eps.clone(),
            mask: scene.mask.clone(),
            reference,
        })
    }

    /// Implicit reward of `scene` over `region`.
    pub fn implicit_reward_surrogate(&self, scene: &Scene, t: usize, eps: &Image, region: Region) -> Result<f64> {
        let b = self.branch(scene, t, eps)?;
        let policy = Denoiser::new(self.spec, self.policy)?.predict(b.query())?;
        b.reward(&policy, region)
    }

    fn pair_objective(&self, pair: &PreferencePair, t: usize, eps: &Image, kind: LossTerm, region: Region) -> Result<Objective> {
        let mut obj = Objective::new();
        let win = obj.add_branch(self.branch(&pair.win, t, eps)?);
        let lose = obj.add_branch(self.branch(&pair.lose, t, eps)?);
        obj.add_term(kind, Term::Preference { win, lose, region });
        Ok(obj)
    }

    fn single(&self, obj: &Objective, kind: LossTerm, w: &LossWeights) -> Result<f64> {
        let b = obj.value(self.spec, self.policy, w)?;
        Ok(b.term(kind).expect("term present"))
    }

    /// Unmasked DPO over a win/lose pair.
    pub fn standard_dpo_loss(&self, pair: &PreferencePair, t: usize, eps: &Image, w: &LossWeights) -> Result<f64> {
        let obj = self.pair_objective(pair, t, eps, LossTerm::Dpo, Region::Full)?;
        self.single(&obj, LossTerm::Dpo, w)
    }

    /// DPO over background-masked rewards.
    pub fn mpo_loss(&self, pair: &PreferencePair, t: usize, eps: &Image, w: &LossWeights) -> Result<f64> {
        let obj = self.pair_objective(pair, t, eps, LossTerm::Mpo, Region::Background)?;
        self.single(&obj, LossTerm::Mpo, w)
    }

    /// Foreground ε-MSE of the policy.
    pub fn foreground_inpainting_loss(&self, scene: &Scene, t: usize, eps: &Image) -> Result<f64> {
        let mut obj = Objective::new();
        let b = obj.add_branch(self.branch(scene, t, eps)?);
        obj.add_term(LossTerm::Inpainting, Term::Inpainting { branch: b });
        self.single(&obj, LossTerm::Inpainting, &LossWeights::default())
    }

    /// MPO + λ·inpainting on the win sample.
    pub fn maskdpo_loss(&self, pair: &PreferencePair, t: usize, eps: &Image, w: &LossWeights) -> Result<LossBreakdown> {
        let mut obj = self.pair_objective(pair, t, eps, LossTerm::Mpo, Region::Background)?;
        obj.add_term(LossTerm::Inpainting, Term::Inpainting { branch: 0 });
        obj.value(self.spec, self.policy, w)
    }

    /// Unmasked DPO over differentiated crops, each with its own noise.
    pub fn capo_loss(&self, cropped: &CroppedPair, t: usize, eps_win: &Image, eps_lose: &Image, w: &LossWeights) -> Result<f64> {
        let mut obj = Objective::new();
        let win = obj.add_branch(self.branch(&cropped.win_crop, t, eps_win)?);
        let lose = obj.add_branch(self.branch(&cropped.lose_crop, t, eps_lose)?);
        obj.add_term(LossTerm::Capo, Term::Preference { win, lose, region: Region::Full });
        self.single(&obj, LossTerm::Capo, w)
    }

    /// Commonality loss over a win/win pair with shared `(t, ε)`.
    pub fn scpo_loss(&self, pair: &WinWinPair, t: usize, eps: &Image, w: &LossWeights) -> Result<f64> {
        let mut obj = Objective::new();
        let first = obj.add_branch(self.branch(&pair.first, t, eps)?);
        let second = obj.add_branch(self.branch(&pair.second, t, eps)?);
        obj.add_term(LossTerm::Scpo, Term::Commonality { first, second, region: Region::Full });
        self.single(&obj, LossTerm::Scpo, w)
    }

    /// Commonality loss restricted to the shared foreground of a win/lose pair.
    pub fn subject_scpo_loss(&self, pair: &PreferencePair, t: usize, eps: &Image, w: &LossWeights) -> Result<f64> {
        let mut obj = Objective::new();
        let first = obj.add_branch(self.branch(&pair.win, t, eps)?);
        let second = obj.add_branch(self.branch(&pair.lose, t, eps)?);
        obj.add_term(
            LossTerm::SubjectScpo,
            Term::Commonality { first, second, region: Region::Foreground },
        );
        self.single(&obj, LossTerm::SubjectScpo, w)
    }

    /// The variant's objective over a batch.
    pub fn objective(&self, batch: &[BatchItem], variant: Variant) -> Result<Objective> {
        let mut obj = Objective::new();
        for item in batch {
            let win = obj.add_branch(self.branch(&item.pair.win, item.t, &item.eps)?);
            let lose = obj.add_branch(self.branch(&item.pair.lose, item.t, &item.eps)?);
            if variant == Variant::StandardDpo {
                obj.add_term(LossTerm::Dpo, Term::Preference { win, lose, region: Region::Full });
                continue;
            }
            obj.add_term(LossTerm::Mpo, Term::Preference { win, lose, region: Region::Background });
            if variant.uses_inpainting() {
                obj.add_term(LossTerm::Inpainting, Term::Inpainting { branch: win });
            }
            if variant.uses_subject_scpo() {
                obj.add_term(
                    LossTerm::SubjectScpo,
                    Term::Commonality { first: win, second: lose, region: Region::Foreground },
                );
            }
            // Items whose subject admits no shifted crop carry no CAPO term.
            if let (true, Some(crop)) = (variant.uses_capo(), item.crop.as_ref()) {
                let cw = obj.add_branch(self.branch(&crop.pair.win_crop, item.t, &crop.eps_win)?);
                let cl = obj.add_branch(self.branch(&crop.pair.lose_crop, item.t, &crop.eps_lose)?);
                obj.add_term(LossTerm::Capo, Term::Preference { win: cw, lose: cl, region: Region::Full });
            }
            if variant.uses_scpo() {
                let ww = item
                    .winwin
                    .as_ref()
                    .ok_or_else(|| Error::Config("variant needs win/win draws".into()))?;
                let first = obj.add_branch(self.branch(&ww.pair.first, ww.t, &ww.eps)?);
                let second = obj.add_branch(self.branch(&ww.pair.second, ww.t, &ww.eps)?);
                obj.add_term(LossTerm::Scpo, Term::Commonality { first, second, region: Region::Full });
            }
        }
        Ok(obj)
    }

    /// Combined loss `maskdpo + γ·capo + μ·scpo` over a batch (terms the
    /// batch does not carry are left out).
    pub fn total_loss(&self, batch: &[BatchItem], w: &LossWeights) -> Result<LossBreakdown> {
        let variant = match (
            batch.iter().all(|b| b.crop.is_some()),
            batch.iter().all(|b| b.winwin.is_some()),
        ) {
            (true, true) => Variant::Full,
            (true, false) => Variant::MaskDpoCapo,
            (false, true) => {
                return Err(Error::Config("win/win draws without crop draws".into()));
            }
            (false, false) => Variant::MaskDpo,
        };
        self.objective(batch, variant)?.value(self.spec, self.policy, w)
    }
}
