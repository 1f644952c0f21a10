//! Fixtures and the finite-difference oracle shared by loss tests.
#![allow(dead_code)]

use inpaint_dpo_core::diffusion::NoiseSchedule;
use inpaint_dpo_core::losses::{
    BatchItem, CropDraw, LossTerm, LossWeights, Objective, PreferenceModels, Region, Term, Variant,
    WinWinDraw,
};
use inpaint_dpo_core::nn::{init_params, Architecture, Denoiser, GradVector, ModelSpec, ParamVector};
use inpaint_dpo_core::rng;
use inpaint_dpo_core::scene::{
    differentiated_crop, make_preference_pair, make_winwin_pair, PreferencePair, SceneConfig,
};
use inpaint_dpo_core::{Error, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
/// Denominator floor of the relative error. Along directions the loss does
/// not depend on, the difference quotient is rounding noise of order
/// 1e-12 to 1e-11 at this step, which must not count as a mismatch against an
/// exact zero.
pub const FD_FLOOR: f64 = 1e-6;

pub struct Fixture {
    pub spec: ModelSpec,
    pub policy: ParamVector,
    pub reference: ParamVector,
    pub schedule: NoiseSchedule,
}

impl Fixture {
    pub fn models(&self) -> PreferenceModels<'_> {
        PreferenceModels::new(&self.spec, &self.policy, &self.reference, &self.schedule)
    }
}

pub fn small_spec(architecture: Architecture) -> ModelSpec {
    ModelSpec {
        architecture,
        in_channels: 3,
        hidden_channels: 4,
        hidden_layers: 2,
        time_embed_dim: 4,
        num_classes: 4,
    }
}

/// A reference model and a policy a small step away from it.
pub fn fixture(architecture: Architecture, seed: u64) -> Fixture {
    let spec = small_spec(architecture);
    let reference = init_params(&spec, seed).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xf00d);
    let policy = ParamVector::new(
        reference
            .as_slice()
            .iter()
            .map(|v| v + r.random_range(-0.05..0.05))
            .collect(),
    );
    Fixture {
        spec,
        policy,
        reference,
        schedule: NoiseSchedule::default_linear(),
    }
}

pub fn gaussian(seed: u64, h: usize, w: usize) -> Image {
    rng::normal_image(&mut ChaCha8Rng::seed_from_u64(seed), h, w)
}

/// A win/lose pair with shared `(t, ε)`, a crop draw and a win/win draw.
pub fn draw(seed: u64) -> BatchItem {
    let cfg = SceneConfig::default();
    let class = (seed % 4) as u32;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    // Subjects in a corner admit no shifted window; move on to the next pair.
    let (pair, crop) = (0..)
        .find_map(|k| {
            let pair = make_preference_pair(&cfg, seed.wrapping_add(k * 7919), class).unwrap();
            match differentiated_crop(&pair, seed, 24, 24, 4) {
                Ok(c) => Some((pair, c)),
                Err(Error::NoFeasibleOffset { .. }) => None,
                Err(e) => panic!("{e}"),
            }
        })
        .unwrap();
    let winwin = make_winwin_pair(&cfg, seed ^ 0xabc, class).unwrap();
    BatchItem {
        t: r.random_range(1..=100),
        eps: gaussian(seed ^ 1, 32, 32),
        crop: Some(CropDraw {
            pair: crop,
            eps_win: gaussian(seed ^ 2, 24, 24),
            eps_lose: gaussian(seed ^ 3, 24, 24),
        }),
        winwin: Some(WinWinDraw {
            pair: winwin,
            t: r.random_range(1..=100),
            eps: gaussian(seed ^ 4, 32, 32),
        }),
        pair,
    }
}

/// A temperature that keeps every sigmoid argument of `item` within `[-1, 1]`.
pub fn tempered_weights(models: &PreferenceModels<'_>, item: &BatchItem) -> LossWeights {
    let r = |s, t, e: &Image, region| models.implicit_reward_surrogate(s, t, e, region).unwrap();
    let p = &item.pair;
    let c = item.crop.as_ref().unwrap();
    let ww = item.winwin.as_ref().unwrap();
    let gaps = [
        r(&p.win, item.t, &item.eps, Region::Full) - r(&p.lose, item.t, &item.eps, Region::Full),
        r(&p.win, item.t, &item.eps, Region::Background)
            - r(&p.lose, item.t, &item.eps, Region::Background),
        r(&p.win, item.t, &item.eps, Region::Foreground)
            - r(&p.lose, item.t, &item.eps, Region::Foreground),
        r(&c.pair.win_crop, item.t, &c.eps_win, Region::Full)
            - r(&c.pair.lose_crop, item.t, &c.eps_lose, Region::Full),
        r(&ww.pair.first, ww.t, &ww.eps, Region::Full) - r(&ww.pair.second, ww.t, &ww.eps, Region::Full),
    ];
    let widest = gaps.iter().fold(1e-6f64, |m, g| m.max(g.abs()));
    LossWeights {
        beta: 1.0 / widest,
        ..LossWeights::default()
    }
}

fn pair_objective(models: &PreferenceModels<'_>, p: &PreferencePair, t: usize, eps: &Image, term: impl Fn(usize, usize) -> (LossTerm, Term)) -> Objective {
    let mut obj = Objective::new();
    let win = obj.add_branch(models.branch(&p.win, t, eps).unwrap());
    let lose = obj.add_branch(models.branch(&p.lose, t, eps).unwrap());
    let (kind, term) = term(win, lose);
    obj.add_term(kind, term);
    obj
}

/// Each loss as an [`Objective`] together with the value of the matching
/// standalone loss function.
pub fn named_objectives(models: &PreferenceModels<'_>, item: &BatchItem, w: &LossWeights) -> Vec<(&'static str, Objective, f64)> {
    let (p, t, eps) = (&item.pair, item.t, &item.eps);
    let c = item.crop.as_ref().unwrap();
    let ww = item.winwin.as_ref().unwrap();
    let preference = |kind, region| move |win, lose| (kind, Term::Preference { win, lose, region });
    let mut out = Vec::new();

    out.push((
        "dpo",
        pair_objective(models, p, t, eps, preference(LossTerm::Dpo, Region::Full)),
        models.standard_dpo_loss(p, t, eps, w).unwrap(),
    ));
    out.push((
        "mpo",
        pair_objective(models, p, t, eps, preference(LossTerm::Mpo, Region::Background)),
        models.mpo_loss(p, t, eps, w).unwrap(),
    ));

    let mut inpaint = Objective::new();
    let b = inpaint.add_branch(models.branch(&p.win, t, eps).unwrap());
    inpaint.add_term(LossTerm::Inpainting, Term::Inpainting { branch: b });
    // The objective scales the term by λ; the standalone loss does not.
    out.push((
        "inpainting",
        inpaint,
        w.lambda * models.foreground_inpainting_loss(&p.win, t, eps).unwrap(),
    ));

    let mut maskdpo = pair_objective(models, p, t, eps, preference(LossTerm::Mpo, Region::Background));
    maskdpo.add_term(LossTerm::Inpainting, Term::Inpainting { branch: 0 });
    out.push(("maskdpo", maskdpo, models.maskdpo_loss(p, t, eps, w).unwrap().total));

    let mut capo = Objective::new();
    let cw = capo.add_branch(models.branch(&c.pair.win_crop, t, &c.eps_win).unwrap());
    let cl = capo.add_branch(models.branch(&c.pair.lose_crop, t, &c.eps_lose).unwrap());
    capo.add_term(LossTerm::Capo, Term::Preference { win: cw, lose: cl, region: Region::Full });
    out.push((
        "capo",
        capo,
        w.gamma * models.capo_loss(&c.pair, t, &c.eps_win, &c.eps_lose, w).unwrap(),
    ));

    let mut scpo = Objective::new();
    let first = scpo.add_branch(models.branch(&ww.pair.first, ww.t, &ww.eps).unwrap());
    let second = scpo.add_branch(models.branch(&ww.pair.second, ww.t, &ww.eps).unwrap());
    scpo.add_term(LossTerm::Scpo, Term::Commonality { first, second, region: Region::Full });
    out.push(("scpo", scpo, w.mu * models.scpo_loss(&ww.pair, ww.t, &ww.eps, w).unwrap()));

    out.push((
        "subject-scpo",
        pair_objective(models, p, t, eps, |first, second| {
            (LossTerm::SubjectScpo, Term::Commonality { first, second, region: Region::Foreground })
        }),
        w.lambda * models.subject_scpo_loss(p, t, eps, w).unwrap(),
    ));

    out.push((
        "total",
        models.objective(std::slice::from_ref(item), Variant::Full).unwrap(),
        models.total_loss(std::slice::from_ref(item), w).unwrap().total,
    ));
    out
}

/// Largest `|analytic − fd| / max(|fd|, FD_FLOOR)` over `n` random
/// coordinates, with central differences of step [`FD_STEP`].
pub fn worst_fd_error(obj: &Objective, spec: &ModelSpec, policy: &ParamVector, w: &LossWeights, n: usize, seed: u64) -> f64 {
    let (_, grad) = obj.value_and_grad(spec, policy, w).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let i = r.random_range(0..policy.len());
        let at = |delta: f64| {
            let mut p = policy.clone();
            p.as_mut_slice()[i] += delta;
            obj.value(spec, &p, w).unwrap().total
        };
        let fd = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
        worst = worst.max((grad.as_slice()[i] - fd).abs() / fd.abs().max(FD_FLOOR));
    }
    worst
}

/// Win and lose parameter gradients of standard DPO, each restricted to
/// foreground output pixels, computed branch by branch.
pub fn foreground_branch_grads(f: &Fixture, pair: &PreferencePair, t: usize, eps_w: &Image, eps_l: &Image) -> (GradVector, GradVector) {
    let models = f.models();
    let model = Denoiser::new(&f.spec, &f.policy).unwrap();
    let mut obj = Objective::new();
    let win = obj.add_branch(models.branch(&pair.win, t, eps_w).unwrap());
    let lose = obj.add_branch(models.branch(&pair.lose, t, eps_l).unwrap());
    obj.add_term(LossTerm::Dpo, Term::Preference { win, lose, region: Region::Full });
    let traces: Vec<_> = obj.branches().iter().map(|b| model.forward(b.query()).unwrap()).collect();
    let preds: Vec<Image> = traces.iter().map(|t| t.output().clone()).collect();
    let w = LossWeights { beta: 0.1, ..LossWeights::default() };
    let (_, grads) = obj.evaluate(&preds, &w).unwrap();
    let mut out = Vec::new();
    for (i, b) in obj.branches().iter().enumerate() {
        let masked = Image::from_vec(
            32,
            32,
            grads[i].data().iter().zip(b.mask.data()).map(|(g, &m)| if m == 0 { *g } else { 0.0 }).collect(),
        )
        .unwrap();
        let mut g = GradVector::zeros(f.policy.len());
        model.backward(b.query(), &traces[i], &masked, &mut g).unwrap();
        out.push(g);
    }
    let l = out.pop().unwrap();
    (out.pop().unwrap(), l)
}
