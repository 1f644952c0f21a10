mod support;

use inpaint_dpo_core::losses::{
    commonality_loss, dpo_loss, reward_from_predictions, softplus, LossTerm, LossWeights, Objective,
    PreferenceModels, Region, RewardGap, Term, Variant,
};
use inpaint_dpo_core::metrics::{gradient_conflict, BranchNoise, ConflictLoss};
use inpaint_dpo_core::nn::{Architecture, Denoiser, ParamVector};
use inpaint_dpo_core::scene::{make_preference_pair, PreferencePair, Scene, SceneConfig};
use inpaint_dpo_core::{Error, Image, Mask, Rect};
use proptest::prelude::*;
use support::{
    draw, fixture, foreground_branch_grads, gaussian, named_objectives, tempered_weights, worst_fd_error,
};

const LN2: f64 = std::f64::consts::LN_2;

#[test]
fn reward_of_hand_set_two_by_two() {
    let eps = Image::from_vec(2, 2, vec![0.5, -1.0, 2.0, 0.0]).unwrap();
    let reference = Image::from_vec(2, 2, vec![0.0, -1.5, 1.0, 1.0]).unwrap();
    let policy = Image::from_vec(2, 2, vec![0.25, -1.0, 3.0, -0.5]).unwrap();
    let weights = [1.0, 0.0, 1.0, 0.5];
    // Per pixel w²[(ε − ε_ref)² − (ε − ε_θ)²].
    let expected = (0.25 - 0.0625) + 0.0 + (1.0 - 1.0) + 0.25 * (1.0 - 0.25);
    let got = reward_from_predictions(&eps, &reference, &policy, &weights).unwrap();
    assert!((got - expected).abs() < 1e-15);
    assert_eq!(reward_from_predictions(&eps, &reference, &policy, &[0.0; 4]).unwrap(), 0.0);
    assert_eq!(reward_from_predictions(&eps, &policy, &policy, &[1.0; 4]).unwrap(), 0.0);
    assert!(matches!(
        reward_from_predictions(&eps, &reference, &policy, &[1.0; 3]),
        Err(Error::Shape(_))
    ));
}

#[test]
fn reward_gap_is_consistent() {
    let g = RewardGap::new(0.3, -1.7);
    assert!((g.delta - 2.0).abs() < 1e-12);
    assert!(dpo_loss(&RewardGap::new(f64::INFINITY, 0.0), &LossWeights::default()).is_err());
}

#[test]
fn identical_policy_and_reference_give_zero_rewards() {
    let f = fixture(Architecture::Convolutional, 1);
    let models = PreferenceModels::new(&f.spec, &f.reference, &f.reference, &f.schedule);
    let item = draw(3);
    for region in [Region::Full, Region::Background, Region::Foreground] {
        let r = models.implicit_reward_surrogate(&item.pair.win, item.t, &item.eps, region).unwrap();
        assert_eq!(r, 0.0);
    }
    let w = LossWeights::default();
    let c = item.crop.as_ref().unwrap();
    assert_eq!(models.capo_loss(&c.pair, item.t, &c.eps_win, &c.eps_lose, &w).unwrap(), LN2);
    assert_eq!(models.standard_dpo_loss(&item.pair, item.t, &item.eps, &w).unwrap(), LN2);
}

#[test]
fn degenerate_pairs_give_ln2() {
    let f = fixture(Architecture::Convolutional, 2);
    let models = f.models();
    let w = LossWeights::default();
    let item = draw(5);
    let (t, eps) = (item.t, &item.eps);
    let twin = PreferencePair { win: item.pair.win.clone(), lose: item.pair.win.clone() };
    assert_eq!(models.mpo_loss(&twin, t, eps, &w).unwrap(), LN2);
    let c = item.crop.as_ref().unwrap();
    let mut same = c.pair.clone();
    same.lose_crop = same.win_crop.clone();
    assert_eq!(models.capo_loss(&same, t, &c.eps_win, &c.eps_win, &w).unwrap(), LN2);
    let ww = item.winwin.as_ref().unwrap();
    let mut echo = ww.pair.clone();
    echo.second = echo.first.clone();
    assert_eq!(models.scpo_loss(&echo, ww.t, &ww.eps, &w).unwrap(), LN2);

    // All-foreground masks zero the background rewards; all-background masks
    // zero the foreground ones.
    let mut fg = item.pair.clone();
    fg.win.mask = Mask::filled(32, 32, false);
    fg.lose.mask = Mask::filled(32, 32, false);
    assert_eq!(models.mpo_loss(&fg, t, eps, &w).unwrap(), LN2);
    let mut bg = item.pair.clone();
    bg.win.mask = Mask::filled(32, 32, true);
    bg.lose.mask = Mask::filled(32, 32, true);
    assert_eq!(models.subject_scpo_loss(&bg, t, eps, &w).unwrap(), LN2);
    assert!(matches!(
        models.foreground_inpainting_loss(&bg.win, t, eps),
        Err(Error::DegenerateMask(_))
    ));
}

#[test]
fn pointwise_subject_scpo_sees_equal_rewards() {
    let f = fixture(Architecture::Pointwise, 3);
    let models = f.models();
    for seed in 0..5 {
        let item = draw(seed);
        let v = models.subject_scpo_loss(&item.pair, item.t, &item.eps, &LossWeights::default()).unwrap();
        assert_eq!(v, LN2);
    }
}

#[test]
fn swapping_a_winwin_pair_keeps_scpo() {
    let f = fixture(Architecture::Convolutional, 4);
    let models = f.models();
    let item = draw(6);
    let ww = item.winwin.unwrap();
    let mut swapped = ww.pair.clone();
    std::mem::swap(&mut swapped.first, &mut swapped.second);
    let w = tempered_weights(&models, &draw(6));
    let a = models.scpo_loss(&ww.pair, ww.t, &ww.eps, &w).unwrap();
    let b = models.scpo_loss(&swapped, ww.t, &ww.eps, &w).unwrap();
    assert!((a - b).abs() < 1e-12);
    assert!(a > LN2);
}

/// A scene whose only foreground pixel is (1, 2).
fn single_pixel_scene() -> Scene {
    let rect = Rect { top: 1, left: 2, bottom: 1, right: 2 };
    Scene {
        image: gaussian(40, 4, 4),
        mask: Mask::with_foreground_rect(4, 4, rect),
        class: 0,
        oracle_offset: 0,
    }
}

#[test]
fn inpainting_of_one_foreground_pixel() {
    let f = fixture(Architecture::Convolutional, 5);
    let models = f.models();
    let sc = single_pixel_scene();
    let eps = gaussian(41, 4, 4);
    let b = models.branch(&sc, 17, &eps).unwrap();
    let pred = Denoiser::new(&f.spec, &f.policy).unwrap().predict(b.query()).unwrap();
    let d = eps.get(1, 2) - pred.get(1, 2);
    let got = models.foreground_inpainting_loss(&sc, 17, &eps).unwrap();
    assert!((got - d * d).abs() < 1e-15);
}

#[test]
fn inpainting_vanishes_for_a_perfect_foreground() {
    let f = fixture(Architecture::Pointwise, 6);
    // Zero weights and output bias 0.7 predict 0.7 everywhere.
    let mut policy = ParamVector::zeros(f.policy.len());
    let bias = f.spec.layout().unwrap().output_bias.start;
    policy.as_mut_slice()[bias] = 0.7;
    let models = PreferenceModels::new(&f.spec, &policy, &policy, &f.schedule);
    let item = draw(7);
    let eps = Image::filled(32, 32, 0.7);
    assert_eq!(models.foreground_inpainting_loss(&item.pair.win, item.t, &eps).unwrap(), 0.0);
    let b = models.maskdpo_loss(&item.pair, item.t, &eps, &LossWeights::default()).unwrap();
    assert_eq!(b.total, LN2);

    // Zero rewards and a perfect foreground leave ln 2 per preference term.
    let mut item = item;
    item.eps = eps.clone();
    let c = item.crop.as_mut().unwrap();
    c.eps_win = Image::filled(24, 24, 0.7);
    c.eps_lose = Image::filled(24, 24, 0.7);
    let w = LossWeights::default();
    let total = models.total_loss(std::slice::from_ref(&item), &w).unwrap();
    assert!((total.total - (LN2 + w.gamma * LN2 + w.mu * LN2)).abs() < 1e-12);
}

#[test]
fn compositional_oracles() {
    let f = fixture(Architecture::Convolutional, 8);
    let models = f.models();
    for seed in 0..4 {
        let item = draw(100 + seed);
        let w = tempered_weights(&models, &item);
        let (p, t, eps) = (&item.pair, item.t, &item.eps);
        let r = |s: &Scene, t, e: &Image, region| models.implicit_reward_surrogate(s, t, e, region).unwrap();

        let mpo = dpo_loss(&RewardGap::new(r(&p.win, t, eps, Region::Background), r(&p.lose, t, eps, Region::Background)), &w).unwrap();
        assert!((models.mpo_loss(p, t, eps, &w).unwrap() - mpo).abs() < 1e-12);
        let dpo = dpo_loss(&RewardGap::new(r(&p.win, t, eps, Region::Full), r(&p.lose, t, eps, Region::Full)), &w).unwrap();
        assert!((models.standard_dpo_loss(p, t, eps, &w).unwrap() - dpo).abs() < 1e-12);

        let inpaint = models.foreground_inpainting_loss(&p.win, t, eps).unwrap();
        let md = models.maskdpo_loss(p, t, eps, &w).unwrap();
        assert!((md.total - (mpo + w.lambda * inpaint)).abs() < 1e-12);
        let no_lambda = LossWeights { lambda: 0.0, ..w };
        assert!((models.maskdpo_loss(p, t, eps, &no_lambda).unwrap().total - mpo).abs() < 1e-12);

        let c = item.crop.as_ref().unwrap();
        let capo = dpo_loss(
            &RewardGap::new(
                r(&c.pair.win_crop, t, &c.eps_win, Region::Full),
                r(&c.pair.lose_crop, t, &c.eps_lose, Region::Full),
            ),
            &w,
        )
        .unwrap();
        assert!((models.capo_loss(&c.pair, t, &c.eps_win, &c.eps_lose, &w).unwrap() - capo).abs() < 1e-12);

        let ww = item.winwin.as_ref().unwrap();
        let scpo = commonality_loss(
            r(&ww.pair.first, ww.t, &ww.eps, Region::Full),
            r(&ww.pair.second, ww.t, &ww.eps, Region::Full),
            &w,
        )
        .unwrap();
        assert!((models.scpo_loss(&ww.pair, ww.t, &ww.eps, &w).unwrap() - scpo).abs() < 1e-12);

        let sscpo = commonality_loss(r(&p.win, t, eps, Region::Foreground), r(&p.lose, t, eps, Region::Foreground), &w).unwrap();
        assert!((models.subject_scpo_loss(p, t, eps, &w).unwrap() - sscpo).abs() < 1e-12);

        let total = models.total_loss(std::slice::from_ref(&item), &w).unwrap();
        let expected = mpo + w.lambda * inpaint + w.gamma * capo + w.mu * scpo;
        assert!((total.total - expected).abs() < 1e-9);
        assert!((total.total - total.weighted_sum(&w)).abs() < 1e-12);
        assert_eq!(total.term(LossTerm::Mpo), Some(mpo));

        let plain = LossWeights { gamma: 0.0, mu: 0.0, ..w };
        let t0 = models.total_loss(std::slice::from_ref(&item), &plain).unwrap();
        assert!((t0.total - md.total).abs() < 1e-12);
    }
}

#[test]
fn standard_dpo_batch_carries_only_dpo() {
    let f = fixture(Architecture::Pointwise, 9);
    let models = f.models();
    let batch = [draw(1), draw(2)];
    let obj = models.objective(&batch, Variant::StandardDpo).unwrap();
    let b = obj.value(&f.spec, &f.policy, &LossWeights::default()).unwrap();
    assert_eq!(b.terms.keys().copied().collect::<Vec<_>>(), vec![LossTerm::Dpo]);
    let mut no_ww = batch.clone();
    no_ww[1].winwin = None;
    assert!(matches!(models.objective(&no_ww, Variant::Full), Err(Error::Config(_))));
}

#[test]
fn every_loss_matches_central_differences() {
    for (arch, seed) in [(Architecture::Pointwise, 20), (Architecture::Convolutional, 21)] {
        let f = fixture(arch, seed);
        let models = f.models();
        let item = draw(seed);
        let w = tempered_weights(&models, &item);
        for (name, obj, standalone) in named_objectives(&models, &item, &w) {
            let value = obj.value(&f.spec, &f.policy, &w).unwrap().total;
            assert!((value - standalone).abs() < 1e-12, "{name}: {value} vs {standalone}");
            let worst = worst_fd_error(&obj, &f.spec, &f.policy, &w, 100, seed);
            assert!(worst <= 1e-4, "{arch:?} {name}: {worst}");
        }
    }
}

#[test]
fn reference_branch_contributes_no_gradient() {
    // With the policy equal to the reference, a gradient that also flowed
    // through the reference would cancel and vanish.
    let f = fixture(Architecture::Convolutional, 22);
    let models = PreferenceModels::new(&f.spec, &f.reference, &f.reference, &f.schedule);
    let item = draw(22);
    let w = LossWeights { beta: 0.01, ..LossWeights::default() };
    let obj = &named_objectives(&models, &item, &w)[0].1;
    let (b, grad) = obj.value_and_grad(&f.spec, &f.reference, &w).unwrap();
    assert_eq!(b.total, LN2);
    assert!(grad.norm() > 1e-6);
    assert!(worst_fd_error(obj, &f.spec, &f.reference, &w, 50, 22) <= 1e-4);
}

#[test]
fn mpo_gradient_vanishes_on_the_foreground() {
    let f = fixture(Architecture::Convolutional, 30);
    let models = f.models();
    let model = Denoiser::new(&f.spec, &f.policy).unwrap();
    for seed in 0..20 {
        let item = draw(300 + seed);
        let mut obj = Objective::new();
        let win = obj.add_branch(models.branch(&item.pair.win, item.t, &item.eps).unwrap());
        let lose = obj.add_branch(models.branch(&item.pair.lose, item.t, &item.eps).unwrap());
        obj.add_term(LossTerm::Mpo, Term::Preference { win, lose, region: Region::Background });
        let preds: Vec<Image> = obj.branches().iter().map(|b| model.predict(b.query()).unwrap()).collect();
        let (_, grads) = obj.evaluate(&preds, &tempered_weights(&models, &item)).unwrap();
        let mut background_nonzero = false;
        for g in &grads {
            for (v, &m) in g.data().iter().zip(item.pair.win.mask.data()) {
                if m == 0 {
                    assert_eq!(*v, 0.0);
                } else {
                    background_nonzero |= *v != 0.0;
                }
            }
        }
        assert!(background_nonzero);
    }
}

/// Win and lose foreground gradients of standard DPO, backpropagated
/// separately through the policy.
#[test]
fn pointwise_shared_noise_branches_cancel() {
    let f = fixture(Architecture::Pointwise, 40);
    let cfg = SceneConfig::default();
    for seed in 0..10 {
        let pair = make_preference_pair(&cfg, seed, (seed % 4) as u32).unwrap();
        let eps = gaussian(seed, 32, 32);
        let (gw, gl) = foreground_branch_grads(&f, &pair, 1 + (seed as usize * 13) % 100, &eps, &eps);
        let cosine = gw.dot(&gl) / (gw.norm() * gl.norm());
        let mut sum = gw.clone();
        sum.add_assign(&gl);
        assert!((cosine + 1.0).abs() < 1e-6, "cosine {cosine}");
        assert!(sum.norm() <= 1e-9 * gw.norm());
        assert!(gw.norm() > 0.0);

        let report = gradient_conflict(
            &f.models(),
            &pair,
            1 + (seed as usize * 13) % 100,
            BranchNoise::Shared(&eps),
            ConflictLoss::StandardDpo,
            &LossWeights { beta: 0.1, ..LossWeights::default() },
        )
        .unwrap();
        assert!((report.cosine.unwrap() + 1.0).abs() < 1e-6);
        assert!(report.sum_norm <= 1e-9 * report.win_norm);
    }
}

#[test]
fn independent_noise_leaves_a_residual() {
    let f = fixture(Architecture::Pointwise, 41);
    let pair = make_preference_pair(&SceneConfig::default(), 3, 1).unwrap();
    let (gw, gl) = foreground_branch_grads(&f, &pair, 50, &gaussian(1, 32, 32), &gaussian(2, 32, 32));
    let mut sum = gw.clone();
    sum.add_assign(&gl);
    assert!(gw.norm() > 0.0 && gl.norm() > 0.0);
    assert!(sum.norm() > 1e-3 * gw.norm());
}

#[test]
fn mpo_has_no_foreground_branch_gradient() {
    let f = fixture(Architecture::Convolutional, 42);
    let pair = make_preference_pair(&SceneConfig::default(), 4, 2).unwrap();
    let eps = gaussian(3, 32, 32);
    let report = gradient_conflict(&f.models(), &pair, 30, BranchNoise::Shared(&eps), ConflictLoss::Mpo, &LossWeights::default()).unwrap();
    assert_eq!(report.cosine, None);
    assert_eq!(report.win_norm, 0.0);
    assert_eq!(report.lose_norm, 0.0);
}

proptest! {
    #[test]
    fn neg_log_one_minus_sigmoid_is_softplus(x in -30.0f64..30.0) {
        // 1 − σ(x) written as σ(−x), which has no cancellation for large x.
        let one_minus = 1.0 / (1.0 + x.exp());
        let direct = -one_minus.ln();
        prop_assert!((direct - softplus(x)).abs() < 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn dpo_decreases_and_scpo_increases(a in -5.0f64..5.0, gap in 1e-3f64..5.0) {
        let w = LossWeights { beta: 1.0, ..LossWeights::default() };
        let lo = dpo_loss(&RewardGap::new(a, 0.0), &w).unwrap();
        let hi = dpo_loss(&RewardGap::new(a + gap, 0.0), &w).unwrap();
        prop_assert!(hi < lo);
        let near = commonality_loss(a.abs(), 0.0, &w).unwrap();
        let far = commonality_loss(a.abs() + gap, 0.0, &w).unwrap();
        prop_assert!(far > near);
        prop_assert_eq!(commonality_loss(a, gap, &w).unwrap(), commonality_loss(gap, a, &w).unwrap());
    }
}
