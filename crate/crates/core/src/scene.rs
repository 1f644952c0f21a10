//! Procedural scenes and the analytic spatial-rationality oracle.
//!
//! A scene is a bright rectangular subject (the given foreground) standing
//! in front of a two-tone background: a dim "sky" above a ground line and a
//! brighter striped "ground" below it. The scene is rational when the ground
//! line meets the subject's bottom edge; the further apart they are, the
//! more the subject floats or sinks.
//!
//! Win/lose pairs share the subject, the class and the background texture,
//! and differ only in where the ground line sits.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::image::{Image, Mask, Rect};
use crate::rng::{self, stream, Rng};

/// Score thresholds for preference labels: `exp(-0.5)` admits offsets of at
/// most one row, `exp(-2)` rejects offsets under four rows.
pub const WIN_THRESHOLD: f64 = 0.606_530_659_712_633_4;
pub const LOSE_THRESHOLD: f64 = 0.135_335_283_236_612_7;

/// Smallest mean row step accepted as a ground line.
pub const MIN_EDGE_STRENGTH: f64 = 0.1;
/// Columns on either side of the subject that the ground-line scan covers.
pub const GROUND_SCAN_MARGIN: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Inclusive range of subject side lengths.
    pub subject_min: usize,
    pub subject_max: usize,
    /// Inclusive range of |offset| for losing samples.
    pub lose_offset_min: i32,
    pub lose_offset_max: i32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            num_classes: 4,
            subject_min: 6,
            subject_max: 10,
            lose_offset_min: 4,
            lose_offset_max: 8,
        }
    }
}

/// Image, mask (1 = background) and condition class. `oracle_offset` is the
/// signed ground-line offset used to render the scene; it is carried for
/// inspection only.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub mask: Mask,
    pub class: u32,
    pub oracle_offset: i16,
}

impl Scene {
    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    /// Bounding box of the foreground subject.
    pub fn subject(&self) -> Option<Rect> {
        self.mask.zeros_bbox()
    }

    /// Checks dims agree and that the foreground is neither empty nor the
    /// whole image.
    pub fn validate(&self) -> Result<()> {
        self.mask.ensure_dims(self.image.dims(), "mask")?;
        let fg = self.mask.count_zeros();
        if fg == 0 || fg == self.image.len() {
            return Err(Error::DegenerateMask(format!(
                "foreground covers {fg} of {} pixels",
                self.image.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferencePair {
    pub win: Scene,
    pub lose: Scene,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WinWinPair {
    pub first: Scene,
    pub second: Scene,
}

/// Two crops of a win/lose pair, each containing the whole subject at a
/// different relative position. `offsets` are the top-left corners of the
/// win and lose windows in the uncropped images.
#[derive(Clone, Debug, PartialEq)]
pub struct CroppedPair {
    pub win_crop: Scene,
    pub lose_crop: Scene,
    pub offsets: [(usize, usize); 2],
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    subject: Rect,
    subject_level: f64,
}

fn sky_level(class: u32) -> f64 {
    0.10 + 0.05 * (class % 4) as f64
}

fn ground_level(class: u32) -> f64 {
    0.45 + 0.05 * (class % 4) as f64
}

fn stripe_period(class: u32) -> usize {
    2 + (class % 3) as usize
}

/// Draws a subject of random size whose bottom row `b` keeps every ground
/// line `b + k`, `k ∈ offsets`, inside rows `[2, H - 2]`.
fn draw_layout(cfg: &SceneConfig, rng: &mut Rng, offsets: &[i32]) -> Result<Layout> {
    let (hh, ww) = (cfg.height as i32, cfg.width as i32);
    for &k in offsets {
        if k.abs() > hh / 2 {
            return Err(Error::Geometry(format!(
                "offset {k} exceeds half the height {}",
                hh / 2
            )));
        }
    }
    let sh = rng.random_range(cfg.subject_min..=cfg.subject_max) as i32;
    let sw = rng.random_range(cfg.subject_min..=cfg.subject_max) as i32;
    let kmin = *offsets.iter().min().unwrap_or(&0);
    let kmax = *offsets.iter().max().unwrap_or(&0);
    let lo = (sh - 1).max(2 - kmin);
    let hi = (hh - 1).min(hh - 2 - kmax);
    if lo > hi || sw > ww {
        return Err(Error::Geometry(format!(
            "no subject placement keeps ground lines for offsets {kmin}..={kmax} on the grid"
        )));
    }
    let bottom = rng.random_range(lo..=hi);
    let left = rng.random_range(0..=ww - sw);
    Ok(Layout {
        subject: Rect {
            top: (bottom - sh + 1) as usize,
            left: left as usize,
            bottom: bottom as usize,
            right: (left + sw - 1) as usize,
        },
        subject_level: rng.random_range(0.85..0.93),
    })
}

/// Renders a scene. Texture noise depends only on `texture_seed`, so two
/// renders with the same layout and texture differ only in the ground line.
fn render(cfg: &SceneConfig, layout: &Layout, class: u32, offset: i32, texture_seed: u64) -> Scene {
    let (h, w) = (cfg.height, cfg.width);
    let ground = (layout.subject.bottom as i32 + offset) as usize;
    let mut tex = rng::derive(texture_seed, stream::SCENE + 1);
    let phase = tex.random_range(0..stripe_period(class));
    let mut image = Image::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let jitter: f64 = tex.random_range(-0.02..0.02);
            let v = if layout.subject.contains(r, c) {
                let rr = r - layout.subject.top;
                let cc = c - layout.subject.left;
                layout.subject_level + if (rr + cc) % 3 == 0 { 0.05 } else { 0.0 }
            } else if r < ground {
                sky_level(class) + 0.04 * r as f64 / h as f64 + jitter
            } else if (r + phase) % stripe_period(class) == 0 {
                ground_level(class) + 0.04 + jitter
            } else {
                ground_level(class) + jitter
            };
            // f32-exact so scenes survive the pack format bit for bit.
            image.set(r, c, v as f32 as f64);
        }
    }
    Scene {
        image,
        mask: Mask::with_foreground_rect(h, w, layout.subject),
        class,
        oracle_offset: offset as i16,
    }
}

fn check_class(cfg: &SceneConfig, class: u32) -> Result<()> {
    if class as usize >= cfg.num_classes {
        return Err(Error::Geometry(format!(
            "class {class} outside [0, {})",
            cfg.num_classes
        )));
    }
    Ok(())
}

/// Scene whose ground line sits `rationality_offset` rows below the
/// subject's bottom row (negative: above).
pub fn gen_scene(cfg: &SceneConfig, seed: u64, class: u32, rationality_offset: i32) -> Result<Scene> {
    check_class(cfg, class)?;
    let mut r = rng::derive(seed, stream::SCENE);
    let layout = draw_layout(cfg, &mut r, &[rationality_offset])?;
    Ok(render(cfg, &layout, class, rationality_offset, seed))
}

/// Row index of the strongest mean intensity step between consecutive rows.
/// The scan uses columns within [`GROUND_SCAN_MARGIN`] of the subject's
/// column span (every column when there is no subject), and only pixels that
/// are background in both rows. The returned row is the first row below the
/// step.
pub fn detect_ground_row(image: &Image, mask: &Mask) -> Result<usize> {
    mask.ensure_dims(image.dims(), "mask")?;
    let (h, w) = image.dims();
    let cols = match mask.zeros_bbox() {
        Some(b) => b.left.saturating_sub(GROUND_SCAN_MARGIN)..(b.right + GROUND_SCAN_MARGIN + 1).min(w),
        None => 0..w,
    };
    let mut best: Option<(usize, f64)> = None;
    for r in 1..h {
        let mut sum = 0.0;
        let mut n = 0usize;
        for c in cols.clone() {
            if mask.get(r, c) && mask.get(r - 1, c) {
                sum += image.get(r, c) - image.get(r - 1, c);
                n += 1;
            }
        }
        if n == 0 {
            continue;
        }
        let step = (sum / n as f64).abs();
        if best.is_none_or(|(_, s)| step > s) {
            best = Some((r, step));
        }
    }
    match best {
        Some((r, s)) if s >= MIN_EDGE_STRENGTH => Ok(r),
        Some((_, s)) => Err(Error::Oracle(format!(
            "strongest row step {s:.4} is below {MIN_EDGE_STRENGTH}"
        ))),
        None => Err(Error::Oracle("no background rows to scan".into())),
    }
}

/// `exp(-|g - b| / 2)` for detected ground row `g` and subject bottom row `b`.
pub fn rationality_score(scene: &Scene) -> Result<f64> {
    let subject = scene
        .subject()
        .ok_or_else(|| Error::Oracle("scene has no foreground subject".into()))?;
    let g = detect_ground_row(&scene.image, &scene.mask)?;
    let gap = (g as f64 - subject.bottom as f64).abs();
    Ok(libm::exp(-gap / 2.0))
}

/// Win/lose pair: win offset in {-1, 0, 1}, lose offset of magnitude within
/// `[lose_offset_min, lose_offset_max]`; same subject, class and texture.
pub fn make_preference_pair(cfg: &SceneConfig, seed: u64, class: u32) -> Result<PreferencePair> {
    check_class(cfg, class)?;
    let mut r = rng::derive(seed, stream::PAIR);
    let win_offset = r.random_range(-1..=1);
    let magnitude = r.random_range(cfg.lose_offset_min..=cfg.lose_offset_max);
    let sign = if r.random_bool(0.5) { 1 } else { -1 };
    let layout = draw_layout(cfg, &mut r, &[win_offset, sign * magnitude])
        .or_else(|_| draw_layout(cfg, &mut r, &[win_offset, -sign * magnitude]))?;
    let lose_offset = if layout_fits(cfg, &layout, sign * magnitude) {
        sign * magnitude
    } else {
        -sign * magnitude
    };
    Ok(PreferencePair {
        win: render(cfg, &layout, class, win_offset, seed),
        lose: render(cfg, &layout, class, lose_offset, seed),
    })
}

fn layout_fits(cfg: &SceneConfig, layout: &Layout, offset: i32) -> bool {
    let g = layout.subject.bottom as i32 + offset;
    (2..=cfg.height as i32 - 2).contains(&g)
}

/// Two rational renders (offsets in {-1, 0, 1}) of one subject and class
/// with different background textures.
pub fn make_winwin_pair(cfg: &SceneConfig, seed: u64, class: u32) -> Result<WinWinPair> {
    check_class(cfg, class)?;
    let mut r = rng::derive(seed, stream::PAIR + 1);
    let a = r.random_range(-1..=1);
    let b = r.random_range(-1..=1);
    let layout = draw_layout(cfg, &mut r, &[a, b])?;
    let second_texture = seed ^ 0x9e37_79b9_7f4a_7c15;
    Ok(WinWinPair {
        first: render(cfg, &layout, class, a, seed),
        second: render(cfg, &layout, class, b, second_texture),
    })
}

fn crop_scene(scene: &Scene, top: usize, left: usize, h: usize, w: usize) -> Result<Scene> {
    Ok(Scene {
        image: scene.image.crop(top, left, h, w)?,
        mask: scene.mask.crop(top, left, h, w)?,
        class: scene.class,
        oracle_offset: scene.oracle_offset,
    })
}

/// Crops the win and lose images with two different windows, both of which
/// contain the whole subject, chosen uniformly among window pairs whose
/// corners differ by at least `min_offset` in L∞.
pub fn differentiated_crop(
    pair: &PreferencePair,
    seed: u64,
    crop_h: usize,
    crop_w: usize,
    min_offset: usize,
) -> Result<CroppedPair> {
    let (h, w) = pair.win.dims();
    let subject = pair
        .win
        .subject()
        .ok_or_else(|| Error::Geometry("pair has no foreground subject".into()))?;
    if crop_h < subject.height() || crop_w < subject.width() {
        return Err(Error::SubjectTooLarge {
            subject_h: subject.height(),
            subject_w: subject.width(),
            crop_h,
            crop_w,
        });
    }
    if crop_h > h || crop_w > w {
        return Err(Error::Geometry(format!(
            "crop {crop_h}x{crop_w} exceeds image {h}x{w}"
        )));
    }
    let tops = (subject.bottom + 1).saturating_sub(crop_h)..=subject.top.min(h - crop_h);
    let lefts = (subject.right + 1).saturating_sub(crop_w)..=subject.left.min(w - crop_w);
    let windows: Vec<(usize, usize)> = tops
        .flat_map(|t| lefts.clone().map(move |l| (t, l)))
        .collect();
    let mut candidates = Vec::new();
    for (i, a) in windows.iter().enumerate() {
        for (j, b) in windows.iter().enumerate() {
            if i != j && a.0.abs_diff(b.0).max(a.1.abs_diff(b.1)) >= min_offset {
                candidates.push((*a, *b));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoFeasibleOffset { min_offset });
    }
    let mut r = rng::derive(seed, stream::CROP);
    let (a, b) = candidates[r.random_range(0..candidates.len())];
    Ok(CroppedPair {
        win_crop: crop_scene(&pair.win, a.0, a.1, crop_h, crop_w)?,
        lose_crop: crop_scene(&pair.lose, b.0, b.1, crop_h, crop_w)?,
        offsets: [a, b],
    })
}
