//! End-to-end experiments: data generation, pretraining, the variant
//! ablation, the gradient-conflict sweep and Elo ranking.

use std::fs;
use std::path::Path;

use inpaint_dpo_core::losses::{LossWeights, PreferenceModels, Variant};
use inpaint_dpo_core::metrics::{
    elo_update, eval_scenes, evaluate, gradient_conflict, BranchNoise, ConflictLoss, DiffusionInpainter,
    EloTable, EvalSummary, ELO_K,
};
use inpaint_dpo_core::nn::{init_params, Architecture, ModelSpec};
use inpaint_dpo_core::rng::{self, normal_image, stream};
use inpaint_dpo_core::scene::{gen_scene, make_preference_pair, make_winwin_pair, PreferencePair, Scene, WinWinPair};
use inpaint_dpo_core::trainer::{
    digest_u64, dpo_train, pretrain, snapshot_reference, Checkpoint, History, PreferenceData,
};
use rand::{Rng as _, RngCore};

use crate::checkpoint::read_checkpoint;
use crate::config::LabConfig;
use crate::error::{LabError, Result};
use crate::pack::{read_pack, write_pack, Pack};
use crate::report;

/// Offsets between seed lineages of the generated packs.
const PAIR_SEED_SALT: u64 = 0x5041_4952;
const WINWIN_SEED_SALT: u64 = 0x5757_5757;

/// Pretraining scenes and the two preference pools of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub scenes: Vec<Scene>,
    pub win_lose: Vec<PreferencePair>,
    pub win_win: Vec<WinWinPair>,
}

pub fn generate_scenes(cfg: &LabConfig, seed: u64) -> Result<Vec<Scene>> {
    let mut r = rng::derive(seed, stream::SCENE);
    let k = cfg.pretrain_offset;
    (0..cfg.pretrain_scenes)
        .map(|i| {
            let offset = r.random_range(-k..=k);
            Ok(gen_scene(&cfg.scene, r.next_u64(), (i % cfg.scene.num_classes) as u32, offset)?)
        })
        .collect()
}

pub fn generate_win_lose(cfg: &LabConfig, n: usize, seed: u64) -> Result<Vec<PreferencePair>> {
    let mut r = rng::derive(seed ^ PAIR_SEED_SALT, stream::PAIR);
    (0..n)
        .map(|i| Ok(make_preference_pair(&cfg.scene, r.next_u64(), (i % cfg.scene.num_classes) as u32)?))
        .collect()
}

pub fn generate_win_win(cfg: &LabConfig, n: usize, seed: u64) -> Result<Vec<WinWinPair>> {
    let mut r = rng::derive(seed ^ WINWIN_SEED_SALT, stream::PAIR);
    (0..n)
        .map(|i| Ok(make_winwin_pair(&cfg.scene, r.next_u64(), (i % cfg.scene.num_classes) as u32)?))
        .collect()
}

pub fn generate_dataset(cfg: &LabConfig, seed: u64) -> Result<Dataset> {
    Ok(Dataset {
        scenes: generate_scenes(cfg, seed)?,
        win_lose: generate_win_lose(cfg, cfg.pairs, seed)?,
        win_win: generate_win_win(cfg, cfg.winwin_pairs, seed)?,
    })
}

pub fn pretrain_model(cfg: &LabConfig, scenes: &[Scene], seed: u64) -> Result<(Checkpoint, History)> {
    cfg.validate()?;
    Ok(pretrain(&cfg.model_spec(), scenes, &cfg.schedule()?, &cfg.pretrain_config(seed))?)
}

pub fn train_variant(
    cfg: &LabConfig,
    pretrained: &Checkpoint,
    data: &Dataset,
    variant: Variant,
    seed: u64,
) -> Result<(Checkpoint, History)> {
    let reference = snapshot_reference(pretrained);
    let packs = PreferenceData {
        win_lose: &data.win_lose,
        win_win: &data.win_win,
    };
    let out = dpo_train(pretrained, &reference, &packs, &cfg.schedule()?, &cfg.dpo_config(seed, variant))?;
    debug_assert_eq!(reference.digest(), reference.recompute_digest());
    Ok(out)
}

/// Samples `eval_samples` inpaintings from a model and scores them.
pub fn evaluate_model(cfg: &LabConfig, ckpt: &Checkpoint, seed: u64) -> Result<EvalSummary> {
    let schedule = cfg.schedule()?;
    let scenes = eval_scenes(&cfg.scene, cfg.eval_samples, seed)?;
    let gen = DiffusionInpainter {
        spec: &ckpt.spec,
        params: &ckpt.params,
        schedule: &schedule,
    };
    Ok(evaluate(&gen, &scenes, seed, cfg.segment_threshold)?)
}

/// One row of the ablation table. `variant` is `None` for the pretrained
/// baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Option<Variant>,
    pub summary: EvalSummary,
    pub seed: u64,
    pub config_hash: u64,
}

impl AblationRow {
    pub fn name(&self) -> &'static str {
        self.variant.map_or("pretrained", Variant::name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name() == name)
    }
}

/// Hash of everything that produced one row: the lab config, the variant
/// and the seed.
pub fn row_hash(cfg: &LabConfig, variant: Option<Variant>, seed: u64) -> u64 {
    let name = variant.map_or("pretrained", Variant::name);
    digest_u64(format!("{}variant = {name}\nseed = {seed}\n", cfg.canonical()).as_bytes())
}

/// Trains each variant from `pretrained` and evaluates it alongside the
/// pretrained baseline. All rows use the same seed, so they share training
/// pairs, noise draws, evaluation scenes and sampler noise.
pub fn run_ablation_with(
    cfg: &LabConfig,
    pretrained: &Checkpoint,
    data: &Dataset,
    variants: &[Variant],
    seed: u64,
) -> Result<AblationReport> {
    let mut rows = vec![AblationRow {
        variant: None,
        summary: evaluate_model(cfg, pretrained, seed)?,
        seed,
        config_hash: row_hash(cfg, None, seed),
    }];
    for &v in variants {
        let (ckpt, _) = train_variant(cfg, pretrained, data, v, seed)?;
        rows.push(AblationRow {
            variant: Some(v),
            summary: evaluate_model(cfg, &ckpt, seed)?,
            seed,
            config_hash: row_hash(cfg, Some(v), seed),
        });
    }
    Ok(AblationReport { seed, rows })
}

/// Inputs of a file-backed ablation.
#[derive(Clone, Debug)]
pub struct AblationFiles<'a> {
    pub checkpoint: &'a Path,
    pub win_lose: &'a Path,
    pub win_win: Option<&'a Path>,
}

/// File-backed ablation: reads the pretrained checkpoint and packs, runs
/// every variant and writes `ablation.csv` and `samples.csv` to `out_dir`.
pub fn run_ablation(
    cfg: &LabConfig,
    variants: &[Variant],
    base_seed: u64,
    files: &AblationFiles<'_>,
    out_dir: &Path,
) -> Result<AblationReport> {
    let pretrained = read_checkpoint(files.checkpoint)?;
    if pretrained.spec != cfg.model_spec() {
        return Err(LabError::Config("checkpoint architecture differs from the config".into()));
    }
    let win_lose = read_pack(files.win_lose)?.into_win_lose()?;
    let win_win = match files.win_win {
        Some(p) => read_pack(p)?.into_win_win()?,
        None => Vec::new(),
    };
    let data = Dataset {
        scenes: Vec::new(),
        win_lose,
        win_win,
    };
    let report = run_ablation_with(cfg, &pretrained, &data, variants, base_seed)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("ablation.csv"), report::ablation_csv(&report))?;
    fs::write(out_dir.join("samples.csv"), report::samples_csv(&report))?;
    Ok(report)
}

/// Generates all packs and the pretrained checkpoint for `seed` under
/// `dir`, returning their paths.
pub fn prepare(cfg: &LabConfig, seed: u64, dir: &Path) -> Result<(Dataset, Checkpoint)> {
    fs::create_dir_all(dir)?;
    let data = generate_dataset(cfg, seed)?;
    write_pack(&dir.join("scenes.idp"), &Pack::Scenes(data.scenes.clone()))?;
    write_pack(&dir.join("win_lose.idp"), &Pack::WinLose(data.win_lose.clone()))?;
    write_pack(&dir.join("win_win.idp"), &Pack::WinWin(data.win_win.clone()))?;
    let (ckpt, history) = pretrain_model(cfg, &data.scenes, seed)?;
    crate::checkpoint::write_checkpoint(&dir.join("pretrained.idpc"), &ckpt)?;
    fs::write(dir.join("pretrain_history.csv"), report::history_csv(&history))?;
    Ok((data, ckpt))
}

/// Pairwise matches between ablation rows decided by per-sample oracle
/// scores. Each round draws a sample index and plays every pair of rows in
/// a shuffled order; ties leave ratings untouched.
pub fn rank_variants(report: &AblationReport, rounds: usize, match_seed: u64) -> Result<EloTable> {
    let names: Vec<&str> = report.rows.iter().map(AblationRow::name).collect();
    let mut table = EloTable::new(&names);
    let n = report.rows.iter().map(|r| r.summary.len()).min().unwrap_or(0);
    if n == 0 || report.rows.len() < 2 {
        return Ok(table);
    }
    let mut r = rng::derive(match_seed, stream::MATCH);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for a in 0..report.rows.len() {
        for b in a + 1..report.rows.len() {
            pairs.push((a, b));
        }
    }
    for _ in 0..rounds {
        let i = r.random_range(0..n);
        for k in (1..pairs.len()).rev() {
            pairs.swap(k, r.random_range(0..=k));
        }
        for &(a, b) in &pairs {
            let (sa, sb) = (report.rows[a].summary.rationality[i], report.rows[b].summary.rationality[i]);
            if sa > sb {
                elo_update(&mut table, names[a], names[b], ELO_K)?;
            } else if sb > sa {
                elo_update(&mut table, names[b], names[a], ELO_K)?;
            }
        }
    }
    Ok(table)
}

/// Cosine statistics of one cell of the conflict sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct ConflictCell {
    pub architecture: Architecture,
    pub shared_noise: bool,
    pub loss: ConflictLoss,
    /// Cosines of pairs where both branches have non-zero norm.
    pub cosines: Vec<f64>,
    /// Pairs where a branch had zero norm.
    pub zero_norm: usize,
}

impl ConflictCell {
    pub fn mean_cosine(&self) -> Option<f64> {
        (!self.cosines.is_empty()).then(|| self.cosines.iter().sum::<f64>() / self.cosines.len() as f64)
    }
}

/// Sweeps {pointwise, convolutional} × {shared, independent noise} ×
/// {standard DPO, MPO} over `n_pairs` random pairs. Policy and reference
/// are two independent initializations so rewards are not trivially zero.
pub fn run_conflict_study(cfg: &LabConfig, n_pairs: usize, seed: u64) -> Result<Vec<ConflictCell>> {
    let schedule = cfg.schedule()?;
    let weights = LossWeights {
        beta: 1.0,
        ..cfg.weights
    };
    let pairs = generate_win_lose(cfg, n_pairs, seed)?;
    let mut r = rng::derive(seed, stream::CONFLICT);
    let draws: Vec<_> = pairs
        .iter()
        .map(|p| {
            let (h, w) = p.win.dims();
            let t = r.random_range(1..=schedule.steps());
            (t, normal_image(&mut r, h, w), normal_image(&mut r, h, w))
        })
        .collect();
    let mut cells = Vec::new();
    for arch in [Architecture::Pointwise, Architecture::Convolutional] {
        let spec = ModelSpec {
            architecture: arch,
            ..cfg.model_spec()
        };
        let policy = init_params(&spec, seed)?;
        let reference = init_params(&spec, seed.wrapping_add(1))?;
        let models = PreferenceModels::new(&spec, &policy, &reference, &schedule);
        for shared in [true, false] {
            for loss in [ConflictLoss::StandardDpo, ConflictLoss::Mpo] {
                let mut cell = ConflictCell {
                    architecture: arch,
                    shared_noise: shared,
                    loss,
                    cosines: Vec::new(),
                    zero_norm: 0,
                };
                for (pair, (t, e1, e2)) in pairs.iter().zip(&draws) {
                    let noise = if shared {
                        BranchNoise::Shared(e1)
                    } else {
                        BranchNoise::Independent { win: e1, lose: e2 }
                    };
                    let rep = gradient_conflict(&models, pair, *t, noise, loss, &weights)?;
                    match rep.cosine {
                        Some(c) => cell.cosines.push(c),
                        None => cell.zero_norm += 1,
                    }
                }
                cells.push(cell);
            }
        }
    }
    Ok(cells)
}
