//! The `inpaint-dpo` command.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use inpaint_dpo_core::losses::Variant;
use inpaint_dpo_core::rng::{self, stream};
use inpaint_dpo_core::scene::{differentiated_crop, rationality_score};
use rand::RngCore;

use crate::checkpoint::{hash_warning, read_checkpoint, write_checkpoint};
use crate::config::LabConfig;
use crate::error::{LabError, Result};
use crate::harness::{self, AblationFiles, Dataset};
use crate::pack::{read_pack, write_pack, Pack};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "inpaint-dpo", version, about = "Preference optimization for toy foreground-conditioned inpainting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Training steps of the phase the subcommand runs.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PackKind {
    Scenes,
    WinLose,
    WinWin,
    Cropped,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a data pack.
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "win-lose")]
        kind: PackKind,
        /// Number of records (defaults to the config's pool size).
        #[arg(long)]
        pairs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain a denoiser on a scene pack (generated from the seed if absent).
    Pretrain {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Preference fine-tuning of a checkpoint.
    Train {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Win-lose and, when needed, win-win packs (comma separated).
        #[arg(long, value_delimiter = ',', required = true)]
        packs: Vec<PathBuf>,
        #[arg(long, value_parser = parse_variant, default_value = "full")]
        variant: Variant,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Sample from a checkpoint and write metric means.
    Eval {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Label written into the variant column.
        #[arg(long, default_value = "model")]
        label: String,
        #[command(flatten)]
        common: Common,
    },
    /// Win/lose gradient conflict sweep.
    Conflict {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate every variant from one pretrained checkpoint.
    Ablate {
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Pretrained checkpoint; pretrains into the output directory when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        packs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variant: Vec<Variant>,
        #[command(flatten)]
        common: Common,
    },
    /// Elo ranking from an ablation's per-sample scores.
    Rank {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Per-record CSV of a pack for plotting.
    Export {
        #[arg(long)]
        pack: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::from_name(s).ok_or_else(|| format!("unknown variant `{s}` (standard, maskdpo, capo, full, subject-scpo)"))
}

fn load_config(common: &Common) -> Result<LabConfig> {
    let mut cfg = match &common.config {
        Some(p) => LabConfig::from_file(p)?,
        None => LabConfig::default(),
    };
    if let Some(v) = common.beta {
        cfg.weights.beta = v;
    }
    if let Some(v) = common.lambda {
        cfg.weights.lambda = v;
    }
    if let Some(v) = common.gamma {
        cfg.weights.gamma = v;
    }
    if let Some(v) = common.mu {
        cfg.weights.mu = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Splits packs by kind: (win-lose, win-win).
fn load_packs(paths: &[PathBuf]) -> Result<Dataset> {
    let mut data = Dataset {
        scenes: Vec::new(),
        win_lose: Vec::new(),
        win_win: Vec::new(),
    };
    for p in paths {
        match read_pack(p)? {
            Pack::WinLose(v) => data.win_lose.extend(v),
            Pack::WinWin(v) => data.win_win.extend(v),
            Pack::Scenes(v) => data.scenes.extend(v),
            Pack::Cropped(_) => {
                return Err(LabError::Config(format!(
                    "{}: cropped packs are built on the fly during training",
                    p.display()
                )))
            }
        }
    }
    Ok(data)
}

fn gen_data(cfg: &LabConfig, seed: u64, kind: PackKind, n: Option<usize>, out: &Path) -> Result<()> {
    let pack = match kind {
        PackKind::Scenes => {
            let mut c = cfg.clone();
            c.pretrain_scenes = n.unwrap_or(cfg.pretrain_scenes);
            Pack::Scenes(harness::generate_scenes(&c, seed)?)
        }
        PackKind::WinLose => Pack::WinLose(harness::generate_win_lose(cfg, n.unwrap_or(cfg.pairs), seed)?),
        PackKind::WinWin => Pack::WinWin(harness::generate_win_win(cfg, n.unwrap_or(cfg.winwin_pairs), seed)?),
        PackKind::Cropped => {
            let pairs = harness::generate_win_lose(cfg, n.unwrap_or(cfg.pairs), seed)?;
            let mut r = rng::derive(seed, stream::CROP);
            let mut crops = Vec::with_capacity(pairs.len());
            for p in &pairs {
                let c = &cfg.crop;
                match differentiated_crop(p, r.next_u64(), c.height, c.width, c.min_offset) {
                    Ok(cp) => crops.push(cp),
                    Err(inpaint_dpo_core::Error::NoFeasibleOffset { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            Pack::Cropped(crops)
        }
    };
    write_pack(out, &pack)
}

fn export(pack: &Path, out: &Path) -> Result<()> {
    let pack = read_pack(pack)?;
    let mut s = String::from("record,role,class,oracle_offset,rationality,subject_top,subject_left,subject_bottom,subject_right\n");
    let roles: Vec<(usize, &str, &inpaint_dpo_core::scene::Scene)> = match &pack {
        Pack::Scenes(v) => v.iter().enumerate().map(|(i, s)| (i, "scene", s)).collect(),
        Pack::WinLose(v) => v
            .iter()
            .enumerate()
            .flat_map(|(i, p)| [(i, "win", &p.win), (i, "lose", &p.lose)])
            .collect(),
        Pack::WinWin(v) => v
            .iter()
            .enumerate()
            .flat_map(|(i, p)| [(i, "first", &p.first), (i, "second", &p.second)])
            .collect(),
        Pack::Cropped(v) => v
            .iter()
            .enumerate()
            .flat_map(|(i, p)| [(i, "win_crop", &p.win_crop), (i, "lose_crop", &p.lose_crop)])
            .collect(),
    };
    for (i, role, scene) in roles {
        let score = rationality_score(scene).map_or_else(|_| "nan".to_string(), |v| format!("{v:.6}"));
        let b = scene
            .subject()
            .ok_or_else(|| LabError::Format(format!("record {i} has no subject")))?;
        s.push_str(&format!(
            "{i},{role},{},{},{score},{},{},{},{}\n",
            scene.class, scene.oracle_offset, b.top, b.left, b.bottom, b.right
        ));
    }
    write_text(out, &s)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            seed,
            out,
            kind,
            pairs,
            common,
        } => gen_data(&load_config(&common)?, seed, kind, pairs, &out),
        Command::Pretrain {
            seed,
            out,
            scenes,
            history,
            common,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.steps {
                cfg.pretrain.steps = s;
            }
            let scenes = match scenes {
                Some(p) => read_pack(&p)?.into_scenes()?,
                None => harness::generate_scenes(&cfg, seed)?,
            };
            let (ckpt, hist) = harness::pretrain_model(&cfg, &scenes, seed)?;
            write_checkpoint(&out, &ckpt)?;
            if let Some(h) = history {
                write_text(&h, &report::history_csv(&hist))?;
            }
            Ok(())
        }
        Command::Train {
            seed,
            checkpoint,
            packs,
            variant,
            out,
            history,
            common,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.steps {
                cfg.dpo.steps = s;
            }
            let ckpt = read_checkpoint(&checkpoint)?;
            let data = load_packs(&packs)?;
            if let Some(w) = hash_warning(&ckpt, cfg.dpo_config(seed, variant).hash()) {
                eprintln!("{w}");
            }
            let (trained, hist) = harness::train_variant(&cfg, &ckpt, &data, variant, seed)?;
            write_checkpoint(&out, &trained)?;
            if let Some(h) = history {
                write_text(&h, &report::history_csv(&hist))?;
            }
            Ok(())
        }
        Command::Eval {
            seed,
            checkpoint,
            out,
            label,
            common,
        } => {
            let cfg = load_config(&common)?;
            let ckpt = read_checkpoint(&checkpoint)?;
            let summary = harness::evaluate_model(&cfg, &ckpt, seed)?;
            write_text(&out, &report::metrics_csv(&label, &summary, seed))
        }
        Command::Conflict {
            seed,
            pairs,
            out,
            common,
        } => {
            let cfg = load_config(&common)?;
            let cells = harness::run_conflict_study(&cfg, pairs, seed)?;
            write_text(&out, &report::conflict_csv(&cells))
        }
        Command::Ablate {
            seed,
            out,
            checkpoint,
            packs,
            variant,
            common,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.steps {
                cfg.dpo.steps = s;
            }
            let variants = if variant.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variant
            };
            fs::create_dir_all(&out)?;
            let (ckpt_path, wl_path, ww_path) = match checkpoint {
                Some(c) => {
                    let (mut wl, mut ww) = (None, None);
                    for p in &packs {
                        match read_pack(p)?.kind() {
                            crate::pack::RecordKind::WinLose => wl = Some(p.clone()),
                            crate::pack::RecordKind::WinWin => ww = Some(p.clone()),
                            _ => return Err(LabError::Config(format!("{}: unexpected pack kind", p.display()))),
                        }
                    }
                    let wl = wl.ok_or_else(|| LabError::Config("ablate with --checkpoint needs a win-lose pack".into()))?;
                    (c, wl, ww)
                }
                None => {
                    harness::prepare(&cfg, seed, &out)?;
                    (
                        out.join("pretrained.idpc"),
                        out.join("win_lose.idp"),
                        Some(out.join("win_win.idp")),
                    )
                }
            };
            let files = AblationFiles {
                checkpoint: &ckpt_path,
                win_lose: &wl_path,
                win_win: ww_path.as_deref(),
            };
            let rep = harness::run_ablation(&cfg, &variants, seed, &files, &out)?;
            write_text(&out.join("metrics.csv"), &report::ablation_metrics_csv(&rep))?;
            print!("{}", report::ablation_csv(&rep));
            Ok(())
        }
        Command::Rank {
            seed,
            samples,
            out,
            common,
        } => {
            let cfg = load_config(&common)?;
            let text = fs::read_to_string(&samples)
                .map_err(|e| LabError::Config(format!("cannot read {}: {e}", samples.display())))?;
            let rep = report::parse_samples_csv(&text)?;
            let table = harness::rank_variants(&rep, cfg.elo_rounds, seed)?;
            write_text(&out, &report::elo_csv(&table))
        }
        Command::Export { pack, out } => export(&pack, &out),
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 for usage and configuration errors,
/// 2 for runtime failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                1
            } else {
                2
            }
        }
    }
}
