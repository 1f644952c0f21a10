use inpaint_dpo::config::LabConfig;
use inpaint_dpo::harness::{self, AblationReport, AblationRow};
use inpaint_dpo::report;
use inpaint_dpo::LabError;
use inpaint_dpo_core::losses::Variant;
use inpaint_dpo_core::metrics::EvalSummary;
use inpaint_dpo_core::nn::Architecture;

fn small() -> LabConfig {
    let mut c = LabConfig::default();
    c.apply_text(
        "hidden_channels = 4\ntime_embed_dim = 4\nschedule_steps = 10\npretrain_scenes = 8\n\
         pairs = 4\nwinwin_pairs = 4\npretrain_steps = 4\nsteps = 3\neval_samples = 3\n",
    )
    .unwrap();
    c
}

#[test]
fn config_text_round_trips() {
    let mut c = small();
    c.architecture = Architecture::Pointwise;
    c.weights.mu = 0.25;
    let mut back = LabConfig::default();
    back.apply_text(&c.canonical()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash(), c.hash());
    assert_ne!(LabConfig::default().hash(), c.hash());
}

#[test]
fn config_errors() {
    let mut c = LabConfig::default();
    assert!(matches!(c.apply_text("beta 3"), Err(LabError::Config(_))));
    assert!(matches!(c.apply_text("beta = x"), Err(LabError::Config(_))));
    assert!(matches!(c.apply_text("architecture = mlp"), Err(LabError::Config(_))));
    c.apply_text("# comment\n\n  lambda = 3 # trailing\n").unwrap();
    assert_eq!(c.weights.lambda, 3.0);
    c.pairs = 0;
    assert!(c.validate().is_err());
    assert!(LabConfig::default().validate().is_ok());
}

#[test]
fn datasets_are_reproducible_per_seed() {
    let c = small();
    let a = harness::generate_dataset(&c, 1).unwrap();
    assert_eq!(a, harness::generate_dataset(&c, 1).unwrap());
    assert_ne!(a, harness::generate_dataset(&c, 2).unwrap());
    assert_eq!((a.scenes.len(), a.win_lose.len(), a.win_win.len()), (8, 4, 4));
    let k = c.pretrain_offset as i16;
    assert!(a.scenes.iter().all(|s| (-k..=k).contains(&s.oracle_offset)));
}

#[test]
fn ablation_is_deterministic() {
    let c = small();
    let data = harness::generate_dataset(&c, 7).unwrap();
    let (pre, _) = harness::pretrain_model(&c, &data.scenes, 7).unwrap();
    let run = || harness::run_ablation_with(&c, &pre, &data, &Variant::ALL, 7).unwrap();
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.rows.len(), 6);
    assert!(a.rows.iter().all(|r| r.summary.len() == 3));
    let hashes: std::collections::HashSet<_> = a.rows.iter().map(|r| r.config_hash).collect();
    assert_eq!(hashes.len(), 6);

    let parsed = report::parse_samples_csv(&report::samples_csv(&a)).unwrap();
    assert_eq!(parsed, a);
}

fn report_with(scores: &[(&str, Vec<f64>)]) -> AblationReport {
    AblationReport {
        seed: 0,
        rows: scores
            .iter()
            .map(|(name, r)| AblationRow {
                variant: Variant::from_name(name),
                summary: EvalSummary {
                    rationality: r.clone(),
                    foreground_mse: vec![0.0; r.len()],
                    oer: vec![0.0; r.len()],
                    coherence: vec![0.0; r.len()],
                },
                seed: 0,
                config_hash: 0,
            })
            .collect(),
    }
}

#[test]
fn ranking_follows_dominance() {
    let rep = report_with(&[
        ("pretrained", vec![0.1, 0.2, 0.0]),
        ("maskdpo", vec![0.5, 0.6, 0.4]),
        ("full", vec![0.9, 0.8, 0.7]),
    ]);
    let table = harness::rank_variants(&rep, 50, 3).unwrap();
    let order: Vec<String> = table.ranking().into_iter().map(|(n, _)| n).collect();
    assert_eq!(order, ["full", "maskdpo", "pretrained"]);
    assert!((table.total_rating() - 3000.0).abs() < 1e-9);
    assert_eq!(table.get("full").unwrap().appearances, 100);
    assert_eq!(table, harness::rank_variants(&rep, 50, 3).unwrap());

    // Ties change nothing.
    let tied = report_with(&[("standard", vec![0.3; 4]), ("capo", vec![0.3; 4])]);
    let t = harness::rank_variants(&tied, 30, 1).unwrap();
    assert_eq!(t.rating("standard"), Some(1000.0));
    assert_eq!(t.rating("capo"), Some(1000.0));
}

#[test]
fn conflict_study_separates_the_cells() {
    let c = small();
    let cells = harness::run_conflict_study(&c, 6, 2).unwrap();
    assert_eq!(cells.len(), 8);
    for cell in &cells {
        assert_eq!(cell.cosines.len() + cell.zero_norm, 6);
    }
    let find = |arch, shared, mpo: bool| {
        cells
            .iter()
            .find(|x| x.architecture == arch && x.shared_noise == shared && matches!(x.loss, inpaint_dpo_core::metrics::ConflictLoss::Mpo) == mpo)
            .unwrap()
    };
    let exact = find(Architecture::Pointwise, true, false);
    assert!(exact.cosines.iter().all(|c| (c + 1.0).abs() < 1e-6));
    assert_eq!(find(Architecture::Pointwise, true, true).zero_norm, 6);
    let loose = find(Architecture::Pointwise, false, false);
    assert!(loose.cosines.iter().any(|c| (c + 1.0).abs() > 1e-6));
}
