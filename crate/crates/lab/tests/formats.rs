use inpaint_dpo::checkpoint;
use inpaint_dpo::pack::{self, Pack, RecordKind};
use inpaint_dpo::LabError;
use inpaint_dpo_core::nn::{init_params, ModelSpec};
use inpaint_dpo_core::scene::{
    differentiated_crop, gen_scene, make_preference_pair, make_winwin_pair, Scene, SceneConfig,
};
use inpaint_dpo_core::trainer::Checkpoint;

/// Packs store pixels as f32; pre-round so decoding gives back equal values.
fn f32_exact(mut s: Scene) -> Scene {
    s.image = s.image.map(|v| v as f32 as f64);
    s
}

fn packs() -> Vec<Pack> {
    let cfg = SceneConfig::default();
    let scenes = (0..3).map(|i| f32_exact(gen_scene(&cfg, i, i as u32, 2 - i as i32).unwrap())).collect();
    let mut win_lose = Vec::new();
    for i in 0..3 {
        let mut p = make_preference_pair(&cfg, i, 1).unwrap();
        p.win = f32_exact(p.win);
        p.lose = f32_exact(p.lose);
        win_lose.push(p);
    }
    let win_win = (0..2)
        .map(|i| {
            let mut p = make_winwin_pair(&cfg, i, 3).unwrap();
            p.first = f32_exact(p.first);
            p.second = f32_exact(p.second);
            p
        })
        .collect();
    let cropped = win_lose
        .iter()
        .filter_map(|p| differentiated_crop(p, 7, 24, 24, 2).ok())
        .collect::<Vec<_>>();
    assert!(!cropped.is_empty());
    vec![
        Pack::Scenes(scenes),
        Pack::WinLose(win_lose),
        Pack::WinWin(win_win),
        Pack::Cropped(cropped),
    ]
}

#[test]
fn packs_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for p in packs() {
        let bytes = pack::encode(&p).unwrap();
        assert_eq!(&bytes[..4], b"IDP1");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), pack::VERSION);
        assert_eq!(bytes[6], p.kind() as u8);
        let back = pack::decode(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(pack::encode(&back).unwrap(), bytes);

        let path = dir.path().join(format!("{}.idp", p.kind().name()));
        pack::write_pack(&path, &p).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(pack::read_pack(&path).unwrap(), p);
    }
}

#[test]
fn empty_pack_round_trips() {
    let p = Pack::WinWin(Vec::new());
    let bytes = pack::encode(&p).unwrap();
    assert_eq!(bytes.len(), 4 + 2 + 1 + 2 + 2 + 4);
    assert_eq!(pack::decode(&bytes).unwrap(), p);
    assert!(pack::decode(&bytes).unwrap().is_empty());
}

#[test]
fn corrupted_packs_are_rejected() {
    let p = &packs()[1];
    let good = pack::encode(p).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(pack::decode(&bad), Err(LabError::Format(_))));
    assert!(matches!(pack::decode(&good[..2]), Err(LabError::Format(_))));

    let mut bad = good.clone();
    bad[4] = 9;
    assert!(matches!(pack::decode(&bad), Err(LabError::Format(_))));

    let mut bad = good.clone();
    bad[6] = 17;
    assert!(matches!(pack::decode(&bad), Err(LabError::Format(_))));

    assert!(matches!(pack::decode(&good[..good.len() - 1]), Err(LabError::Format(_))));
    let mut long = good.clone();
    long.push(0);
    assert!(matches!(pack::decode(&long), Err(LabError::Format(_))));

    // A mask byte outside {0, 1}.
    let mut bad = good.clone();
    let first_mask = 15 + 32 * 32 * 4;
    bad[first_mask] = 3;
    assert!(matches!(pack::decode(&bad), Err(LabError::Format(_))));
}

#[test]
fn pack_kind_accessors() {
    let all = packs();
    assert_eq!(all.iter().map(Pack::kind).collect::<Vec<_>>(), [
        RecordKind::Scene,
        RecordKind::WinLose,
        RecordKind::WinWin,
        RecordKind::Cropped
    ]);
    assert!(all[1].clone().into_win_lose().is_ok());
    assert!(matches!(all[1].clone().into_win_win(), Err(LabError::Config(_))));
    assert!(matches!(all[2].clone().into_scenes(), Err(LabError::Config(_))));
}

#[test]
fn mixed_dimensions_cannot_be_packed() {
    let small = SceneConfig { height: 24, width: 24, ..SceneConfig::default() };
    let a = gen_scene(&SceneConfig::default(), 1, 0, 0).unwrap();
    let b = gen_scene(&small, 1, 0, 0).unwrap();
    assert!(matches!(pack::encode(&Pack::Scenes(vec![a, b])), Err(LabError::Format(_))));
}

fn trained_checkpoint() -> Checkpoint {
    let spec = ModelSpec { hidden_channels: 4, time_embed_dim: 4, ..ModelSpec::convolutional(4) };
    let params = init_params(&spec, 3).unwrap();
    let n = params.len();
    Checkpoint {
        spec,
        params,
        adam_m: (0..n).map(|i| (i as f64).sin() * 1e-3).collect(),
        adam_v: (0..n).map(|i| (i as f64 * 0.1).cos().powi(2) * 1e-6).collect(),
        step: 42,
        config_hash: 0xdead_beef_1234_5678,
    }
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let ckpt = trained_checkpoint();
    let bytes = checkpoint::encode(&ckpt).unwrap();
    assert_eq!(&bytes[..4], b"IDPC");
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), checkpoint::VERSION);
    let back = checkpoint::decode(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(checkpoint::encode(&back).unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.idpc");
    checkpoint::write_checkpoint(&path, &ckpt).unwrap();
    assert_eq!(checkpoint::read_checkpoint(&path).unwrap(), ckpt);
    assert!(matches!(
        checkpoint::read_checkpoint(&dir.path().join("absent.idpc")),
        Err(LabError::Config(_))
    ));
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let good = checkpoint::encode(&trained_checkpoint()).unwrap();
    let mut bad = good.clone();
    bad[3] = b'X';
    assert!(matches!(checkpoint::decode(&bad), Err(LabError::Format(_))));
    let mut bad = good.clone();
    bad[6] = 99;
    assert!(matches!(checkpoint::decode(&bad), Err(LabError::Format(_))));
    // hidden_channels field: the parameter count no longer matches.
    let mut bad = good.clone();
    bad[11] = 5;
    assert!(matches!(checkpoint::decode(&bad), Err(LabError::Format(_))));
    assert!(matches!(checkpoint::decode(&good[..good.len() - 8]), Err(LabError::Format(_))));
    let mut long = good.clone();
    long.extend_from_slice(&[0; 8]);
    assert!(matches!(checkpoint::decode(&long), Err(LabError::Format(_))));
}

#[test]
fn hash_warning_only_on_mismatch() {
    let ckpt = trained_checkpoint();
    assert!(checkpoint::hash_warning(&ckpt, ckpt.config_hash).is_none());
    let w = checkpoint::hash_warning(&ckpt, 1).unwrap();
    assert!(w.starts_with("warning"));
}
