use momo::format::*;
use momo_core::agent::{AgentConfig, Td3Agent};
use momo_core::dynamics::{DynamicsConfig, DynamicsModel};
use momo_core::envtoy::{make_didactic_dataset, make_pointmass_dataset, OfflineDataset, PointMassConfig, Quality};
use momo_core::morse::{train_morse, MorseConfig, MorseNetwork};
use momo_core::nn::Matrix;
use momo_core::rng_from_seed;

fn bytes_of(data: &OfflineDataset) -> Vec<u8> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, data).unwrap();
    buf
}

fn probe_inputs() -> (Matrix, Matrix) {
    let mut s = Vec::new();
    let mut a = Vec::new();
    for i in 0..7 {
        let x = i as f64 / 7.0;
        s.push(vec![x - 0.5, 0.3 - x]);
        a.push(vec![0.9 * x - 0.4, -x]);
    }
    (Matrix::from_rows(&s).unwrap(), Matrix::from_rows(&a).unwrap())
}

#[test]
fn didactic_dataset_round_trips_exactly() {
    let d = make_didactic_dataset(3);
    let bytes = bytes_of(&d);
    let back = read_dataset(&bytes[..]).unwrap();
    assert_eq!(back, d);
    assert_eq!(bytes_of(&back), bytes);
}

#[test]
fn pointmass_dataset_round_trips_through_a_file() {
    let d = make_pointmass_dataset(&PointMassConfig::default(), Quality::Mixed, 777, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pm.momo-data");
    save_dataset(&path, &d).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, d);
    for (x, y) in back.transitions().iter().zip(d.transitions()) {
        assert_eq!(x.reward.to_bits(), y.reward.to_bits());
    }
    assert_eq!(back.meta.behavior_return.map(f64::to_bits), d.meta.behavior_return.map(f64::to_bits));
}

#[test]
fn corrupted_header_is_a_version_mismatch() {
    let mut bytes = bytes_of(&make_didactic_dataset(0));
    bytes[0] = b'x';
    assert!(matches!(read_dataset(&bytes[..]), Err(FormatError::VersionMismatch { .. })));

    let text = String::from_utf8_lossy(&bytes_of(&make_didactic_dataset(0))).into_owned();
    let bumped = text.replacen("momo-data 1 ", "momo-data 2 ", 1);
    assert!(matches!(read_dataset(bumped.as_bytes()), Err(FormatError::VersionMismatch { .. })));
}

#[test]
fn truncated_file_is_reported() {
    let bytes = bytes_of(&make_didactic_dataset(0));
    let cut = &bytes[..bytes.len() - 5];
    match read_dataset(cut) {
        Err(FormatError::Truncated { expected, found }) => assert_eq!(expected - found, 5),
        other => panic!("expected a truncation error, got {other:?}"),
    }
}

#[test]
fn inconsistent_dimensions_are_reported() {
    let mut bytes = bytes_of(&make_didactic_dataset(0));
    bytes.extend_from_slice(&[0u8; 8]);
    assert!(matches!(read_dataset(&bytes[..]), Err(FormatError::Dimension(_))));

    let text = String::from_utf8_lossy(&bytes_of(&make_didactic_dataset(0))).into_owned();
    let bad = text.replacen("\"action_low\":[-1.0,-1.0]", "\"action_low\":[-1.0]", 1);
    assert_ne!(bad, text);
    assert!(matches!(read_dataset(bad.as_bytes()), Err(FormatError::Dimension(_))));
}

#[test]
fn empty_dataset_loads_but_training_rejects_it() {
    let empty = OfflineDataset::new(2, 2, vec![-1.0; 2], vec![1.0; 2]).unwrap();
    let back = read_dataset(&bytes_of(&empty)[..]).unwrap();
    assert!(back.is_empty());
    let err = train_morse(&MorseConfig::didactic(), &back, &mut rng_from_seed(0), &mut |_| {}).unwrap_err();
    assert!(err.is_contract_violation());
}

#[test]
fn morse_checkpoint_is_bit_exact() {
    let cfg = MorseConfig {
        steps: 50,
        ..MorseConfig::didactic()
    };
    let m = train_morse(&cfg, &make_didactic_dataset(0), &mut rng_from_seed(1), &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_morse(&path, &m).unwrap();
    let back: MorseNetwork = load_morse(&path).unwrap();
    assert_eq!(back.embedding_net().params(), m.embedding_net().params());
    assert_eq!(back.kernel(), m.kernel());
    let (s, a) = probe_inputs();
    let x = m.log_certainty_batch(&s, &a).unwrap();
    let y = back.log_certainty_batch(&s, &a).unwrap();
    assert!(x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn dynamics_checkpoint_is_bit_exact() {
    let m = DynamicsModel::new(
        &DynamicsConfig {
            hidden: 16,
            depth: 2,
            ..DynamicsConfig::desk()
        },
        2,
        2,
        &mut rng_from_seed(4),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.ckpt");
    save_dynamics(&path, &m).unwrap();
    let back = load_dynamics(&path).unwrap();
    let (s, a) = probe_inputs();
    assert_eq!(back.predict(&s, &a).unwrap(), m.predict(&s, &a).unwrap());
    assert_eq!(back.clamp_bounds(), m.clamp_bounds());
}

#[test]
fn agent_checkpoint_preserves_policy_config_and_seed() {
    let cfg = AgentConfig {
        hidden: 16,
        ..AgentConfig::desk()
    };
    let agent = Td3Agent::new(cfg, 2, 2, vec![-1.0; 2], vec![1.0; 2], &mut rng_from_seed(9)).unwrap();
    let env = PointMassConfig {
        max_steps: 20,
        ..PointMassConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    save_agent(&path, &agent, &env, 41).unwrap();
    let back = load_agent(&path).unwrap();
    assert_eq!(back.seed, 41);
    assert_eq!(back.env, env);
    assert_eq!(back.agent.config(), agent.config());
    assert_eq!(back.agent.online().actor.params(), agent.online().actor.params());
    assert_eq!(back.agent.targets().critic2.params(), agent.targets().critic2.params());
    let (s, _) = probe_inputs();
    assert_eq!(back.agent.act_batch(&s).unwrap(), agent.act_batch(&s).unwrap());
}

#[test]
fn checkpoint_kind_and_truncation_are_checked() {
    let m = MorseNetwork::new(&MorseConfig::didactic(), 2, 2, &mut rng_from_seed(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_morse(&path, &m).unwrap();
    assert!(matches!(load_dynamics(&path), Err(FormatError::KindMismatch { .. })));

    let bytes = std::fs::read(&path).unwrap();
    assert!(matches!(read_checkpoint(&bytes[..bytes.len() - 1]), Err(FormatError::Truncated { .. })));
    assert!(matches!(read_checkpoint(&b"momo-checkpoint 9\n{}\n"[..]), Err(FormatError::VersionMismatch { .. })));
}
