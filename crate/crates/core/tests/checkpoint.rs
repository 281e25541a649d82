use monovol::estimator::{checkpoint_load, checkpoint_save, report, AccumulatorBank};
use monovol::runner::{run, Mode, RunConfig};
use monovol::Error;

fn config(points: u64) -> RunConfig {
    RunConfig {
        n: 6,
        mode: Mode::Both,
        seed: 11,
        points,
        chunk_size: 2000,
        ..RunConfig::default()
    }
}

#[test]
fn save_load_gives_identical_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.json");
    let out = run(&config(4000)).unwrap();
    checkpoint_save(&out.bank, &path).unwrap();
    let back = checkpoint_load(&path).unwrap();
    assert_eq!(back, out.bank);
    assert_eq!(
        serde_json::to_string(&report(&back).unwrap()).unwrap(),
        serde_json::to_string(&out.report).unwrap()
    );
}

#[test]
fn resume_at_half_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck");
    let first = RunConfig {
        checkpoint: Some(ck.clone()),
        ..config(10_000)
    };
    run(&first).unwrap();
    let resumed = run(&RunConfig {
        resume: true,
        points: 20_000,
        workers: 4,
        ..first
    })
    .unwrap();
    let straight = run(&config(20_000)).unwrap();
    assert_eq!(resumed.bank, straight.bank);
    assert_eq!(
        serde_json::to_string(&resumed.report).unwrap(),
        serde_json::to_string(&straight.report).unwrap()
    );
}

#[test]
fn tampered_files_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.json");
    let out = run(&config(500)).unwrap();
    out.bank.save(&path).unwrap();
    let original = std::fs::read_to_string(&path).unwrap();

    let mut json: serde_json::Value = serde_json::from_str(&original).unwrap();
    json["config_hash"] = serde_json::json!("f".repeat(64));
    std::fs::write(&path, json.to_string()).unwrap();
    assert!(matches!(AccumulatorBank::load(&path), Err(Error::Checkpoint { .. })));

    let mut json: serde_json::Value = serde_json::from_str(&original).unwrap();
    json["meta"]["n"] = serde_json::json!(5);
    std::fs::write(&path, json.to_string()).unwrap();
    assert!(matches!(AccumulatorBank::load(&path), Err(Error::Checkpoint { .. })));

    std::fs::write(&path, &original[..original.len() / 2]).unwrap();
    assert!(matches!(AccumulatorBank::load(&path), Err(Error::Checkpoint { .. })));

    std::fs::write(&path, &original).unwrap();
    let other = RunConfig { seed: 12, ..config(500) };
    assert!(AccumulatorBank::load_for(&path, &other.config_hash().unwrap()).is_err());
    assert!(AccumulatorBank::load_for(&path, &config(500).config_hash().unwrap()).is_ok());
}

#[test]
fn overlapping_worker_files_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck");
    let first = RunConfig {
        checkpoint: Some(ck.clone()),
        ..config(2000)
    };
    let out = run(&first).unwrap();
    // A stray copy of the same ranges.
    out.bank.save(&ck.join("stray.json")).unwrap();
    let err = run(&RunConfig { resume: true, ..first }).unwrap_err();
    assert!(matches!(err, Error::Checkpoint { .. }), "{err}");
}
