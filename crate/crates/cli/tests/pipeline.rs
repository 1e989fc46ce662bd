//! Command-level behavior on a small synthetic dataset with a relaxed policy.

use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};

use szgan::commands;
use szgan::{CliError, ExperimentConfig, PatientConfig, Scenario};

const BIN: &str = env!("CARGO_BIN_EXE_szgan");

fn tiny_config(dir: &Path) -> ExperimentConfig {
    let text = r#"{
      "patients": [
        { "id": "a", "channels": ["ch01", "ch02"], "line_freq": 60 },
        { "id": "b", "channels": ["ch01", "ch02"], "line_freq": 50 }
      ],
      "base_stride_s": 112.0,
      "repeats": 2,
      "seed": 3,
      "oversample_factor": 4,
      "policy": { "interictal_gap_h": 1.0, "min_lead_seizures": 2, "min_interictal_h": 0.5 },
      "gan": { "batch_size": 2, "steps": 2 },
      "classifier": { "max_epochs": 1, "patience": 1, "batch_size": 16 },
      "synth": {
        "interictal_h": 1.0,
        "seizure_recording_h": 2.0,
        "recording_gap_h": 1.0,
        "seizure_onsets_min": [40.0, 100.0]
      }
    }"#;
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

fn prepared(dir: &Path) -> ExperimentConfig {
    let cfg = tiny_config(dir);
    commands::synth(&cfg).unwrap();
    commands::preprocess(&cfg, 1).unwrap();
    cfg
}

fn with_scenario(cfg: &ExperimentConfig, s: Scenario) -> ExperimentConfig {
    ExperimentConfig { scenario: s, ..cfg.clone() }
}

fn list(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn synth_is_reproducible_and_flags_seizure_free_patients() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let out1 = commands::synth(&tiny_config(d1.path())).unwrap();
    commands::synth(&tiny_config(d2.path())).unwrap();
    assert!(out1.iter().all(|o| o.eligibility.eligible && o.n_seizures == 2));
    for f in ["a/interictal.szr", "a/seizures.szr", "a/seizures.ann.json", "b/seizures.szr"] {
        let a = fs::read(d1.path().join("data").join(f)).unwrap();
        let b = fs::read(d2.path().join("data").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }

    let d3 = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(d3.path());
    cfg.synth.seizure_onsets_min.clear();
    let out = commands::synth(&cfg).unwrap();
    assert!(d3.path().join("data/a/seizures.szr").exists());
    assert!(out.iter().all(|o| !o.eligibility.eligible && o.n_seizures == 0));
    assert!(out[0].eligibility.reasons.contains(&"min_lead_seizures".to_string()));
}

#[test]
fn preprocess_records_shapes_masks_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    commands::synth(&cfg).unwrap();
    let index = commands::preprocess(&cfg, 2).unwrap();
    let a = index.patient("a").unwrap();
    let b = index.patient("b").unwrap();
    assert_eq!(a.shape, vec![2, 56, 112]);
    assert_eq!((a.mask.line_freq, b.mask.line_freq), (60, 50));
    assert_ne!(a.mask.kept, b.mask.kept);
    assert_eq!(a.mask.kept.len(), 112);
    assert!(!a.windows.is_empty());

    let index_path = dir.path().join("out/cache/index.json");
    let before = fs::read(&index_path).unwrap();
    let first_window = dir.path().join("out/cache").join(&a.windows[0].file);
    let mtime = fs::metadata(&first_window).unwrap().modified().unwrap();
    let again = commands::preprocess(&cfg, 1).unwrap();
    assert_eq!(again, index);
    assert_eq!(fs::read(&index_path).unwrap(), before);
    assert_eq!(fs::metadata(&first_window).unwrap().modified().unwrap(), mtime);
    assert!(dir.path().join("out/config.json").exists());
}

#[test]
fn sixteen_channel_patient_has_sixteen_channel_windows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    let channels: Vec<String> = (1..=16).map(|i| format!("ch{i:02}")).collect();
    cfg.patients = vec![PatientConfig { id: "wide".into(), channels, line_freq: 60, recordings: vec![] }];
    cfg.synth.n_channels = 16;
    commands::synth(&cfg).unwrap();
    let index = commands::preprocess(&cfg, 1).unwrap();
    assert_eq!(index.patients[0].shape, vec![16, 56, 112]);
}

#[test]
fn preprocess_rejects_missing_channels_naming_the_patient() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    commands::synth(&cfg).unwrap();
    cfg.patients[1].channels.push("ch09".into());
    let err = commands::preprocess(&cfg, 1).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("patient b"), "{err}");
}

#[test]
fn gan_scenarios_produce_the_expected_trunks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepared(dir.path());

    let global = commands::train(&with_scenario(&cfg, Scenario::GanCnn), 1).unwrap();
    assert_eq!(global.gans.len(), 1);
    assert_eq!(global.gans[0].patients, vec!["a", "b"]);
    let root = dir.path().join("out/gan_cnn");
    assert_eq!(list(&root.join("gan")), vec!["all"]);
    assert_eq!(list(&root.join("gan/all")), vec!["discriminator.szg", "generator.szg", "train_log.json", "trunk.szg"]);
    for p in ["a", "b"] {
        // 2 seizures -> 2 folds, times 2 repeats.
        assert_eq!(list(&root.join("heads").join(p)), vec!["r0_f0.szg", "r0_f1.szg", "r1_f0.szg", "r1_f1.szg"]);
    }

    let ps = commands::train(&with_scenario(&cfg, Scenario::GanPsCnn), 1).unwrap();
    assert_eq!(list(&dir.path().join("out/gan_ps_cnn/gan")), vec!["a", "b"]);
    let ospl = commands::train(&with_scenario(&cfg, Scenario::GanPsOsplCnn), 2).unwrap();
    for (p, o) in ps.gans.iter().zip(&ospl.gans) {
        let ratio = o.n_real_windows as f64 / p.n_real_windows as f64;
        assert!((ratio - 4.0).abs() < 0.4, "{}: {} vs {}", p.key, o.n_real_windows, p.n_real_windows);
    }
}

#[test]
fn supervised_scenario_trains_a_trunk_per_fold_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_scenario(&prepared(dir.path()), Scenario::CnnSupervised);
    commands::train(&cfg, 2).unwrap();
    let root = dir.path().join("out/cnn_supervised");
    assert!(!root.join("gan").exists());
    assert_eq!(list(&root.join("trunks/a")).len(), 4);
    let report = commands::evaluate(&cfg, 2).unwrap();
    assert_eq!(report.patients.len(), 2);
    for p in &report.patients {
        assert_eq!(p.report.aucs.len(), 2);
        assert_eq!(p.report.fold_aucs.len(), 4);
        assert_eq!(p.report.alarms.len(), 2 * cfg.alarm_thresholds.len());
        assert!((0.0..=1.0).contains(&p.report.mean_auc));
    }
    let scores = fs::read_to_string(root.join("scores.csv")).unwrap();
    assert!(scores.starts_with("patient_id,repeat,fold,window_start_s,label,score\n"));
    assert!(fs::read_to_string(root.join("roc.csv")).unwrap().starts_with("patient_id,repeat,fpr,tpr\n"));
    let table = fs::read_to_string(root.join("table.txt")).unwrap();
    assert!(table.contains("CNN") && table.contains("Average"));

    let summary = commands::report(&cfg).unwrap();
    assert_eq!(summary.columns, vec!["CNN"]);
}

#[test]
fn training_is_skipped_when_inputs_are_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = prepared(dir.path());
    let first = commands::train(&cfg, 1).unwrap();
    let head = dir.path().join("out/gan_cnn/heads/a/r0_f0.szg");
    let mtime = fs::metadata(&head).unwrap().modified().unwrap();
    let second = commands::train(&cfg, 1).unwrap();
    assert_eq!(first, second);
    assert_eq!(fs::metadata(&head).unwrap().modified().unwrap(), mtime);

    let changed = ExperimentConfig { seed: 4, ..cfg.clone() };
    commands::train(&changed, 1).unwrap();
    assert_ne!(fs::metadata(&head).unwrap().modified().unwrap(), mtime);
}

#[test]
fn missing_artifacts_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    commands::synth(&cfg).unwrap();
    let err = commands::train(&cfg, 1).unwrap_err();
    assert!(matches!(err, CliError::MissingArtifact(_)), "{err}");
    assert_eq!(err.exit_code(), 5);

    commands::preprocess(&cfg, 1).unwrap();
    commands::train(&cfg, 1).unwrap();
    fs::remove_file(dir.path().join("out/gan_cnn/heads/b/r1_f0.szg")).unwrap();
    let err = commands::evaluate(&cfg, 1).unwrap_err();
    assert_eq!(err.exit_code(), 5);
    assert!(err.to_string().contains("patient b fold r1_f0"), "{err}");
}

#[test]
fn ineligible_patients_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    commands::synth(&cfg).unwrap();
    // Without annotated seizures patient b fails the seizure-count rule.
    fs::write(dir.path().join("data/b/seizures.ann.json"), "[]").unwrap();
    cfg.scenario = Scenario::GanPsCnn;
    commands::preprocess(&cfg, 1).unwrap();
    let s = commands::train(&cfg, 1).unwrap();
    assert_eq!(s.patients.len(), 1);
    assert_eq!(s.skipped.len(), 1);
    assert_eq!(s.skipped[0].id, "b");
    assert!(s.skipped[0].reasons.contains(&"min_lead_seizures".to_string()));
    let r = commands::evaluate(&cfg, 1).unwrap();
    assert_eq!(r.patients.len(), 1);
    assert_eq!(r.skipped[0].id, "b");
}

fn run(args: &[&str], config: &Path) -> Option<i32> {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(config)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .unwrap()
        .code()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(run(&["preprocess"], &bad), Some(2));

    tiny_config(dir.path());
    let good = dir.path().join("config.json");
    assert_eq!(run(&["train", "--scenario", "gan_cnn"], &good), Some(5));
    assert_eq!(run(&["train", "--scenario", "nope"], &good), Some(2));
    assert_eq!(run(&["synth"], &good), Some(0));
    assert_eq!(run(&["report"], &good), Some(5));
}

#[test]
fn seed_and_repeat_overrides_are_materialized() {
    let dir = tempfile::tempdir().unwrap();
    tiny_config(dir.path());
    let good = dir.path().join("config.json");
    for cmd in ["synth", "preprocess"] {
        assert_eq!(run(&[cmd, "--seed", "9", "--repeats", "1"], &good), Some(0));
    }
    let written = ExperimentConfig::load(&dir.path().join("out/config.json")).unwrap();
    assert_eq!((written.seed, written.repeats), (9, 1));
    assert_eq!(written.policy.min_lead_seizures, 2);
    assert_eq!(written.stft.window_len_s, 1.0);
}
