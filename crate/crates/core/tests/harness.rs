use std::path::Path;
use std::process::Command;

use hiernote::harness::{
    emit_report, model_dir, run_experiment, sha256_file, Experiment, ExperimentConfig, ModelKey, ReportFormat,
    StageStatus, IMPORTANCE_FILE, METRICS_FILE, REPORT_SCHEMA,
};
use hiernote::Error;
use proptest::prelude::*;

const SMOKE: &str = include_str!("../../../configs/smoke.toml");
const PLANTED: &str = include_str!("../../../configs/planted.toml");
const NULL: &str = include_str!("../../../configs/null.toml");

fn smoke(out: &Path) -> ExperimentConfig {
    let mut config = ExperimentConfig::from_toml_str(SMOKE).unwrap();
    config.paths.out = out.to_path_buf();
    config
}

fn schema_errors(instance: &serde_json::Value) -> Vec<String> {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    validator.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path())).collect()
}

#[test]
fn shipped_configs_parse_validate_and_round_trip() {
    for text in [SMOKE, PLANTED, NULL] {
        let config = ExperimentConfig::from_toml_str(text).unwrap();
        config.validate().unwrap();
        let again = ExperimentConfig::from_toml_str(&config.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, config);
        assert_eq!(again.hash(), config.hash());
    }
}

#[test]
fn full_run_emits_both_tables_and_a_valid_report() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, report) = run_experiment(smoke(dir.path())).unwrap();
    let names: Vec<&str> = report.table1.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(names, ["Dummy (Prior)", "Dummy (Stratified)", "Dummy (Uniform)", "Encoder"]);
    let names: Vec<&str> = report.table2.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(names, ["Encoder", "Encoder MS-3"]);
    assert!(report.table1.iter().all(|r| r.n_runs == 2));

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report/report.json")).unwrap()).unwrap();
    assert_eq!(schema_errors(&json), Vec::<String>::new());
    let mut broken = json.clone();
    broken["table1"][0]["auroc"] = serde_json::Value::String("high".into());
    assert!(!schema_errors(&broken).is_empty());

    let tsv = std::fs::read_to_string(dir.path().join("report/table1.tsv")).unwrap();
    assert!(tsv.starts_with("Model\tAUC\tMACRO F1\tPRECISION\tRECALL\n"));

    // every stage is recorded with checksums that match the files
    for stage in &manifest.stages {
        assert_eq!(stage.status, StageStatus::Complete, "{}", stage.name);
        for a in &stage.outputs {
            assert_eq!(sha256_file(dir.path().join(&a.path)).unwrap(), a.sha256, "{}", a.path.display());
        }
    }
    for name in ["corpus", "split", "vocab", "train/single/seed-1", "train/MS-3/seed-2", "eval", "ablate", "report"] {
        assert!(manifest.stage(name).is_some(), "missing stage {name}");
    }
}

#[test]
fn rerun_is_a_no_op_and_tampering_reruns_one_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (first, report) = run_experiment(smoke(dir.path())).unwrap();
    let (second, again) = run_experiment(smoke(dir.path())).unwrap();
    assert_eq!(first, second, "no stage re-ran");
    assert_eq!(report, again);

    // a corrupted artifact makes its stage stale; its rerun restores it
    let metrics = dir.path().join(METRICS_FILE);
    let original = std::fs::read(&metrics).unwrap();
    std::fs::write(&metrics, b"{}").unwrap();
    let (third, _) = run_experiment(smoke(dir.path())).unwrap();
    assert_eq!(std::fs::read(&metrics).unwrap(), original);
    for s in &first.stages {
        let t = third.stage(&s.name).unwrap();
        if s.name == "eval" {
            assert_ne!(s.seconds, t.seconds, "eval re-ran");
        } else {
            assert_eq!(s, t, "{} untouched", s.name);
        }
    }
}

#[test]
fn stage_failure_is_recorded_and_halts_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let mut exp = Experiment::new(smoke(dir.path())).unwrap();
    exp.corpus_stage().unwrap();
    exp.split_stage().unwrap();
    exp.vocab_stage().unwrap();
    exp.train_stage(ModelKey::Single, None).unwrap();
    exp.train_stage(ModelKey::Ms(3), None).unwrap();
    let ckpt = dir.path().join(model_dir(ModelKey::Single, 1)).join("encoder.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let err = exp.eval_stage().unwrap_err();
    assert!(matches!(&err, Error::Stage { stage, .. } if stage == "eval"), "{err}");
    assert!(matches!(exp.manifest().stage("eval").unwrap().status, StageStatus::Failed(_)));
    // downstream stages refuse to run without evaluation output
    assert!(matches!(exp.report_stage(), Err(Error::Stage { .. })));
    assert!(exp.manifest().stage("report").is_none());
}

#[test]
fn training_never_needs_test_labels() {
    // flipping every test label leaves the trained models bit-identical
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut exp = Experiment::new(smoke(a.path())).unwrap();
    exp.corpus_stage().unwrap();
    exp.split_stage().unwrap();
    let split = exp.load_split().unwrap();
    let mut corpus = (*exp.load_corpus().unwrap()).clone();
    for p in &mut corpus.patients {
        if split.test.contains(&p.patient_id) {
            p.label = hiernote::corpus::Label::from_index(1 - p.label.index());
        }
    }
    let flipped_path = b.path().join("flipped.jsonl");
    hiernote::corpus::save_corpus(&corpus, &flipped_path).unwrap();
    std::fs::copy(a.path().join("split.json"), b.path().join("split.json")).unwrap();

    let mut config_b = smoke(b.path());
    config_b.paths.corpus = Some(flipped_path);
    let mut exp_b = Experiment::new(config_b).unwrap();
    exp_b.corpus_stage().unwrap();
    for e in [&mut exp, &mut exp_b] {
        e.vocab_stage().unwrap();
        e.train_stage(ModelKey::Ms(3), Some(1)).unwrap();
    }
    for file in ["encoder.ckpt", "mlp.ckpt", "vocab.txt"] {
        let rel = model_dir(ModelKey::Ms(3), 1).join(file);
        assert_eq!(sha256_file(a.path().join(&rel)).unwrap(), sha256_file(b.path().join(&rel)).unwrap(), "{file}");
    }
}

#[test]
fn one_note_hierarchy_shares_the_single_note_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = smoke(dir.path());
    config.hierarchy.ns = vec![1];
    config.ablation.enabled = false;
    let (_, report) = run_experiment(config).unwrap();
    // selecting the one longest note is the single-note rule, so Step 1 is identical
    for seed in [1, 2] {
        let single = dir.path().join(model_dir(ModelKey::Single, seed)).join("encoder.ckpt");
        let ms1 = dir.path().join(model_dir(ModelKey::Ms(1), seed)).join("encoder.ckpt");
        assert_eq!(sha256_file(single).unwrap(), sha256_file(ms1).unwrap());
    }
    let (single, ms1) = (&report.table2[0], &report.table2[1]);
    assert!((single.auroc - ms1.auroc).abs() < 0.1, "{} vs {}", single.auroc, ms1.auroc);
}

#[test]
fn disabled_ablation_omits_radar_with_a_notice() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = smoke(dir.path());
    config.ablation.enabled = false;
    let (_, report) = run_experiment(config).unwrap();
    assert!(report.importance.is_none());
    assert!(!dir.path().join("report/radar.csv").exists());
    assert!(!dir.path().join(IMPORTANCE_FILE).exists());
    assert!(report.notices.iter().any(|n| n.contains("radar.csv omitted")));
    let (written, notices) = emit_report(&report, &dir.path().join("again"), &[ReportFormat::Radar]).unwrap();
    assert!(written.is_empty());
    assert_eq!(notices.len(), 1);
}

#[test]
fn missing_files_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = smoke(dir.path());
    config.paths.corpus = Some(dir.path().join("absent.jsonl"));
    let err = Experiment::new(config).err().unwrap();
    assert!(err.is_config_error(), "{err}");
}

fn cli(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hiernote"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn cli_verbs_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("smoke.toml");
    std::fs::write(&config, SMOKE).unwrap();
    let config = config.to_str().unwrap();
    let out = dir.path().join("out");
    for verb in [
        vec!["gen"],
        vec!["split"],
        vec!["vocab"],
        vec!["pretrain"],
        vec!["train", "--mode", "single"],
        vec!["train", "--mode", "ms", "--n", "3", "--run-seed", "1"],
        vec!["train", "--mode", "ms", "--n", "3", "--run-seed", "2"],
        vec!["eval"],
        vec!["ablate", "--model", "MS-3", "--f1-mode", "macro"],
        vec!["report"],
    ] {
        let mut args = vec!["--config", config];
        args.extend(verb.iter().copied());
        let o = cli(&args, &out);
        assert!(o.status.success(), "{verb:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let importance: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(IMPORTANCE_FILE)).unwrap()).unwrap();
    assert_eq!(importance["f1_mode"], "macro");
    assert!(out.join("report/radar.csv").exists());

    let o = cli(&["--config", config, "report", "--format", "json"], &dir.path().join("out"));
    assert!(o.status.success());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"seven\"").unwrap();
    assert_eq!(cli(&["--config", bad.to_str().unwrap(), "run"], &out).status.code(), Some(2));
    assert_eq!(cli(&["--config", config, "train", "--mode", "turbo"], &out).status.code(), Some(2));

    // a stage whose inputs are missing fails with the stage exit code
    let empty = dir.path().join("empty");
    assert_eq!(cli(&["--config", config, "eval"], &empty).status.code(), Some(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn configs_round_trip_through_toml(
        seed in any::<u32>(),
        lr in 1e-5f64..1e-1,
        ns in prop::collection::btree_set(1usize..12, 0..4),
        hidden in 1usize..6,
        enabled in any::<bool>(),
    ) {
        let mut config = ExperimentConfig::from_toml_str(SMOKE).unwrap();
        config.seed = seed as u64;
        config.train.learning_rate = lr;
        config.hierarchy.ns = ns.into_iter().collect();
        config.model.hidden_dim = hidden * 2;
        config.ablation.enabled = enabled;
        config.ablation.model = ModelKey::Single;
        let text = config.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(&back, &config);
        prop_assert_eq!(back.hash(), config.hash());
    }
}
