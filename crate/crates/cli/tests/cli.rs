use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use ftmlearn::commands::{segment_file, segment_paths};
use ftmlearn::manifest::{sha256_file, RunManifest};
use ftmlearn::pipeline;
use ftmlearn_core::dataset::{Dataset, Survey};
use ftmlearn_core::ranging_nn::RangingModule;
use ftmlearn_core::scenario::ScenarioFile;
use ftmlearn_core::training::TrainConfig;

fn ftmlearn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftmlearn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = ftmlearn(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn generate_writes_requested_segments_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        tmp.path(),
        &[
            "generate",
            "--out",
            "a",
            "--seed",
            "5",
            "--segments",
            "18",
            "--bw",
            "bw40",
        ],
    );
    ok(
        tmp.path(),
        &[
            "generate",
            "--out",
            "b",
            "--seed",
            "5",
            "--segments",
            "18",
            "--bw",
            "bw40",
        ],
    );
    let a = tmp.path().join("a");
    assert_eq!(segment_paths(&a).unwrap().len(), 18);
    assert!(a.join(segment_file(17)).is_file());
    let (fa, fb) = (files(&a), files(&tmp.path().join("b")));
    for (name, bytes) in &fa {
        if name != "manifest.json" {
            assert_eq!(Some(bytes), fb.get(name), "{name} differs");
        }
    }
    ok(
        tmp.path(),
        &["generate", "--out", "c", "--seed", "6", "--segments", "2"],
    );
    assert_ne!(
        fa["segment_000.jsonl"],
        files(&tmp.path().join("c"))["segment_000.jsonl"]
    );
}

#[test]
fn usage_and_runtime_errors_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(
        ftmlearn(d, &["generate", "--out", "x", "--segments", "0"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        ftmlearn(d, &["generate", "--out", "x", "--bw", "bw60"]).status.code(),
        Some(1)
    );
    assert_eq!(ftmlearn(d, &["frobnicate"]).status.code(), Some(1));
    std::fs::write(d.join("bad.json"), "{not json").unwrap();
    assert_eq!(
        ftmlearn(d, &["generate", "--config", "bad.json", "--out", "x"])
            .status
            .code(),
        Some(2)
    );

    ok(d, &["generate", "--out", "data", "--segments", "2", "--seed", "1"]);
    let out = ftmlearn(
        d,
        &[
            "eval",
            "--model",
            "missing.json",
            "--test",
            "data/test.jsonl",
            "--aps",
            "data/scenario.json",
            "--report",
            "r",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    std::fs::remove_file(d.join("data/segment_001.jsonl")).unwrap();
    assert_eq!(
        ftmlearn(d, &["train", "--data", "data", "--out", "m.json", "--epochs", "1"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn manifest_hashes_match_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("site.json"),
        serde_json::to_string(&ScenarioFile::default_office()).unwrap(),
    )
    .unwrap();
    ok(
        d,
        &[
            "generate",
            "--config",
            "site.json",
            "--out",
            "data",
            "--segments",
            "2",
            "--seed",
            "3",
            "--bw",
            "bw80",
        ],
    );
    let m = RunManifest::read(&d.join("data/manifest.json")).unwrap();
    assert_eq!(m.seed, Some(3));
    assert_eq!(m.bandwidth.as_deref(), Some("bw80"));
    assert_eq!(m.config.as_deref(), Some("site.json"));
    assert_eq!(m.inputs["site.json"], sha256_file(&d.join("site.json")).unwrap());

    ok(
        d,
        &[
            "train",
            "--data",
            "data",
            "--out",
            "model.json",
            "--epochs",
            "1",
            "--seed",
            "2",
        ],
    );
    let m = RunManifest::read(&d.join("model.manifest.json")).unwrap();
    assert_eq!(m.inputs.len(), 3);
    for (path, hash) in &m.inputs {
        assert_eq!(hash, &sha256_file(&d.join(path)).unwrap(), "{path}");
    }
}

#[test]
fn one_epoch_model_is_the_only_snapshot_and_reruns_match() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--out", "data", "--segments", "3", "--seed", "9"]);
    ok(
        d,
        &[
            "train", "--data", "data", "--out", "m1.json", "--epochs", "1", "--seed", "4",
        ],
    );
    ok(
        d,
        &[
            "train", "--data", "data", "--out", "m2.json", "--epochs", "1", "--seed", "4",
        ],
    );
    assert_eq!(
        std::fs::read(d.join("m1.json")).unwrap(),
        std::fs::read(d.join("m2.json")).unwrap()
    );
    let history = std::fs::read_to_string(d.join("m1.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
    assert!(history.lines().nth(1).unwrap().ends_with(",true"));

    let scenario = ScenarioFile::load(&d.join("data/scenario.json")).unwrap();
    let segments: Vec<Dataset> = segment_paths(&d.join("data"))
        .unwrap()
        .iter()
        .map(|p| Dataset::read_jsonl(p).unwrap())
        .collect();
    let cfg = TrainConfig {
        epochs: 1,
        seed: 4,
        ..TrainConfig::default()
    };
    let outcome = pipeline::train(&segments, &scenario.site, &cfg, |_| {}).unwrap();
    assert_eq!(RangingModule::load(&d.join("m1.json")).unwrap(), outcome.best);
    assert_eq!(outcome.best, outcome.last);
}

#[test]
fn eval_reports_match_direct_library_calls() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--out", "data", "--segments", "2", "--seed", "11"]);
    ok(d, &["train", "--data", "data", "--out", "m.json", "--epochs", "2"]);
    for s in ["off", "on"] {
        ok(
            d,
            &[
                "eval",
                "--model",
                "m.json",
                "--test",
                "data/test.jsonl",
                "--aps",
                "data/scenario.json",
                "--sensors",
                s,
                "--report",
                "rep",
            ],
        );
    }
    let rep = d.join("rep");
    for f in [
        "ranging_report.csv",
        "ranging_cdf.csv",
        "ranging_cdf.svg",
        "baselines.json",
        "positioning_report_sensors_off.csv",
        "positioning_report_sensors_on.csv",
        "positioning_cdf_sensors_on.csv",
        "trajectory_sensors_off.svg",
        "trajectory_sensors_on.svg",
        "manifest_sensors_on.json",
    ] {
        assert!(rep.join(f).is_file(), "{f} missing");
    }

    let model = RangingModule::load(&d.join("m.json")).unwrap();
    let test = Dataset::read_jsonl(&d.join("data/test.jsonl")).unwrap();
    let survey = Survey::read_jsonl(&d.join("data/survey.jsonl")).unwrap();
    let site = ScenarioFile::load(&d.join("data/scenario.json")).unwrap().site;
    for (s, on) in [("off", false), ("on", true)] {
        let direct = pipeline::evaluate(&model, &test, &survey, &site, on).unwrap();
        let read = |f: &str| std::fs::read_to_string(rep.join(f)).unwrap();
        assert_eq!(read("ranging_report.csv"), direct.ranging.to_csv());
        assert_eq!(read("ranging_cdf.csv"), direct.ranging.cdf_csv());
        assert_eq!(
            read(&format!("positioning_report_sensors_{s}.csv")),
            direct.positioning.to_csv()
        );
        assert_eq!(
            read(&format!("positioning_cdf_sensors_{s}.csv")),
            direct.positioning.cdf_csv()
        );
    }
    let off = std::fs::read_to_string(rep.join("positioning_report_sensors_off.csv")).unwrap();
    let on = std::fs::read_to_string(rep.join("positioning_report_sensors_on.csv")).unwrap();
    assert_ne!(off, on);
}

#[test]
fn eval_requires_the_survey_next_to_the_test_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--out", "data", "--segments", "2", "--seed", "2"]);
    ok(d, &["train", "--data", "data", "--out", "m.json", "--epochs", "1"]);
    std::fs::remove_file(d.join("data/survey.jsonl")).unwrap();
    let out = ftmlearn(
        d,
        &[
            "eval",
            "--model",
            "m.json",
            "--test",
            "data/test.jsonl",
            "--aps",
            "data/scenario.json",
            "--report",
            "r",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("survey.jsonl"));
}
