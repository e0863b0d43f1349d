use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use ssctl::data::{load_csv, Batch, FeatureSchema};
use ssctl::isct::{argmax_confidence, read_pseudo, GaussianWeightState};
use ssctl::train::{classifier_from_checkpoint, Checkpoint};
use tempfile::TempDir;

fn ssctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssctl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ssctl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn gen(dir: &Path, name: &str, json: &str) -> PathBuf {
    let cfg = write(dir, &format!("{name}.json"), json);
    let out = dir.join(name);
    ok(&["gen-data", "--config", p(&cfg), "--out", p(&out)]);
    out
}

fn load(dir: &Path) -> ssctl::data::Dataset {
    let schema: FeatureSchema =
        serde_json::from_str(&fs::read_to_string(dir.join("schema.json")).unwrap()).unwrap();
    load_csv(dir.join("data.csv"), &schema).unwrap()
}

const SMALL: &str = r#"{"preset": "six_domain", "n_samples": 20000, "seed": 3}"#;
const TRAIN: &str = r#"{"profile": "tiny", "epochs": 2, "lambda": 0.7, "seed": 5}"#;

#[test]
fn gen_data_writes_expected_files_deterministically() {
    let tmp = TempDir::new().unwrap();
    let a = gen(tmp.path(), "a", SMALL);
    let b = gen(tmp.path(), "b", SMALL);
    for f in ["data.csv", "schema.json", "provenance.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let ds = load(&a);
    assert_eq!(ds.len(), 20000);
    assert_eq!(ds.schema.n_domains(), 6);
    let share = ds.domain_counts()[0] as f64 / ds.len() as f64;
    assert!((share - 0.8113).abs() < 0.015, "{share}");
    let prov: Value =
        serde_json::from_str(&fs::read_to_string(a.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["seed"], 3);
    assert_eq!(prov["rows"], 20000);
}

#[test]
fn invalid_configs_exit_with_usage_code() {
    let tmp = TempDir::new().unwrap();
    let bad = write(
        tmp.path(),
        "bad.json",
        r#"{"preset": "six_domain", "proportions": [0.5, 0.1, 0.1, 0.1, 0.1, 0.2]}"#,
    );
    let out = ssctl(&[
        "gen-data",
        "--config",
        p(&bad),
        "--out",
        p(&tmp.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("proportions"));

    let typo = write(
        tmp.path(),
        "typo.json",
        r#"{"preset": "six_domain", "n_sample": 10}"#,
    );
    let out = ssctl(&[
        "gen-data",
        "--config",
        p(&typo),
        "--out",
        p(&tmp.path().join("y")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_sample"));

    let out = ssctl(&["train-classifier", "--config", p(&typo), "--out", "x.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ssctl(&["gradcheck", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn classifier_on_separable_data() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), "sep", r#"{"preset": "separable"}"#);
    let cfg = write(tmp.path(), "train.json", TRAIN);
    let ckpt = tmp.path().join("clf.ckpt");
    ok(&[
        "train-classifier",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--out",
        p(&ckpt),
    ]);
    let report: Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("clf.ckpt.accuracy.json")).unwrap(),
    )
    .unwrap();
    assert!(report["accuracy"].as_f64().unwrap() > 0.95, "{report}");

    let ds = load(&data);
    let rows: Vec<usize> = (0..200).collect();
    let batch = Batch::from_rows(&ds, &rows);
    let a = classifier_from_checkpoint(&Checkpoint::load(&ckpt).unwrap()).unwrap();
    let b = classifier_from_checkpoint(&Checkpoint::load(&ckpt).unwrap()).unwrap();
    assert_eq!(
        a.predict_proba(&batch).unwrap(),
        b.predict_proba(&batch).unwrap()
    );
}

#[test]
fn classifier_needs_two_sparse_domains() {
    let tmp = TempDir::new().unwrap();
    let data = gen(
        tmp.path(),
        "two",
        r#"{"preset": "separable", "n_domains": 2, "proportions": [0.7, 0.3], "user_overlap": [0.9], "item_overlap": [0.8], "n_samples": 2000}"#,
    );
    let cfg = write(tmp.path(), "train.json", TRAIN);
    let out = ssctl(&[
        "train-classifier",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--out",
        p(&tmp.path().join("c.ckpt")),
    ]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn full_pipeline_through_the_cli() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let data = gen(dir, "d", SMALL);
    let cfg = write(dir, "train.json", TRAIN);
    let clf = dir.join("clf.ckpt");
    ok(&[
        "train-classifier",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--out",
        p(&clf),
    ]);

    // pseudo-labels cover every dominant row, never domain 0, and match the classifier
    let pseudo = dir.join("pseudo.tsv");
    ok(&[
        "pseudo-label",
        "--classifier",
        p(&clf),
        "--data",
        p(&data),
        "--out",
        p(&pseudo),
    ]);
    let ds = load(&data);
    let state = GaussianWeightState::new(6, 0.999).unwrap();
    let recs = read_pseudo(fs::File::open(&pseudo).unwrap(), 6, &state).unwrap();
    assert_eq!(recs.len(), ds.domain_counts()[0]);
    assert!(recs.iter().all(|r| r.pseudo_domain != 0));
    let classifier = classifier_from_checkpoint(&Checkpoint::load(&clf).unwrap()).unwrap();
    for r in recs.iter().step_by(997) {
        let probs = classifier
            .predict_proba(&Batch::from_rows(&ds, &[r.sample_index]))
            .unwrap();
        assert_eq!(
            argmax_confidence(probs.row(0)),
            (r.pseudo_domain, r.confidence)
        );
    }
    let again = dir.join("pseudo2.tsv");
    ok(&[
        "pseudo-label",
        "--classifier",
        p(&clf),
        "--data",
        p(&data),
        "--out",
        p(&again),
    ]);
    assert_eq!(fs::read(&pseudo).unwrap(), fs::read(&again).unwrap());

    // full run, then an interrupted run resumed to the end
    let full = dir.join("full");
    let args = |out: &Path| {
        vec![
            "train".to_string(),
            "--data".into(),
            p(&data).into(),
            "--config".into(),
            p(&cfg).into(),
            "--classifier".into(),
            p(&clf).into(),
            "--pseudo".into(),
            p(&pseudo).into(),
            "--out".into(),
            p(out).into(),
        ]
    };
    let run = |a: Vec<String>| ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    run(args(&full));
    let resumed = dir.join("resumed");
    let mut first = args(&resumed);
    first.extend(["--stop-after-epochs".into(), "1".into()]);
    let text = run(first);
    assert!(text.contains("rerun to resume"));
    assert!(!resumed.join("model.ckpt").exists());
    run(args(&resumed));
    for f in ["metrics.jsonl", "model.ckpt", "report.json", "state.ckpt"] {
        assert_eq!(
            fs::read(full.join(f)).unwrap(),
            fs::read(resumed.join(f)).unwrap(),
            "{f}"
        );
    }

    let prov: Value =
        serde_json::from_str(&fs::read_to_string(full.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["lambda"], 0.7);
    assert_eq!(prov["config"]["lambda"], 0.7);
    assert_eq!(prov["mode"], "full");
    let metrics = fs::read_to_string(full.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2 * 6);
    for line in metrics.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "domain", "auc", "loss", "mu_t", "sigma_t"] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
    }

    // backbone-only ablation
    let backbone = dir.join("backbone");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--out",
        p(&backbone),
    ]);
    let prov: Value =
        serde_json::from_str(&fs::read_to_string(backbone.join("provenance.json")).unwrap())
            .unwrap();
    assert_eq!(prov["mode"], "backbone");
    assert_eq!(prov["config"]["isct"], false);
    assert_eq!(prov["config"]["sddn"], false);

    // evaluation with a baseline
    let baseline = write(dir, "base.csv", "domain_id,auc\n0,0.6276\n1,0.55\n");
    let report = dir.join("eval.jsonl");
    ok(&[
        "eval",
        "--model",
        p(&full.join("model.ckpt")),
        "--data",
        p(&data),
        "--report",
        p(&report),
        "--baseline",
        p(&baseline),
    ]);
    let lines: Vec<Value> = fs::read_to_string(&report)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    let saved: Value =
        serde_json::from_str(&fs::read_to_string(full.join("report.json")).unwrap()).unwrap();
    for (d, line) in lines.iter().enumerate() {
        assert_eq!(line["domain"], d);
        assert_eq!(
            line["auc"], saved["domains"][d]["auc"],
            "eval agrees with the training report"
        );
    }
    let auc0 = lines[0]["auc"].as_f64().unwrap();
    let rimp0 = lines[0]["rimp"].as_f64().unwrap();
    assert!((rimp0 - 100.0 * (auc0 - 0.6276) / 0.6276).abs() < 1e-12);
    assert!(lines[2]["rimp"].is_null());

    // a pseudo-label file without a classifier is a usage error
    let out = ssctl(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--pseudo",
        p(&pseudo),
        "--out",
        p(&dir.join("bad")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn resume_refuses_a_changed_config() {
    let tmp = TempDir::new().unwrap();
    let data = gen(
        tmp.path(),
        "d",
        r#"{"preset": "six_domain", "n_samples": 3000, "seed": 1}"#,
    );
    let cfg = write(tmp.path(), "a.json", TRAIN);
    let out = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--out",
        p(&out),
        "--stop-after-epochs",
        "1",
    ]);
    let other = write(
        tmp.path(),
        "b.json",
        r#"{"profile": "tiny", "epochs": 2, "seed": 6}"#,
    );
    let res = ssctl(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&other),
        "--out",
        p(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn eval_reports_null_for_an_empty_test_domain() {
    let tmp = TempDir::new().unwrap();
    // domain 5 gets about two rows, too few to reach the test split
    let data = gen(
        tmp.path(),
        "d",
        r#"{"preset": "six_domain", "n_samples": 400, "seed": 2}"#,
    );
    let cfg = write(
        tmp.path(),
        "a.json",
        r#"{"profile": "tiny", "epochs": 1, "batch_size": 64}"#,
    );
    let run = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--out",
        p(&run),
    ]);
    let report = tmp.path().join("eval.jsonl");
    let out = ssctl(&[
        "eval",
        "--model",
        p(&run.join("model.ckpt")),
        "--data",
        p(&data),
        "--report",
        p(&report),
    ]);
    assert!(out.status.success());
    let last: Value =
        serde_json::from_str(fs::read_to_string(&report).unwrap().lines().last().unwrap()).unwrap();
    assert_eq!(last["domain"], 5);
    assert_eq!(last["n"], 0);
    assert!(last["auc"].is_null());
}

#[test]
fn gradcheck_reports_every_group_once() {
    let out = ssctl(&["gradcheck", "--seed", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let groups: Vec<&str> = text
        .lines()
        .filter(|l| l.contains('\t'))
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    let mut unique = groups.clone();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), groups.len());
    for g in [
        "emb.domain",
        "shared.0",
        "shared.1",
        "specific.0",
        "specific.2",
        "gate",
        "dn.0",
        "dn.1",
        "tower",
    ] {
        assert!(groups.contains(&g), "{g} missing from {groups:?}");
    }

    let out = ssctl(&["gradcheck", "--corrupt-grad", "1.1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gate"));
}
