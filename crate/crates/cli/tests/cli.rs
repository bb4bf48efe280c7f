use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn argseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_argseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn convert(out: &Path) {
    let essays = fixtures().join("essays");
    let split = fixtures().join("split.csv");
    let o = argseg(&["convert", "--corpus", s(&essays), "--split", s(&split), "--out", s(out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

/// Converted fixture corpus plus an 8-dimensional table covering its words.
fn workspace() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    convert(&data);
    let mut words = BTreeSet::new();
    for f in ["train.conll", "test.conll"] {
        for line in fs::read_to_string(data.join(f)).unwrap().lines() {
            if let Some(tok) = line.split('\t').next().filter(|t| !t.is_empty()) {
                words.insert(tok.to_lowercase());
            }
        }
    }
    let table: String = words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let v: Vec<String> = (0..8)
                .map(|k| format!("{:.4}", ((i * 31 + k * 17) % 23) as f64 / 11.0 - 1.0))
                .collect();
            format!("{w} {}\n", v.join(" "))
        })
        .collect();
    fs::write(dir.path().join("tiny.txt"), table).unwrap();
    let spec = dir.path().join("tiny.toml");
    fs::write(&spec, "expected_dim = 8\n\n[[source]]\nkind = \"glove\"\npath = \"tiny.txt\"\n").unwrap();
    (dir, data, spec)
}

fn train(data: &Path, spec: &Path, out: &Path, seed: &str, epochs: &str, extra: &[&str]) -> Output {
    let train_file = data.join("train.conll");
    let mut args = vec![
        "train", "--arch", "sb", "--embeddings", s(spec), "--train", s(&train_file),
        "--hidden", "8", "--max-epochs", epochs, "--batch-size", "4", "--val-fraction", "0.4",
        "--seed", seed, "--out", s(out),
    ];
    args.extend_from_slice(extra);
    argseg(&args)
}

#[test]
fn empty_corpus_fails_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = dir.path().join("out");
    let split = fixtures().join("split.csv");
    let o = argseg(&["convert", "--corpus", s(&empty), "--split", s(&split), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn conversion_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    convert(&a);
    convert(&b);
    for f in ["train.conll", "test.conll", "conversion_report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["id"], mb["id"]);
    assert_eq!(ma["corpus_sha256"], mb["corpus_sha256"]);
    // Six essay files plus the split.
    assert_eq!(ma["inputs"].as_array().unwrap().len(), 7);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("conversion_report.json")).unwrap()).unwrap();
    assert_eq!(report["essays"], 3);
    assert_eq!(report["test_essays"], 1);
}

#[test]
fn manifest_digests_match_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    convert(&out);
    let m = manifest(&out);
    let artifacts = m["artifacts"].as_array().unwrap();
    assert_eq!(artifacts.len(), 3);
    for a in artifacts {
        let path = PathBuf::from(a["path"].as_str().unwrap());
        assert_eq!(a["sha256"].as_str().unwrap(), sha(&path));
    }
    assert_eq!(m["command"], "convert");
    assert!(m["started_at"].as_str().unwrap() <= m["finished_at"].as_str().unwrap());
}

#[test]
fn unknown_architecture_is_a_usage_error() {
    let o = argseg(&["train", "--arch", "transformer", "--embeddings", "x.toml", "--train", "t", "--out", "o"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown architecture"));
    assert_eq!(code(&argseg(&["frobnicate"])), 2);
    assert_eq!(code(&argseg(&["--help"])), 0);
}

#[test]
fn fixed_seed_reproduces_the_checkpoint() {
    let (dir, data, spec) = workspace();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let o = train(&data, &spec, out, seed, "6", &[]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(sha(&a.join("model.ckpt")), sha(&b.join("model.ckpt")));
    assert_eq!(fs::read(a.join("loss_curve.csv")).unwrap(), fs::read(b.join("loss_curve.csv")).unwrap());
    assert_ne!(sha(&a.join("model.ckpt")), sha(&c.join("model.ckpt")));
    assert_eq!(manifest(&a)["id"], manifest(&b)["id"]);
    assert_eq!(manifest(&a)["seed"], 7);
    let curve = fs::read_to_string(a.join("loss_curve.csv")).unwrap();
    assert!(curve.starts_with("epoch,train_loss,val_loss\n1,"));
}

#[test]
fn evaluation_appends_rows_keyed_by_manifest() {
    let (dir, data, spec) = workspace();
    let model_dir = dir.path().join("model");
    let o = train(&data, &spec, &model_dir, "1", "80", &["--lr", "0.01", "--patience", "80"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = model_dir.join("model.ckpt");
    let results = dir.path().join("results.csv");
    let mut f1 = Vec::new();
    for (name, file) in [("on_train", "train.conll"), ("on_test", "test.conll")] {
        let out = dir.path().join(name);
        let o = argseg(&[
            "evaluate", "--checkpoint", s(&ckpt), "--test", s(&data.join(file)), "--embeddings", s(&spec),
            "--results", s(&results), "--out", s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("weighted F1"));
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
        assert_eq!(m["row"]["manifest_id"], manifest(&out)["id"]);
        f1.push(m["report"]["weighted_f1"].as_f64().unwrap());
    }
    assert!(f1[0] > f1[1], "train {} vs test {}", f1[0], f1[1]);
    let table = fs::read_to_string(&results).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("manifest_id,data,arch,embedding,seed,lr,weighted_f1"));
    assert!(lines[1].contains(",train.conll,sb,tiny,1,0.01,"));
    assert!(lines[2].contains(",test.conll,sb,tiny,1,0.01,"));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let (dir, data, spec) = workspace();
    let out = dir.path().join("eval");
    let o = argseg(&[
        "evaluate", "--checkpoint", s(&dir.path().join("nope.ckpt")), "--test", s(&data.join("test.conll")),
        "--embeddings", s(&spec), "--out", s(&out),
    ]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
}

#[test]
fn width_mismatch_is_a_configuration_error() {
    let (dir, data, spec) = workspace();
    let model_dir = dir.path().join("model");
    assert_eq!(code(&train(&data, &spec, &model_dir, "0", "1", &[])), 0);
    let table: String = fs::read_to_string(dir.path().join("tiny.txt"))
        .unwrap()
        .lines()
        .map(|l| format!("{l} 0.5\n"))
        .collect();
    fs::write(dir.path().join("wide.txt"), table).unwrap();
    let wide = dir.path().join("wide.toml");
    fs::write(&wide, "expected_dim = 9\n\n[[source]]\nkind = \"glove\"\npath = \"wide.txt\"\n").unwrap();
    let o = argseg(&[
        "evaluate", "--checkpoint", s(&model_dir.join("model.ckpt")), "--test", s(&data.join("test.conll")),
        "--embeddings", s(&wide), "--out", s(&dir.path().join("eval")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("configuration error"));
}

#[test]
fn prediction_keeps_tokens_and_replaces_labels() {
    let (dir, data, spec) = workspace();
    let model_dir = dir.path().join("model");
    assert_eq!(code(&train(&data, &spec, &model_dir, "0", "2", &[])), 0);
    let out = dir.path().join("pred");
    let input = data.join("test.conll");
    let o = argseg(&[
        "predict", "--checkpoint", s(&model_dir.join("model.ckpt")), "--input", s(&input),
        "--embeddings", s(&spec), "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let strip = |t: String| -> Vec<String> {
        t.lines().map(|l| l.rsplit_once('\t').map_or(String::new(), |(k, _)| k.to_string())).collect()
    };
    let predicted = fs::read_to_string(out.join("predictions.conll")).unwrap();
    assert_eq!(strip(predicted), strip(fs::read_to_string(&input).unwrap()));
}

#[test]
fn learning_rate_search_records_every_trial() {
    let (dir, data, spec) = workspace();
    let out = dir.path().join("search");
    let o = train(&data, &spec, &out, "3", "2", &["--lr-search", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("train_summary.json")).unwrap()).unwrap();
    let trials = summary["lr_trials"].as_array().unwrap();
    assert_eq!(trials.len(), 3);
    let seeds: Vec<u64> = trials.iter().map(|t| t["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, [3, 4, 5]);
}

#[test]
fn selftest_passes_and_catches_a_perturbed_backward() {
    let dir = tempfile::tempdir().unwrap();
    let o = argseg(&["selftest", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("PASS gradient model bl-e"));
    assert!(!text.contains("FAIL"));
    assert!(dir.path().join("selftest.txt").is_file());
    assert_eq!(manifest(dir.path())["command"], "selftest");

    let o = argseg(&["selftest", "--seeds", "1", "--perturb-backward"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL gradient dense (perturbed backward)"));
}
