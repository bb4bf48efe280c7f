use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use argseg::corpus::{
    convert_corpus, load_corpus, load_split, read_sequences, sequences_to_string, Granularity,
    LabeledSequence,
};
use argseg::embeddings::{vocabulary, Embedder, EmbeddingSpec};
use argseg::models::{build_model, load_checkpoint, save_checkpoint, Checkpoint, ModelSpec};
use argseg::selftest::{run_selftest, SelftestOptions};
use argseg::train::{
    append_metrics_row, evaluate as score, generalization_gap, lr_search, predict_sequences,
    train as fit, write_loss_curve, MetricsReport, MetricsRow, TrainConfig, TrainOutcome,
    TrialOutcome, DEFAULT_LR_RANGE,
};
use argseg::Label;

use crate::manifest::ManifestBuilder;
use crate::TrainArgs;

pub const TRAIN_FILE: &str = "train.conll";
pub const TEST_FILE: &str = "test.conll";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CURVE_FILE: &str = "loss_curve.csv";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn json_file(value: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn read_sequence_file(path: &Path) -> Result<Vec<LabeledSequence>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    read_sequences(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_embedder(spec_file: &Path, vocab: &HashSet<String>) -> Result<(EmbeddingSpec, Embedder)> {
    let spec = EmbeddingSpec::from_file(spec_file)
        .with_context(|| format!("loading embedding spec {}", spec_file.display()))?;
    let embedder = Embedder::load(&spec, Some(vocab))?;
    Ok((spec, embedder))
}

fn embedding_name(spec_file: &Path) -> String {
    spec_file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn convert(corpus_dir: &Path, split_file: &Path, granularity: Granularity, out: &Path) -> Result<()> {
    let corpus = load_corpus(corpus_dir).with_context(|| format!("loading corpus {}", corpus_dir.display()))?;
    let split_text = fs::read_to_string(split_file).with_context(|| format!("reading {}", split_file.display()))?;
    let split = load_split(&split_text).with_context(|| format!("parsing {}", split_file.display()))?;
    let conversion = convert_corpus(&corpus, &split, granularity)?;

    let mut manifest = ManifestBuilder::new(
        "convert",
        json!({ "granularity": granularity.to_string(), "split": file_name(split_file) }),
    );
    let mut inputs: Vec<PathBuf> = fs::read_dir(corpus_dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    inputs.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("txt" | "ann")));
    inputs.sort();
    for p in inputs.iter().chain([&split_file.to_path_buf()]) {
        manifest.input(p)?;
    }

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let artifacts = vec![
        write(&out.join(TRAIN_FILE), sequences_to_string(&conversion.train))?,
        write(&out.join(TEST_FILE), sequences_to_string(&conversion.test))?,
        write(&out.join("conversion_report.json"), json_file(&conversion.report)?)?,
    ];
    let m = manifest.finish(out, &artifacts)?;

    let r = &conversion.report;
    println!(
        "converted {} essays ({} train, {} test) into {} + {} sequences",
        r.essays, r.train_essays, r.test_essays, r.train_sequences, r.test_sequences
    );
    println!(
        "labels B/I/O: {}/{}/{}, boundary relabels: {}, manifest {}",
        r.label_histogram[0], r.label_histogram[1], r.label_histogram[2], r.boundary_relabels, m.id
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    spec: BTreeMap<&'static str, String>,
    config: &'a TrainConfig,
    outcome: &'a TrainOutcome,
    generalization_gap: Option<f64>,
    lr_trials: Option<&'a [TrialOutcome]>,
    oov_rate: f64,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let sequences = read_sequence_file(&args.train_file)?;
    if sequences.is_empty() {
        bail!("{} holds no sequences", args.train_file.display());
    }
    let (emb_spec, embedder) = load_embedder(&args.embeddings, &vocabulary(&sequences))?;
    let oov = embedder.oov_stats(&sequences);
    eprintln!(
        "{} sequences, embedding width {}, OOV rate {:.2}%",
        sequences.len(),
        embedder.dim(),
        100.0 * oov.rate()
    );

    let spec = ModelSpec::new(args.arch, embedder.dim())
        .with_hidden(args.hidden)
        .with_inter_stage_dim(args.inter_stage_dim)
        .with_seed(args.seed);
    let cfg = TrainConfig {
        batch_size: args.batch_size,
        max_epochs: args.max_epochs,
        patience: args.patience,
        learning_rate: args.lr,
        val_fraction: args.val_fraction,
        seed: args.seed,
    };
    cfg.validate()?;
    spec.validate()?;

    let mut manifest = ManifestBuilder::new(
        "train",
        json!({
            "arch": args.arch.as_str(),
            "hidden": args.hidden,
            "inter_stage_dim": args.inter_stage_dim,
            "batch_size": args.batch_size,
            "lr": args.lr,
            "lr_search": args.lr_search,
            "max_epochs": args.max_epochs,
            "patience": args.patience,
            "val_fraction": args.val_fraction,
        }),
    );
    manifest.input(&args.train_file)?;
    manifest.embedding(&args.embeddings, &emb_spec)?;
    manifest.seed(args.seed);
    let manifest_id = manifest.id();

    let (model, used, outcome, trials) = match args.lr_search {
        Some(n) => {
            let found = lr_search(&spec, &sequences, &embedder, &cfg, n, DEFAULT_LR_RANGE)?;
            for t in &found.trials {
                match &t.result {
                    Ok(v) => eprintln!("trial {} lr {:.3e}: best val loss {v:.4}", t.trial, t.learning_rate),
                    Err(e) => eprintln!("trial {} lr {:.3e}: {e}", t.trial, t.learning_rate),
                }
            }
            (found.model, found.best, found.train, Some(found.trials))
        }
        None => {
            let mut model = build_model(&spec)?;
            let outcome = fit(&mut model, &sequences, &embedder, &cfg)?;
            (model, cfg.clone(), outcome, None)
        }
    };
    let gap = generalization_gap(&outcome.curve).ok();

    let mut meta = BTreeMap::new();
    meta.insert("embedding".to_string(), embedding_name(&args.embeddings));
    meta.insert("lr".to_string(), used.learning_rate.to_string());
    meta.insert("seed".to_string(), used.seed.to_string());
    meta.insert("best_epoch".to_string(), outcome.best_epoch.to_string());
    meta.insert("manifest_id".to_string(), manifest_id.clone());
    if let Some(g) = gap {
        meta.insert("gap".to_string(), g.to_string());
    }

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let ckpt = args.out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &model, &meta)?;
    let mut curve = Vec::new();
    write_loss_curve(&mut curve, &outcome.curve)?;
    let summary = TrainSummary {
        spec: spec_map(model.spec()),
        config: &used,
        outcome: &outcome,
        generalization_gap: gap,
        lr_trials: trials.as_deref(),
        oov_rate: oov.rate(),
    };
    let artifacts = vec![
        ckpt,
        write(&args.out.join(CURVE_FILE), curve)?,
        write(&args.out.join("train_summary.json"), json_file(&summary)?)?,
    ];
    manifest.finish(&args.out, &artifacts)?;

    let last = outcome.curve.last().map(|r| r.train_loss).unwrap_or(f64::NAN);
    println!(
        "{} trained for {} epochs (best {}), lr {:.3e}, final train loss {last:.4}{}",
        args.arch.display_name(),
        outcome.curve.len(),
        outcome.best_epoch,
        used.learning_rate,
        gap.map(|g| format!(", gap {g:.4}")).unwrap_or_default()
    );
    println!("manifest {manifest_id}");
    Ok(())
}

fn spec_map(spec: &ModelSpec) -> BTreeMap<&'static str, String> {
    BTreeMap::from([
        ("arch", spec.arch.as_str().to_string()),
        ("input_dim", spec.input_dim.to_string()),
        ("hidden", spec.hidden.to_string()),
        (
            "inter_stage_dim",
            spec.inter_stage_dim.map_or("none".into(), |d| d.to_string()),
        ),
        ("heads_cap", spec.heads_cap.to_string()),
        ("attention_dim", spec.attention_dim.to_string()),
        ("seed", spec.seed.to_string()),
    ])
}

fn open_checkpoint(path: &Path, spec_file: &Path, vocab: &HashSet<String>) -> Result<(Checkpoint, EmbeddingSpec, Embedder)> {
    let ckpt = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let (emb_spec, embedder) = load_embedder(spec_file, vocab)?;
    let want = ckpt.model.spec().input_dim;
    if want != embedder.dim() {
        return Err(argseg::Error::Config(format!(
            "checkpoint expects input width {want}, embedding spec {} provides {}",
            spec_file.display(),
            embedder.dim()
        ))
        .into());
    }
    Ok((ckpt, emb_spec, embedder))
}

fn print_metrics(m: &MetricsReport) {
    println!("label  precision  recall  f1      support");
    for l in Label::ALL {
        let i = l.index();
        println!(
            "{:<5}  {:<9.4}  {:<6.4}  {:<6.4}  {}",
            l.to_string(),
            m.precision[i],
            m.recall[i],
            m.f1[i],
            m.support[i]
        );
    }
    println!("weighted F1 {:.4}, accuracy {:.4}", m.weighted_f1, m.accuracy);
}

pub fn evaluate(checkpoint: &Path, test_file: &Path, spec_file: &Path, results: Option<&Path>, out: &Path) -> Result<()> {
    let sequences = read_sequence_file(test_file)?;
    let (ckpt, emb_spec, embedder) = open_checkpoint(checkpoint, spec_file, &vocabulary(&sequences))?;
    let refs: Vec<&LabeledSequence> = sequences.iter().collect();
    let metrics = score(&ckpt.model, &refs, &embedder)?;

    let results_path = results.map_or_else(|| out.join("results.csv"), Path::to_path_buf);
    let mut manifest = ManifestBuilder::new("evaluate", json!({ "results": results_path }));
    manifest.input(checkpoint)?.input(test_file)?;
    manifest.embedding(spec_file, &emb_spec)?;
    let meta = |k: &str| ckpt.meta.get(k).cloned();
    let seed = meta("seed").and_then(|s| s.parse().ok()).unwrap_or(ckpt.model.spec().seed);
    manifest.seed(seed);
    let manifest_id = manifest.id();

    let row = MetricsRow::new(
        ckpt.model.spec().arch.as_str(),
        &meta("embedding").unwrap_or_else(|| embedding_name(spec_file)),
        seed,
        meta("lr").and_then(|s| s.parse().ok()).unwrap_or(f64::NAN),
        &metrics,
        meta("gap").and_then(|s| s.parse().ok()),
    )
    .keyed(&manifest_id, &file_name(test_file));

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    append_metrics_row(&results_path, &row)?;
    let artifacts = vec![write(
        &out.join("metrics.json"),
        json_file(&json!({ "row": &row, "report": &metrics }))?,
    )?];
    manifest.finish(out, &artifacts)?;

    print_metrics(&metrics);
    println!("appended to {} (manifest {manifest_id})", results_path.display());
    Ok(())
}

pub fn predict(checkpoint: &Path, input: &Path, spec_file: &Path, out: &Path) -> Result<()> {
    let mut sequences = read_sequence_file(input)?;
    let (ckpt, emb_spec, embedder) = open_checkpoint(checkpoint, spec_file, &vocabulary(&sequences))?;
    let refs: Vec<&LabeledSequence> = sequences.iter().collect();
    let predicted = predict_sequences(&ckpt.model, &refs, &embedder, 64)?;
    for (s, labels) in sequences.iter_mut().zip(predicted) {
        s.labels = labels;
    }

    let mut manifest = ManifestBuilder::new("predict", json!({}));
    manifest.input(checkpoint)?.input(input)?;
    manifest.embedding(spec_file, &emb_spec)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let artifacts = vec![write(&out.join("predictions.conll"), sequences_to_string(&sequences))?];
    let m = manifest.finish(out, &artifacts)?;
    let tokens: usize = sequences.iter().map(LabeledSequence::len).sum();
    println!("labeled {} sequences ({tokens} tokens), manifest {}", sequences.len(), m.id);
    Ok(())
}

pub fn selftest(seeds: u64, perturb_backward: bool, out: Option<&Path>) -> Result<()> {
    let report = run_selftest(&SelftestOptions { seeds, perturb_backward });
    println!("{report}");
    if let Some(out) = out {
        let manifest = ManifestBuilder::new(
            "selftest",
            json!({ "seeds": seeds, "perturb_backward": perturb_backward }),
        );
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let artifacts = vec![write(&out.join("selftest.txt"), format!("{report}\n"))?];
        manifest.finish(out, &artifacts)?;
    }
    if !report.passed() {
        bail!("{} self-test check(s) failed", report.failures().count());
    }
    Ok(())
}
