//! Built-in verification: gradient checks on every layer and architecture,
//! attention invariants, the corpus pipeline on bundled essays and the
//! binary formats.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    audit_corpus, convert_corpus, load_split, parse_brat_essay, read_sequences,
    sequences_to_string, AnnotatedEssay, Corpus, Essay, Granularity, SplitSpec,
};
use crate::embeddings::{load_precomputed, PrecomputedStore};
use crate::error::{Error, Result};
use crate::labels::Label;
use crate::layers::{choose_heads, AdditiveAttention, BiLstm, Dense, DenseSoftmax, MultiHeadAttention};
use crate::models::{build_model, read_checkpoint, write_checkpoint, ArchitectureId, ModelSpec};
use crate::numeric::{
    grad_check_with, random_batch, BatchTensor, GradCheckReport, Layer, Matrix, Parameter,
    Projection,
};
use crate::train::CrossEntropy;

/// Finite-difference step. Smaller steps let one-ulp noise dominate on
/// parameters whose gradient is exactly zero (the additive score bias),
/// larger ones let truncation error through on full architectures.
pub const CHECK_EPSILON: f64 = 3e-4;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const INVARIANT_TOLERANCE: f64 = 1e-9;

const FIXTURES: [(&str, &str, &str); 3] = [
    (
        "essay001",
        include_str!("../fixtures/essays/essay001.txt"),
        include_str!("../fixtures/essays/essay001.ann"),
    ),
    (
        "essay002",
        include_str!("../fixtures/essays/essay002.txt"),
        include_str!("../fixtures/essays/essay002.ann"),
    ),
    (
        "essay003",
        include_str!("../fixtures/essays/essay003.txt"),
        include_str!("../fixtures/essays/essay003.ann"),
    ),
];
const FIXTURE_SPLIT: &str = include_str!("../fixtures/split.csv");

/// The three annotated essays shipped with the crate.
pub fn bundled_corpus() -> Result<Corpus> {
    let essays = FIXTURES
        .iter()
        .map(|(id, text, ann)| {
            let essay = Essay::new(*id, *text)?;
            let spans = parse_brat_essay(ann, &essay)?;
            Ok(AnnotatedEssay { essay, spans })
        })
        .collect::<Result<_>>()?;
    Ok(Corpus { essays })
}

pub fn bundled_split() -> Result<SplitSpec> {
    load_split(FIXTURE_SPLIT)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn from_result<E: fmt::Display>(name: impl Into<String>, r: std::result::Result<String, E>) -> Self {
        let (passed, detail) = match r {
            Ok(d) => (true, d),
            Err(e) => (false, e.to_string()),
        };
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
    pub elapsed: Duration,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {:width$}  {}", c.name, c.detail)?;
        }
        let failed = self.failures().count();
        write!(
            f,
            "{} checks, {} failed, {:.1}s",
            self.checks.len(),
            failed,
            self.elapsed.as_secs_f64()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelftestOptions {
    pub seeds: u64,
    /// Add a layer whose backward pass is deliberately wrong; its gradient
    /// check must then be reported as failing.
    pub perturb_backward: bool,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            seeds: 5,
            perturb_backward: false,
        }
    }
}

/// Wraps a layer and inflates every gradient it produces by `factor`.
#[derive(Debug, Clone)]
pub struct PerturbedBackward<L> {
    pub inner: L,
    pub factor: f64,
}

impl<L: Layer> Layer for PerturbedBackward<L> {
    type Cache = L::Cache;

    fn forward(&self, input: &BatchTensor) -> Result<(BatchTensor, L::Cache)> {
        self.inner.forward(input)
    }

    fn backward(&mut self, cache: &L::Cache, grad_output: &BatchTensor) -> Result<BatchTensor> {
        let before: Vec<Matrix> = self.inner.parameters().iter().map(|p| p.grad.clone()).collect();
        let mut grad_input = self.inner.backward(cache, grad_output)?;
        for (p, old) in self.inner.parameters_mut().into_iter().zip(&before) {
            let delta = p.grad.add(&old.scale(-1.0))?;
            p.grad = old.add(&delta.scale(self.factor))?;
        }
        *grad_input.data_mut() = grad_input.data().scale(self.factor);
        Ok(grad_input)
    }

    fn parameters(&self) -> Vec<&Parameter> {
        self.inner.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.inner.parameters_mut()
    }
}

fn seeded_check<L: Layer>(layer: &mut L, x: &BatchTensor, epsilon: f64) -> Result<GradCheckReport> {
    let (out, _) = layer.forward(x)?;
    let objective = Projection::seeded(out.data().rows(), out.features(), 0x5eed);
    grad_check_with(layer, x, epsilon, &objective)
}

/// One gradient check per layer kind for a given seed.
pub fn layer_gradient_checks(seed: u64, epsilon: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x4 = random_batch(&[3, 2], 4, &mut rng);
    let x6 = random_batch(&[3, 2], 6, &mut rng);
    let mut out = Vec::new();

    let mut dense = Dense::new("dense", 4, 2, &mut rng);
    dense.b.value = Matrix::uniform(1, 2, 0.5, &mut rng);
    out.push(("dense", seeded_check(&mut dense, &x4, epsilon)?));

    let mut softmax = DenseSoftmax::new("output", 4, 3, &mut rng);
    out.push(("dense_softmax", seeded_check(&mut softmax, &x4, epsilon)?));

    let gold: Vec<Vec<Label>> = [3, 2]
        .iter()
        .map(|&n| (0..n).map(|_| Label::ALL[rng.gen_range(0..Label::COUNT)]).collect())
        .collect();
    let mut ce = DenseSoftmax::new("output", 4, 3, &mut rng);
    out.push((
        "cross_entropy",
        grad_check_with(&mut ce, &x4, epsilon, &CrossEntropy { gold })?,
    ));

    let mut bilstm = BiLstm::new("bilstm", 4, 3, &mut rng);
    out.push(("bilstm", seeded_check(&mut bilstm, &x4, epsilon)?));

    let mut additive = AdditiveAttention::new("additive", 6, 4, &mut rng);
    additive.b_hidden.value = Matrix::uniform(1, 4, 0.5, &mut rng);
    out.push(("additive_attention", seeded_check(&mut additive, &x6, epsilon)?));

    let mut multi = MultiHeadAttention::new("multi_head", 6, 3, &mut rng)?;
    out.push(("multi_head_attention", seeded_check(&mut multi, &x6, epsilon)?));
    Ok(out)
}

/// Gradient check of a small instance of `arch`.
pub fn model_gradient_check(arch: ArchitectureId, seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    let spec = ModelSpec::new(arch, 6)
        .with_hidden(3)
        .with_attention_dim(4)
        .with_seed(seed);
    let mut model = build_model(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let x = random_batch(&[3, 3], 6, &mut rng);
    seeded_check(&mut model, &x, epsilon)
}

/// Check of a dense layer whose backward pass is off by one percent.
pub fn perturbed_gradient_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_batch(&[3, 2], 4, &mut rng);
    let mut layer = PerturbedBackward {
        inner: Dense::new("dense", 4, 2, &mut rng),
        factor: 1.01,
    };
    seeded_check(&mut layer, &x, CHECK_EPSILON)
}

fn summarize(
    reports: impl IntoIterator<Item = (u64, GradCheckReport)>,
    tolerance: f64,
    epsilon: f64,
) -> std::result::Result<String, String> {
    let (seed, worst) = reports
        .into_iter()
        .max_by(|a, b| a.1.max_relative_error.total_cmp(&b.1.max_relative_error))
        .ok_or("no seeds to check")?;
    let msg = format!(
        "max rel err {:.2e} at {} (seed {seed}, eps {epsilon:e})",
        worst.max_relative_error, worst.worst
    );
    if worst.max_relative_error < tolerance {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Permute the valid steps of each sequence with `perms[b]`, run the layer
/// on both batches and return the largest deviation from
/// `f(Px)[b][t] = f(x)[b][perms[b][t]]`.
pub fn permutation_equivariance_error<L: Layer>(
    layer: &L,
    input: &BatchTensor,
    perms: &[Vec<usize>],
) -> Result<f64> {
    let mut permuted = input.clone();
    for (b, perm) in perms.iter().enumerate() {
        for (t, &src) in perm.iter().enumerate() {
            permuted.vector_mut(b, t).copy_from_slice(input.vector(b, src));
        }
    }
    let (y, _) = layer.forward(input)?;
    let (yp, _) = layer.forward(&permuted)?;
    let mut worst: f64 = 0.0;
    for (b, perm) in perms.iter().enumerate() {
        for (t, &src) in perm.iter().enumerate() {
            for (a, c) in yp.vector(b, t).iter().zip(y.vector(b, src)) {
                worst = worst.max((a - c).abs());
            }
        }
    }
    Ok(worst)
}

/// Largest violation of row-stochasticity over valid query rows, counting
/// any weight on a padded key and any negative weight as a violation.
/// `weights` holds `k` consecutive `time × time` blocks per sequence.
pub fn row_stochastic_error(weights: &[Matrix], input: &BatchTensor) -> f64 {
    let per_seq = weights.len() / input.batch().max(1);
    let mut worst: f64 = 0.0;
    for (i, w) in weights.iter().enumerate() {
        let b = i / per_seq.max(1);
        for q in input.valid_steps(b) {
            let row = w.row(q);
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            for (k, &v) in row.iter().enumerate() {
                worst = worst.max(-v);
                if !input.is_valid(b, k) {
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    worst
}

/// Largest equivariance and row-stochasticity errors over `trials` random
/// padded batches, for additive then multi-head attention.
pub fn attention_invariant_errors(trials: usize, seed: u64) -> Result<[(f64, f64); 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = [(0.0f64, 0.0f64); 2];
    for _ in 0..trials {
        let d = 6;
        let lengths = [rng.gen_range(1..9), rng.gen_range(1..9)];
        let x = random_batch(&lengths, d, &mut rng);
        let perms: Vec<Vec<usize>> = lengths
            .iter()
            .map(|&n| {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let mut additive = AdditiveAttention::new("additive", d, 4, &mut rng);
        additive.b_hidden.value = Matrix::uniform(1, 4, 0.5, &mut rng);
        let heads = [1, 2, 3, 6][rng.gen_range(0..4)];
        let multi = MultiHeadAttention::new("multi_head", d, heads, &mut rng)?;

        let eq = permutation_equivariance_error(&additive, &x, &perms)?;
        let rs = row_stochastic_error(&additive.attention_weights(&x)?, &x);
        out[0] = (out[0].0.max(eq), out[0].1.max(rs));
        let eq = permutation_equivariance_error(&multi, &x, &perms)?;
        let rs = row_stochastic_error(&multi.attention_weights(&x)?, &x);
        out[1] = (out[1].0.max(eq), out[1].1.max(rs));
    }
    Ok(out)
}

fn check_heads() -> Result<String> {
    let got: Vec<usize> = [300, 3072, 4196].iter().map(|&d| choose_heads(d, 6)).collect();
    if got == [6, 6, 4] {
        Ok("300/3072/4196 -> 6/6/4".into())
    } else {
        Err(Error::Contract(format!("expected 6/6/4, got {got:?}")))
    }
}

fn check_attention() -> Result<Vec<CheckResult>> {
    let errs = attention_invariant_errors(50, 0xa77e)?;
    Ok(["additive_attention", "multi_head_attention"]
        .iter()
        .zip(errs)
        .map(|(name, (eq, rs))| {
            let detail = format!("equivariance {eq:.1e}, row sums {rs:.1e}");
            let r = if eq < INVARIANT_TOLERANCE && rs < INVARIANT_TOLERANCE {
                Ok(detail)
            } else {
                Err(Error::Contract(detail))
            };
            CheckResult::from_result(format!("invariants {name}"), r)
        })
        .collect())
}

fn check_corpus() -> Result<String> {
    let corpus = bundled_corpus()?;
    let audit = audit_corpus(&corpus)?;
    let conv = convert_corpus(&corpus, &bundled_split()?, Granularity::Paragraph)?;
    for seqs in [&conv.train, &conv.test] {
        if read_sequences(&sequences_to_string(seqs))? != *seqs {
            return Err(Error::Format("sequence file round trip changed the sequences".into()));
        }
    }
    Ok(format!(
        "{} essays, {} tokens, {} spans rebuilt and round-tripped",
        audit.essays, audit.tokens, audit.spans
    ))
}

fn check_checkpoints() -> Result<String> {
    for arch in ArchitectureId::ALL {
        let model = build_model(&ModelSpec::new(arch, 6).with_hidden(3).with_seed(7))?;
        let mut meta = BTreeMap::new();
        meta.insert("origin".to_string(), "selftest".to_string());
        let mut first = Vec::new();
        write_checkpoint(&mut first, &model, &meta)?;
        let back = read_checkpoint(&mut first.as_slice())?;
        let mut second = Vec::new();
        write_checkpoint(&mut second, &back.model, &back.meta)?;
        if first != second || back.model != model {
            return Err(Error::Format(format!("{arch} checkpoint does not round-trip")));
        }
    }
    Ok(format!("{} architectures byte-exact", ArchitectureId::ALL.len()))
}

fn check_precomputed() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = PrecomputedStore::new(16);
    for t in 0..20 {
        let v = (0..16).map(|_| rng.gen_range(-1e3..1e3)).collect();
        store.insert("essay001", t / 7, t % 7, v)?;
    }
    let bytes = store.to_bytes();
    if load_precomputed(&bytes)?.to_bytes() != bytes {
        return Err(Error::Format("precomputed store does not round-trip".into()));
    }
    let mut broken = bytes.clone();
    broken[40] ^= 1;
    if load_precomputed(&broken).is_ok() {
        return Err(Error::Format("corrupted store was accepted".into()));
    }
    Ok(format!("{} vectors bit-exact, corruption detected", store.len()))
}

pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let start = Instant::now();
    let seeds = 0..opts.seeds;
    let mut checks = vec![CheckResult::from_result("head divisor rule", check_heads())];

    let per_seed: Result<Vec<_>> = seeds
        .clone()
        .map(|s| layer_gradient_checks(s, CHECK_EPSILON).map(|v| (s, v)))
        .collect();
    match per_seed {
        Ok(per_seed) => {
            let names: Vec<&str> = per_seed[0].1.iter().map(|(n, _)| *n).collect();
            for (i, name) in names.into_iter().enumerate() {
                let reports = per_seed.iter().map(|(s, v)| (*s, v[i].1.clone()));
                checks.push(CheckResult::from_result(
                    format!("gradient {name}"),
                    summarize(reports, GRAD_TOLERANCE, CHECK_EPSILON),
                ));
            }
        }
        Err(e) => checks.push(CheckResult::from_result("gradient layers", Err(e))),
    }
    for arch in ArchitectureId::ALL {
        let reports: Result<Vec<_>> = seeds
            .clone()
            .map(|s| model_gradient_check(arch, s, CHECK_EPSILON).map(|r| (s, r)))
            .collect();
        checks.push(CheckResult::from_result(
            format!("gradient model {}", arch.as_str()),
            reports
                .map_err(|e| e.to_string())
                .and_then(|r| summarize(r, GRAD_TOLERANCE, CHECK_EPSILON)),
        ));
    }
    if opts.perturb_backward {
        let reports: Result<Vec<_>> = seeds
            .clone()
            .map(|s| perturbed_gradient_check(s).map(|r| (s, r)))
            .collect();
        checks.push(CheckResult::from_result(
            "gradient dense (perturbed backward)",
            reports
                .map_err(|e| e.to_string())
                .and_then(|r| summarize(r, GRAD_TOLERANCE, CHECK_EPSILON)),
        ));
    }
    match check_attention() {
        Ok(c) => checks.extend(c),
        Err(e) => checks.push(CheckResult::from_result("invariants attention", Err(e))),
    }
    checks.push(CheckResult::from_result("corpus fixtures", check_corpus()));
    checks.push(CheckResult::from_result("checkpoint round trip", check_checkpoints()));
    checks.push(CheckResult::from_result("precomputed round trip", check_precomputed()));

    SelftestReport {
        checks,
        elapsed: start.elapsed(),
    }
}
