//! The five evaluated architectures, assembled from [`crate::layers`].
//!
//! | id     | stack                                                          |
//! |--------|----------------------------------------------------------------|
//! | `BL`   | BiLSTM → projection → BiLSTM → dense-softmax                    |
//! | `BL_I` | multi-head attention → BiLSTM → projection → BiLSTM → softmax   |
//! | `BL_E` | BiLSTM → projection → multi-head attention → BiLSTM → softmax   |
//! | `SB`   | BiLSTM → dense-softmax                                          |
//! | `SB_I` | additive attention → BiLSTM → dense-softmax                     |

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::{argmax_label, Label};
use crate::layers::{
    choose_heads, AdditiveAttention, AdditiveCache, BiLstm, BiLstmCache, Dense, DenseSoftmax,
    DenseSoftmaxCache, MultiHeadAttention, MultiHeadCache, DEFAULT_ATTENTION_DIM,
};
use crate::numeric::{BatchTensor, Layer, Parameter};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchitectureId {
    Bl,
    BlI,
    BlE,
    Sb,
    SbI,
}

impl ArchitectureId {
    pub const ALL: [ArchitectureId; 5] = [
        ArchitectureId::Bl,
        ArchitectureId::BlI,
        ArchitectureId::BlE,
        ArchitectureId::Sb,
        ArchitectureId::SbI,
    ];

    /// Command-line spelling: `bl`, `bl-i`, `bl-e`, `sb`, `sb-i`.
    pub fn as_str(self) -> &'static str {
        match self {
            ArchitectureId::Bl => "bl",
            ArchitectureId::BlI => "bl-i",
            ArchitectureId::BlE => "bl-e",
            ArchitectureId::Sb => "sb",
            ArchitectureId::SbI => "sb-i",
        }
    }

    /// Row label used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ArchitectureId::Bl => "BL",
            ArchitectureId::BlI => "BL-I",
            ArchitectureId::BlE => "BL-E",
            ArchitectureId::Sb => "BiLSTM",
            ArchitectureId::SbI => "BiLSTM-I",
        }
    }

    pub fn attention(self) -> AttentionKind {
        match self {
            ArchitectureId::Bl | ArchitectureId::BlI | ArchitectureId::BlE => AttentionKind::MultiHead,
            ArchitectureId::Sb | ArchitectureId::SbI => AttentionKind::Additive,
        }
    }

    pub fn is_two_stage(self) -> bool {
        matches!(self, ArchitectureId::Bl | ArchitectureId::BlI | ArchitectureId::BlE)
    }
}

impl fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchitectureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "bl" => Ok(ArchitectureId::Bl),
            "bl-i" => Ok(ArchitectureId::BlI),
            "bl-e" => Ok(ArchitectureId::BlE),
            "sb" | "bilstm" => Ok(ArchitectureId::Sb),
            "sb-i" | "bilstm-i" => Ok(ArchitectureId::SbI),
            _ => Err(Error::Config(format!(
                "unknown architecture `{s}` (expected one of bl, bl-i, bl-e, sb, sb-i)"
            ))),
        }
    }
}

/// Which attention form an architecture family uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Additive,
    MultiHead,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: ArchitectureId,
    pub input_dim: usize,
    /// Hidden size of every LSTM direction.
    pub hidden: usize,
    /// Width of the linear projection between the two BiLSTMs of the BL
    /// family; `None` feeds the first BiLSTM's output straight through.
    pub inter_stage_dim: Option<usize>,
    pub heads_cap: usize,
    /// Width of the additive attention scoring network.
    pub attention_dim: usize,
    pub seed: u64,
}

impl ModelSpec {
    pub const DEFAULT_HIDDEN: usize = 64;
    pub const DEFAULT_INTER_STAGE_DIM: usize = 4;
    pub const DEFAULT_HEADS_CAP: usize = 6;

    pub fn new(arch: ArchitectureId, input_dim: usize) -> Self {
        Self {
            arch,
            input_dim,
            hidden: Self::DEFAULT_HIDDEN,
            inter_stage_dim: Some(Self::DEFAULT_INTER_STAGE_DIM),
            heads_cap: Self::DEFAULT_HEADS_CAP,
            attention_dim: DEFAULT_ATTENTION_DIM,
            seed: 0,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_inter_stage_dim(mut self, dim: Option<usize>) -> Self {
        self.inter_stage_dim = dim;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_attention_dim(mut self, dim: usize) -> Self {
        self.attention_dim = dim;
        self
    }

    pub fn attention(&self) -> AttentionKind {
        self.arch.attention()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("hidden", self.hidden),
            ("heads_cap", self.heads_cap),
            ("attention_dim", self.attention_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.inter_stage_dim == Some(0) {
            return Err(Error::Config("inter_stage_dim must be positive".into()));
        }
        Ok(())
    }

    /// Width seen by the second BiLSTM of the BL family.
    pub fn second_stage_input(&self) -> usize {
        self.inter_stage_dim.unwrap_or(2 * self.hidden)
    }
}

/// One stage of a model stack.
#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    MultiHead(MultiHeadAttention),
    Additive(AdditiveAttention),
    BiLstm(BiLstm),
    Projection(Dense),
    Output(DenseSoftmax),
}

#[derive(Debug, Clone)]
pub enum BlockCache {
    MultiHead(MultiHeadCache),
    Additive(AdditiveCache),
    BiLstm(BiLstmCache),
    Projection(BatchTensor),
    Output(DenseSoftmaxCache),
}

impl Block {
    pub fn kind(&self) -> &'static str {
        match self {
            Block::MultiHead(_) => "multi_head",
            Block::Additive(_) => "additive",
            Block::BiLstm(_) => "bilstm",
            Block::Projection(_) => "projection",
            Block::Output(_) => "output",
        }
    }

    fn forward(&self, x: &BatchTensor) -> Result<(BatchTensor, BlockCache)> {
        Ok(match self {
            Block::MultiHead(l) => {
                let (y, c) = l.forward(x)?;
                (y, BlockCache::MultiHead(c))
            }
            Block::Additive(l) => {
                let (y, c) = l.forward(x)?;
                (y, BlockCache::Additive(c))
            }
            Block::BiLstm(l) => {
                let (y, c) = l.forward(x)?;
                (y, BlockCache::BiLstm(c))
            }
            Block::Projection(l) => {
                let (y, c) = l.forward(x)?;
                (y, BlockCache::Projection(c))
            }
            Block::Output(l) => {
                let (y, c) = l.forward(x)?;
                (y, BlockCache::Output(c))
            }
        })
    }

    fn backward(&mut self, cache: &BlockCache, g: &BatchTensor) -> Result<BatchTensor> {
        match (self, cache) {
            (Block::MultiHead(l), BlockCache::MultiHead(c)) => l.backward(c, g),
            (Block::Additive(l), BlockCache::Additive(c)) => l.backward(c, g),
            (Block::BiLstm(l), BlockCache::BiLstm(c)) => l.backward(c, g),
            (Block::Projection(l), BlockCache::Projection(c)) => l.backward(c, g),
            (Block::Output(l), BlockCache::Output(c)) => l.backward(c, g),
            (b, _) => Err(Error::Contract(format!(
                "cache does not belong to a {} block",
                b.kind()
            ))),
        }
    }

    fn parameters(&self) -> Vec<&Parameter> {
        match self {
            Block::MultiHead(l) => l.parameters(),
            Block::Additive(l) => l.parameters(),
            Block::BiLstm(l) => l.parameters(),
            Block::Projection(l) => l.parameters(),
            Block::Output(l) => l.parameters(),
        }
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Block::MultiHead(l) => l.parameters_mut(),
            Block::Additive(l) => l.parameters_mut(),
            Block::BiLstm(l) => l.parameters_mut(),
            Block::Projection(l) => l.parameters_mut(),
            Block::Output(l) => l.parameters_mut(),
        }
    }
}

/// A built model: its spec and the ordered blocks of its stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInstance {
    spec: ModelSpec,
    blocks: Vec<Block>,
}

fn multi_head(prefix: &str, dim: usize, cap: usize, rng: &mut ChaCha8Rng) -> Result<Block> {
    if cap == 0 {
        return Err(Error::Config(format!(
            "no head count up to 0 divides dimension {dim}; valid head counts: {:?}",
            crate::layers::divisors(dim)
        )));
    }
    Ok(Block::MultiHead(MultiHeadAttention::new(
        prefix,
        dim,
        choose_heads(dim, cap),
        rng,
    )?))
}

/// Assemble and initialise the stack described by `spec` from `spec.seed`.
pub fn build_model(spec: &ModelSpec) -> Result<ModelInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h = spec.hidden;
    let mut blocks = Vec::new();
    let name = |blocks: &Vec<Block>, kind: &str| format!("{}.{kind}", blocks.len());
    match spec.arch {
        ArchitectureId::Sb | ArchitectureId::SbI => {
            if spec.arch == ArchitectureId::SbI {
                let n = name(&blocks, "additive");
                blocks.push(Block::Additive(AdditiveAttention::new(
                    &n,
                    spec.input_dim,
                    spec.attention_dim,
                    &mut rng,
                )));
            }
            let n = name(&blocks, "bilstm");
            blocks.push(Block::BiLstm(BiLstm::new(&n, spec.input_dim, h, &mut rng)));
        }
        ArchitectureId::Bl | ArchitectureId::BlI | ArchitectureId::BlE => {
            if spec.arch == ArchitectureId::BlI {
                let n = name(&blocks, "multi_head");
                blocks.push(multi_head(&n, spec.input_dim, spec.heads_cap, &mut rng)?);
            }
            let n = name(&blocks, "bilstm");
            blocks.push(Block::BiLstm(BiLstm::new(&n, spec.input_dim, h, &mut rng)));
            if let Some(inter) = spec.inter_stage_dim {
                let n = name(&blocks, "projection");
                blocks.push(Block::Projection(Dense::new(&n, 2 * h, inter, &mut rng)));
            }
            let second = spec.second_stage_input();
            if spec.arch == ArchitectureId::BlE {
                let n = name(&blocks, "multi_head");
                blocks.push(multi_head(&n, second, spec.heads_cap, &mut rng)?);
            }
            let n = name(&blocks, "bilstm");
            blocks.push(Block::BiLstm(BiLstm::new(&n, second, h, &mut rng)));
        }
    }
    let n = name(&blocks, "output");
    blocks.push(Block::Output(DenseSoftmax::new(&n, 2 * h, Label::COUNT, &mut rng)));
    Ok(ModelInstance {
        spec: spec.clone(),
        blocks,
    })
}

impl ModelInstance {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Per-token label distributions, without keeping caches.
    pub fn distributions(&self, batch: &BatchTensor) -> Result<BatchTensor> {
        batch.check_features("model_forward", self.spec.input_dim)?;
        let mut x = batch.clone();
        for block in &self.blocks {
            x = block.forward(&x)?.0;
        }
        Ok(x)
    }

    /// Copy every parameter value from `other`, which must share the spec.
    pub fn load_parameters_from(&mut self, other: &ModelInstance) -> Result<()> {
        if other.spec != self.spec {
            return Err(Error::Config("cannot copy parameters across specs".into()));
        }
        for (dst, src) in self.parameters_mut().into_iter().zip(other.parameters()) {
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

impl Layer for ModelInstance {
    type Cache = Vec<BlockCache>;

    fn forward(&self, input: &BatchTensor) -> Result<(BatchTensor, Vec<BlockCache>)> {
        input.check_features("model_forward", self.spec.input_dim)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut x = input.clone();
        for block in &self.blocks {
            let (y, c) = block.forward(&x)?;
            caches.push(c);
            x = y;
        }
        Ok((x, caches))
    }

    fn backward(&mut self, caches: &Vec<BlockCache>, grad_output: &BatchTensor) -> Result<BatchTensor> {
        if caches.len() != self.blocks.len() {
            return Err(Error::Contract("cache length does not match the model".into()));
        }
        let mut g = grad_output.clone();
        for (block, cache) in self.blocks.iter_mut().zip(caches).rev() {
            g = block.backward(cache, &g)?;
        }
        Ok(g)
    }

    fn parameters(&self) -> Vec<&Parameter> {
        self.blocks.iter().flat_map(Block::parameters).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.blocks.iter_mut().flat_map(Block::parameters_mut).collect()
    }
}

/// Per-token distributions for `batch`, with caches for backward.
pub fn forward(model: &ModelInstance, batch: &BatchTensor) -> Result<(BatchTensor, Vec<BlockCache>)> {
    model.forward(batch)
}

/// Argmax label of every valid token, one vector per sequence of the batch.
pub fn predict_labels(model: &ModelInstance, batch: &BatchTensor) -> Result<Vec<Vec<Label>>> {
    let probs = model.distributions(batch)?;
    Ok(labels_from_distributions(&probs))
}

pub fn labels_from_distributions(probs: &BatchTensor) -> Vec<Vec<Label>> {
    (0..probs.batch())
        .map(|b| {
            (0..probs.time())
                .filter(|&t| probs.is_valid(b, t))
                .map(|t| argmax_label(probs.vector(b, t)))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{bilstm_forward, dense_softmax};
    use crate::numeric::random_batch;
    use proptest::prelude::*;

    #[test]
    fn parameter_count_of_single_bilstm() {
        let model = build_model(&ModelSpec::new(ArchitectureId::Sb, 300)).unwrap();
        let expected = 2 * 4 * (300 * 64 + 64 * 64 + 64) + (128 * 3 + 3);
        assert_eq!(model.parameter_count(), expected);
    }

    #[test]
    fn input_attention_uses_six_heads_for_300() {
        let model = build_model(&ModelSpec::new(ArchitectureId::BlI, 300).with_hidden(8)).unwrap();
        match &model.blocks()[0] {
            Block::MultiHead(mh) => assert_eq!(mh.heads(), 6),
            other => panic!("first block is {}", other.kind()),
        }
    }

    #[test]
    fn error_encoding_attention_uses_four_heads_on_projection() {
        let model = build_model(&ModelSpec::new(ArchitectureId::BlE, 10).with_hidden(3)).unwrap();
        let kinds: Vec<_> = model.blocks().iter().map(Block::kind).collect();
        assert_eq!(kinds, ["bilstm", "projection", "multi_head", "bilstm", "output"]);
        match &model.blocks()[2] {
            Block::MultiHead(mh) => assert_eq!((mh.dim(), mh.heads()), (4, 4)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn stacks_per_architecture() {
        let stack = |arch| {
            build_model(&ModelSpec::new(arch, 6).with_hidden(2))
                .unwrap()
                .blocks()
                .iter()
                .map(Block::kind)
                .collect::<Vec<_>>()
        };
        assert_eq!(stack(ArchitectureId::Bl), ["bilstm", "projection", "bilstm", "output"]);
        assert_eq!(
            stack(ArchitectureId::BlI),
            ["multi_head", "bilstm", "projection", "bilstm", "output"]
        );
        assert_eq!(stack(ArchitectureId::Sb), ["bilstm", "output"]);
        assert_eq!(stack(ArchitectureId::SbI), ["additive", "bilstm", "output"]);
    }

    #[test]
    fn same_seed_same_parameters() {
        for arch in ArchitectureId::ALL {
            let spec = ModelSpec::new(arch, 12).with_hidden(4).with_seed(42);
            assert_eq!(build_model(&spec).unwrap(), build_model(&spec).unwrap());
        }
        let a = build_model(&ModelSpec::new(ArchitectureId::Sb, 5).with_seed(1)).unwrap();
        let b = build_model(&ModelSpec::new(ArchitectureId::Sb, 5).with_seed(2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_heads_cap_is_a_configuration_error() {
        let mut spec = ModelSpec::new(ArchitectureId::BlI, 6);
        spec.heads_cap = 0;
        assert!(matches!(build_model(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn untrained_outputs_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_batch(&[4, 2, 3], 6, &mut rng);
        for arch in ArchitectureId::ALL {
            let model = build_model(&ModelSpec::new(arch, 6).with_hidden(3)).unwrap();
            let (y, _) = forward(&model, &x).unwrap();
            for r in 0..y.data().rows() {
                assert!((y.data().row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let model = build_model(&ModelSpec::new(ArchitectureId::Sb, 6).with_hidden(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_batch(&[2], 5, &mut rng);
        assert!(matches!(model.forward(&x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn single_bilstm_is_bilstm_then_softmax() {
        let model = build_model(&ModelSpec::new(ArchitectureId::Sb, 5).with_hidden(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_batch(&[3, 2], 5, &mut rng);
        let (Block::BiLstm(bi), Block::Output(out)) = (&model.blocks()[0], &model.blocks()[1]) else {
            panic!("unexpected stack");
        };
        let manual = dense_softmax(out, &bilstm_forward(&bi.forward, &bi.backward, &x).unwrap()).unwrap();
        assert_eq!(model.distributions(&x).unwrap(), manual);
    }

    #[test]
    fn two_stage_without_projection_is_two_stacked_bilstms() {
        let spec = ModelSpec::new(ArchitectureId::Bl, 5)
            .with_hidden(3)
            .with_inter_stage_dim(None);
        let model = build_model(&spec).unwrap();
        let kinds: Vec<_> = model.blocks().iter().map(Block::kind).collect();
        assert_eq!(kinds, ["bilstm", "bilstm", "output"]);
        let bilstm = |h: usize, i: usize| 2 * 4 * (i * h + h * h + h);
        assert_eq!(model.parameter_count(), bilstm(3, 5) + bilstm(3, 6) + 6 * 3 + 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_batch(&[3], 5, &mut rng);
        let (Block::BiLstm(a), Block::BiLstm(b), Block::Output(o)) =
            (&model.blocks()[0], &model.blocks()[1], &model.blocks()[2])
        else {
            unreachable!()
        };
        let h1 = bilstm_forward(&a.forward, &a.backward, &x).unwrap();
        let h2 = bilstm_forward(&b.forward, &b.backward, &h1).unwrap();
        assert_eq!(model.distributions(&x).unwrap(), dense_softmax(o, &h2).unwrap());
    }

    #[test]
    fn single_bilstm_is_a_prefix_of_two_stage() {
        let sb = build_model(&ModelSpec::new(ArchitectureId::Sb, 7).with_hidden(3)).unwrap();
        let bl = build_model(&ModelSpec::new(ArchitectureId::Bl, 7).with_hidden(3)).unwrap();
        let shapes = |b: &Block| -> Vec<_> { b.parameters().iter().map(|p| p.value.shape()).collect() };
        assert_eq!(shapes(&sb.blocks()[0]), shapes(&bl.blocks()[0]));
        assert_eq!(
            shapes(sb.blocks().last().unwrap()),
            shapes(bl.blocks().last().unwrap())
        );
    }

    #[test]
    fn padding_only_entry_predicts_nothing() {
        let model = build_model(&ModelSpec::new(ArchitectureId::Sb, 4).with_hidden(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut x = random_batch(&[2, 2], 4, &mut rng);
        x.set_mask(vec![true, true, false, false]).unwrap();
        for t in 0..2 {
            x.vector_mut(1, t).iter_mut().for_each(|v| *v = 0.0);
        }
        let labels = predict_labels(&model, &x).unwrap();
        assert_eq!(labels[0].len(), 2);
        assert!(labels[1].is_empty());
    }

    #[test]
    fn full_models_pass_gradient_check() {
        for arch in ArchitectureId::ALL {
            for seed in 0..5 {
                let spec = ModelSpec::new(arch, 6)
                    .with_hidden(3)
                    .with_attention_dim(4)
                    .with_seed(seed);
                let mut model = build_model(&spec).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
                let x = random_batch(&[3, 3], 6, &mut rng);
                // Between truncation (large ε) and one-ulp noise on the score
                // bias, whose true gradient is exactly zero (small ε).
                let err = crate::numeric::grad_check(&mut model, &x, 3e-4).unwrap();
                assert!(err < 1e-4, "{arch} seed {seed}: {err:e}");
            }
        }
    }

    proptest! {
        #[test]
        fn argmax_invariant_under_monotone_maps(
            logits in proptest::collection::vec(-20.0f64..20.0, 3),
            scale in 0.1f64..5.0,
            shift in -3.0f64..3.0,
        ) {
            let mut probs = logits.clone();
            crate::numeric::softmax_in_place(&mut probs);
            let affine: Vec<f64> = logits.iter().map(|v| scale * v + shift).collect();
            let cubic: Vec<f64> = logits.iter().map(|v| v * v * v).collect();
            let base = argmax_label(&logits);
            prop_assert_eq!(argmax_label(&probs), base);
            prop_assert_eq!(argmax_label(&affine), base);
            prop_assert_eq!(argmax_label(&cubic), base);
        }
    }
}
