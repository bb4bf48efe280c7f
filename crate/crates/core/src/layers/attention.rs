//! Self-attention encoders that map a `time × d` sequence to a `time × d` sequence.
//!
//! Both forms score every valid query against every key, add
//! [`MASK_PENALTY`] to the logits of padded keys and normalise with a
//! max-shifted softmax, so padded keys receive exactly zero weight. Padded
//! query positions emit zero vectors. A sequence without any valid step is
//! rejected.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{dot, softmax_in_place, t_matmul_acc, BatchTensor, Layer, Matrix, Parameter};

/// Additive logit offset applied to padded keys.
pub const MASK_PENALTY: f64 = -1e9;

/// Default width of the additive scoring network.
pub const DEFAULT_ATTENTION_DIM: usize = 32;

/// Largest head count `≤ cap` that divides `d`.
pub fn choose_heads(d: usize, cap: usize) -> usize {
    (1..=cap.min(d).max(1))
        .rev()
        .find(|k| d % k == 0)
        .unwrap_or(1)
}

pub(crate) fn divisors(d: usize) -> Vec<usize> {
    (1..=d).filter(|k| d % k == 0).collect()
}

fn check_nonempty(input: &BatchTensor, op: &str) -> Result<()> {
    for b in 0..input.batch() {
        if !(0..input.time()).any(|t| input.is_valid(b, t)) {
            return Err(Error::Contract(format!(
                "{op}: sequence {b} of the batch has no valid positions"
            )));
        }
    }
    Ok(())
}

/// Pairwise additive self-attention:
/// `e[t,s] = v · tanh(x_t W_t + x_s W_x + b_h) + b_v`, `y_t = Σ_s softmax_s(e[t,·]) x_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveAttention {
    pub w_query: Parameter,
    pub w_key: Parameter,
    pub b_hidden: Parameter,
    pub v: Parameter,
    pub b_score: Parameter,
}

#[derive(Debug, Clone)]
pub struct AdditiveCache {
    input: BatchTensor,
    query_proj: Matrix,
    key_proj: Matrix,
    /// `batch` blocks of `time × time` weights.
    weights: Vec<Matrix>,
}

impl AdditiveAttention {
    pub fn new<R: Rng + ?Sized>(prefix: &str, d: usize, attention_dim: usize, rng: &mut R) -> Self {
        let a = attention_dim;
        Self {
            w_query: Parameter::new(format!("{prefix}.w_query"), Matrix::glorot_uniform(d, a, d, a, rng)),
            w_key: Parameter::new(format!("{prefix}.w_key"), Matrix::glorot_uniform(d, a, d, a, rng)),
            b_hidden: Parameter::new(format!("{prefix}.b_hidden"), Matrix::zeros(1, a)),
            v: Parameter::new(format!("{prefix}.v"), Matrix::glorot_uniform(a, 1, a, 1, rng)),
            b_score: Parameter::new(format!("{prefix}.b_score"), Matrix::zeros(1, 1)),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_query.value.rows()
    }

    pub fn attention_dim(&self) -> usize {
        self.w_query.value.cols()
    }

    fn score(&self, p: &[f64], q: &[f64]) -> f64 {
        let bh = self.b_hidden.value.as_slice();
        let v = self.v.value.as_slice();
        let mut e = self.b_score.value.as_slice()[0];
        for k in 0..p.len() {
            e += v[k] * (p[k] + q[k] + bh[k]).tanh();
        }
        e
    }

    /// Attention weights per sequence (`time × time`, rows are queries).
    pub fn attention_weights(&self, input: &BatchTensor) -> Result<Vec<Matrix>> {
        Ok(self.forward(input)?.1.weights)
    }
}

/// Additive self-attention over each sequence of the batch.
pub fn additive_self_attention(p: &AdditiveAttention, seq: &BatchTensor) -> Result<BatchTensor> {
    Ok(p.forward(seq)?.0)
}

impl Layer for AdditiveAttention {
    type Cache = AdditiveCache;

    fn forward(&self, input: &BatchTensor) -> Result<(BatchTensor, AdditiveCache)> {
        input.check_features("additive_attention", self.dim())?;
        check_nonempty(input, "additive_attention")?;
        let (batch, time) = (input.batch(), input.time());
        let query_proj = input.data().matmul(&self.w_query.value)?;
        let key_proj = input.data().matmul(&self.w_key.value)?;
        let mut out = input.zeros_like(self.dim());
        let mut weights = Vec::with_capacity(batch);
        for b in 0..batch {
            let mut alpha = Matrix::zeros(time, time);
            for t in 0..time {
                let rt = input.index(b, t);
                if !input.mask()[rt] {
                    continue;
                }
                let row = alpha.row_mut(t);
                for (s, e) in row.iter_mut().enumerate() {
                    let rs = input.index(b, s);
                    *e = self.score(query_proj.row(rt), key_proj.row(rs));
                    if !input.mask()[rs] {
                        *e += MASK_PENALTY;
                    }
                }
                softmax_in_place(row);
                let y = out.vector_mut(b, t);
                for (s, &a) in alpha.row(t).iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (yv, xv) in y.iter_mut().zip(input.vector(b, s)) {
                        *yv += a * xv;
                    }
                }
            }
            weights.push(alpha);
        }
        Ok((
            out,
            AdditiveCache {
                input: input.clone(),
                query_proj,
                key_proj,
                weights,
            },
        ))
    }

    fn backward(&mut self, cache: &AdditiveCache, grad_output: &BatchTensor) -> Result<BatchTensor> {
        let input = &cache.input;
        grad_output.check_features("additive_attention_backward", self.dim())?;
        let (batch, time, a_dim) = (input.batch(), input.time(), self.attention_dim());
        let mut dx = input.zeros_like(self.dim());
        let mut d_query = Matrix::zeros(batch * time, a_dim);
        let mut d_key = Matrix::zeros(batch * time, a_dim);
        let mut d_v = vec![0.0; a_dim];
        let mut d_bh = vec![0.0; a_dim];
        let mut d_bs = 0.0;
        let bh = self.b_hidden.value.as_slice().to_vec();
        let v = self.v.value.as_slice().to_vec();
        let mut d_alpha = vec![0.0; time];
        for b in 0..batch {
            let alpha = &cache.weights[b];
            for t in 0..time {
                let rt = input.index(b, t);
                if !input.mask()[rt] {
                    continue;
                }
                let g = grad_output.data().row(rt);
                let a_row = alpha.row(t);
                for s in 0..time {
                    d_alpha[s] = dot(g, input.vector(b, s));
                    if a_row[s] != 0.0 {
                        for (dxv, gv) in dx.vector_mut(b, s).iter_mut().zip(g) {
                            *dxv += a_row[s] * gv;
                        }
                    }
                }
                let inner: f64 = a_row.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
                for s in 0..time {
                    let de = a_row[s] * (d_alpha[s] - inner);
                    if de == 0.0 {
                        continue;
                    }
                    let rs = input.index(b, s);
                    d_bs += de;
                    let p = cache.query_proj.row(rt);
                    let q = cache.key_proj.row(rs);
                    for k in 0..a_dim {
                        let u = (p[k] + q[k] + bh[k]).tanh();
                        d_v[k] += de * u;
                        let du = de * v[k] * (1.0 - u * u);
                        d_query.row_mut(rt)[k] += du;
                        d_key.row_mut(rs)[k] += du;
                        d_bh[k] += du;
                    }
                }
            }
        }
        t_matmul_acc(input.data(), &d_query, &mut self.w_query.grad);
        t_matmul_acc(input.data(), &d_key, &mut self.w_key.grad);
        for (g, d) in self.v.grad.as_mut_slice().iter_mut().zip(&d_v) {
            *g += d;
        }
        for (g, d) in self.b_hidden.grad.as_mut_slice().iter_mut().zip(&d_bh) {
            *g += d;
        }
        self.b_score.grad.as_mut_slice()[0] += d_bs;
        let mut dxm = dx.into_data();
        dxm.add_assign(&d_query.matmul_t(&self.w_query.value)?)?;
        dxm.add_assign(&d_key.matmul_t(&self.w_key.value)?)?;
        input.with_data(dxm)
    }

    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.w_query, &self.w_key, &self.b_hidden, &self.v, &self.b_score]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.w_query,
            &mut self.w_key,
            &mut self.b_hidden,
            &mut self.v,
            &mut self.b_score,
        ]
    }
}

/// Multi-head scaled dot-product self-attention with full `d × d` projections
/// and no biases. Head `k` works on feature columns `k·d_k .. (k+1)·d_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub w_q: Parameter,
    pub w_k: Parameter,
    pub w_v: Parameter,
    pub w_o: Parameter,
    heads: usize,
}

#[derive(Debug, Clone)]
pub struct MultiHeadCache {
    input: BatchTensor,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    concat: Matrix,
    /// Indexed `[b * heads + head]`, each `time × time`.
    weights: Vec<Matrix>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(prefix: &str, d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        let mut proj = |name: &str| {
            Parameter::new(format!("{prefix}.{name}"), Matrix::glorot_uniform(d, d, d, d, rng))
        };
        let (w_q, w_k, w_v, w_o) = (proj("w_q"), proj("w_k"), proj("w_v"), proj("w_o"));
        Self::from_parameters(w_q, w_k, w_v, w_o, heads)
    }

    pub fn from_parameters(
        w_q: Parameter,
        w_k: Parameter,
        w_v: Parameter,
        w_o: Parameter,
        heads: usize,
    ) -> Result<Self> {
        let d = w_q.value.rows();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} heads do not divide dimension {d}; valid head counts: {:?}",
                divisors(d)
            )));
        }
        for p in [&w_q, &w_k, &w_v, &w_o] {
            if p.value.rows() != d || p.value.cols() != d {
                return Err(Error::Dimension {
                    op: "multi_head_attention",
                    left: w_q.value.shape(),
                    right: p.value.shape(),
                });
            }
        }
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_o,
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_q.value.rows()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    /// Per-sequence, per-head weights, indexed `[b * heads + head]`.
    pub fn attention_weights(&self, input: &BatchTensor) -> Result<Vec<Matrix>> {
        Ok(self.forward(input)?.1.weights)
    }
}

/// Multi-head scaled dot-product self-attention over each sequence.
pub fn multi_head_self_attention(p: &MultiHeadAttention, seq: &BatchTensor) -> Result<BatchTensor> {
    Ok(p.forward(seq)?.0)
}

impl Layer for MultiHeadAttention {
    type Cache = MultiHeadCache;

    fn forward(&self, input: &BatchTensor) -> Result<(BatchTensor, MultiHeadCache)> {
        input.check_features("multi_head_attention", self.dim())?;
        check_nonempty(input, "multi_head_attention")?;
        let (batch, time, dk) = (input.batch(), input.time(), self.head_dim());
        let scale = 1.0 / (dk as f64).sqrt();
        let q = input.data().matmul(&self.w_q.value)?;
        let k = input.data().matmul(&self.w_k.value)?;
        let v = input.data().matmul(&self.w_v.value)?;
        let mut concat = Matrix::zeros(batch * time, self.dim());
        let mut weights = Vec::with_capacity(batch * self.heads);
        for b in 0..batch {
            for head in 0..self.heads {
                let cols = head * dk..(head + 1) * dk;
                let mut a = Matrix::zeros(time, time);
                for t in 0..time {
                    let rt = input.index(b, t);
                    if !input.mask()[rt] {
                        continue;
                    }
                    let qt = &q.row(rt)[cols.clone()];
                    let row = a.row_mut(t);
                    for (s, e) in row.iter_mut().enumerate() {
                        let rs = input.index(b, s);
                        *e = dot(qt, &k.row(rs)[cols.clone()]) * scale;
                        if !input.mask()[rs] {
                            *e += MASK_PENALTY;
                        }
                    }
                    softmax_in_place(row);
                    let o = &mut concat.row_mut(rt)[cols.clone()];
                    for (s, &w) in a.row(t).iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let vs = &v.row(input.index(b, s))[cols.clone()];
                        for (ov, vv) in o.iter_mut().zip(vs) {
                            *ov += w * vv;
                        }
                    }
                }
                weights.push(a);
            }
        }
        let mut y = concat.matmul(&self.w_o.value)?;
        for (r, &valid) in input.mask().iter().enumerate() {
            if !valid {
                y.row_mut(r).iter_mut().for_each(|x| *x = 0.0);
            }
        }
        Ok((
            input.with_data(y)?,
            MultiHeadCache {
                input: input.clone(),
                q,
                k,
                v,
                concat,
                weights,
            },
        ))
    }

    fn backward(&mut self, cache: &MultiHeadCache, grad_output: &BatchTensor) -> Result<BatchTensor> {
        let input = &cache.input;
        grad_output.check_features("multi_head_attention_backward", self.dim())?;
        let (batch, time, dk, d) = (input.batch(), input.time(), self.head_dim(), self.dim());
        let scale = 1.0 / (dk as f64).sqrt();
        let mut dy = grad_output.data().clone();
        for (r, &valid) in input.mask().iter().enumerate() {
            if !valid {
                dy.row_mut(r).iter_mut().for_each(|x| *x = 0.0);
            }
        }
        t_matmul_acc(&cache.concat, &dy, &mut self.w_o.grad);
        let d_concat = dy.matmul_t(&self.w_o.value)?;
        let mut dq = Matrix::zeros(batch * time, d);
        let mut dk_m = Matrix::zeros(batch * time, d);
        let mut dv = Matrix::zeros(batch * time, d);
        let mut d_a = vec![0.0; time];
        for b in 0..batch {
            for head in 0..self.heads {
                let cols = head * dk..(head + 1) * dk;
                let a = &cache.weights[b * self.heads + head];
                for t in 0..time {
                    let rt = input.index(b, t);
                    if !input.mask()[rt] {
                        continue;
                    }
                    let g = &d_concat.row(rt)[cols.clone()];
                    let a_row = a.row(t);
                    for s in 0..time {
                        let rs = input.index(b, s);
                        d_a[s] = dot(g, &cache.v.row(rs)[cols.clone()]);
                        if a_row[s] != 0.0 {
                            for (dvv, gv) in dv.row_mut(rs)[cols.clone()].iter_mut().zip(g) {
                                *dvv += a_row[s] * gv;
                            }
                        }
                    }
                    let inner: f64 = a_row.iter().zip(&d_a).map(|(x, y)| x * y).sum();
                    for s in 0..time {
                        let ds = a_row[s] * (d_a[s] - inner) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let rs = input.index(b, s);
                        for j in cols.clone() {
                            let qv = cache.q.get(rt, j);
                            let kv = cache.k.get(rs, j);
                            dq.row_mut(rt)[j] += ds * kv;
                            dk_m.row_mut(rs)[j] += ds * qv;
                        }
                    }
                }
            }
        }
        t_matmul_acc(input.data(), &dq, &mut self.w_q.grad);
        t_matmul_acc(input.data(), &dk_m, &mut self.w_k.grad);
        t_matmul_acc(input.data(), &dv, &mut self.w_v.grad);
        let mut dx = dq.matmul_t(&self.w_q.value)?;
        dx.add_assign(&dk_m.matmul_t(&self.w_k.value)?)?;
        dx.add_assign(&dv.matmul_t(&self.w_v.value)?)?;
        input.with_data(dx)
    }

    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.w_q, &self.w_k, &self.w_v, &self.w_o]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o]
    }
}
