use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{softmax_in_place, BatchTensor, Layer, Matrix, Parameter};

/// Time-distributed affine map `y_t = x_t W + b`. Padded steps emit zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Parameter,
    pub b: Parameter,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(prefix: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            w: Parameter::new(
                format!("{prefix}.w"),
                Matrix::glorot_uniform(d_in, d_out, d_in, d_out, rng),
            ),
            b: Parameter::new(format!("{prefix}.b"), Matrix::zeros(1, d_out)),
        }
    }

    pub fn from_parts(prefix: &str, w: Matrix, b: Matrix) -> Result<Self> {
        if b.rows() != 1 || b.cols() != w.cols() {
            return Err(Error::Dimension {
                op: "dense",
                left: w.shape(),
                right: b.shape(),
            });
        }
        Ok(Self {
            w: Parameter::new(format!("{prefix}.w"), w),
            b: Parameter::new(format!("{prefix}.b"), b),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.value.cols()
    }

    fn affine(&self, input: &BatchTensor) -> Result<Matrix> {
        input.check_features("dense", self.input_dim())?;
        let mut y = input.data().matmul(&self.w.value)?;
        y.add_row_broadcast(&self.b.value)?;
        Ok(y)
    }

    fn backward_affine(&mut self, input: &BatchTensor, grad: &Matrix) -> Result<BatchTensor> {
        self.w.grad.add_assign(&input.data().t_matmul(grad)?)?;
        self.b.grad.add_assign(&grad.column_sums())?;
        input.with_data(grad.matmul_t(&self.w.value)?)
    }
}

fn zero_padded_rows(m: &mut Matrix, mask: &[bool]) {
    for (r, &valid) in mask.iter().enumerate() {
        if !valid {
            m.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

impl Layer for Dense {
    type Cache = BatchTensor;

    fn forward(&self, input: &BatchTensor) -> Result<(BatchTensor, BatchTensor)> {
        let mut y = self.affine(input)?;
        zero_padded_rows(&mut y, input.mask());
        Ok((input.with_data(y)?, input.clone()))
    }

    fn backward(&mut self, input: &BatchTensor, grad_output: &BatchTensor) -> Result<BatchTensor> {
        grad_output.check_features("dense_backward", self.output_dim())?;
        let mut g = grad_output.data().clone();
        zero_padded_rows(&mut g, input.mask());
        self.backward_affine(input, &g)
    }

    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.w, &self.b]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Time-distributed affine map followed by a softmax over the label set.
/// Padded steps emit the uniform distribution and receive no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSoftmax {
    pub dense: Dense,
}

#[derive(Debug, Clone)]
pub struct DenseSoftmaxCache {
    input: BatchTensor,
    probs: Matrix,
}

impl DenseSoftmax {
    pub fn new<R: Rng + ?Sized>(prefix: &str, d_in: usize, classes: usize, rng: &mut R) -> Self {
        Self {
            dense: Dense::new(prefix, d_in, classes, rng),
        }
    }

    /// Pre-softmax scores; padded rows are zero.
    pub fn logits(&self, input: &BatchTensor) -> Result<Matrix> {
        let mut y = self.dense.affine(input)?;
        zero_padded_rows(&mut y, input.mask());
        Ok(y)
    }
}

/// Per-token label distributions.
pub fn dense_softmax(p: &DenseSoftmax, seq: &BatchTensor) -> Result<BatchTensor> {
    Ok(p.forward(seq)?.0)
}

impl Layer for DenseSoftmax {
    type Cache = DenseSoftmaxCache;

    fn forward(&self, input: &BatchTensor) -> Result<(BatchTensor, DenseSoftmaxCache)> {
        let mut probs = self.logits(input)?;
        for r in 0..probs.rows() {
            softmax_in_place(probs.row_mut(r));
        }
        Ok((
            input.with_data(probs.clone())?,
            DenseSoftmaxCache {
                input: input.clone(),
                probs,
            },
        ))
    }

    fn backward(&mut self, cache: &DenseSoftmaxCache, grad_output: &BatchTensor) -> Result<BatchTensor> {
        grad_output.check_features("dense_softmax_backward", self.dense.output_dim())?;
        let mut g = Matrix::zeros(cache.probs.rows(), cache.probs.cols());
        for (r, &valid) in cache.input.mask().iter().enumerate() {
            if !valid {
                continue;
            }
            let p = cache.probs.row(r);
            let go = grad_output.data().row(r);
            let inner: f64 = p.iter().zip(go).map(|(a, b)| a * b).sum();
            for (k, gv) in g.row_mut(r).iter_mut().enumerate() {
                *gv = p[k] * (go[k] - inner);
            }
        }
        self.dense.backward_affine(&cache.input, &g)
    }

    fn parameters(&self) -> Vec<&Parameter> {
        self.dense.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.dense.parameters_mut()
    }
}
