use crate::error::{Error, Result, Shape};

use super::Matrix;

/// A named trainable matrix with its gradient accumulator.
///
/// Gradients only accumulate; they are cleared by [`Parameter::zero_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Padded batch of sequences: `batch × time × features`, plus a validity mask.
///
/// Values are stored as a `(batch·time) × features` matrix, so row `b·time + t`
/// holds the feature vector of sequence `b` at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTensor {
    batch: usize,
    time: usize,
    data: Matrix,
    mask: Vec<bool>,
}

impl BatchTensor {
    pub fn zeros(batch: usize, time: usize, features: usize) -> Self {
        Self {
            batch,
            time,
            data: Matrix::zeros(batch * time, features),
            mask: vec![true; batch * time],
        }
    }

    pub fn from_parts(batch: usize, time: usize, data: Matrix, mask: Vec<bool>) -> Result<Self> {
        if data.rows() != batch * time || mask.len() != batch * time {
            return Err(Error::Dimension {
                op: "batch_tensor",
                left: Shape(batch * time, data.cols()),
                right: Shape(data.rows(), mask.len()),
            });
        }
        Ok(Self {
            batch,
            time,
            data,
            mask,
        })
    }

    /// Build a right-padded batch from variable-length sequences of feature rows.
    pub fn from_sequences(seqs: &[Vec<Vec<f64>>], features: usize) -> Result<Self> {
        let time = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = Self::zeros(seqs.len(), time, features);
        out.mask.iter_mut().for_each(|m| *m = false);
        for (b, seq) in seqs.iter().enumerate() {
            for (t, v) in seq.iter().enumerate() {
                if v.len() != features {
                    return Err(Error::Dimension {
                        op: "from_sequences",
                        left: Shape(1, features),
                        right: Shape(1, v.len()),
                    });
                }
                let r = b * time + t;
                out.data.row_mut(r).copy_from_slice(v);
                out.mask[r] = true;
            }
        }
        Ok(out)
    }

    /// Same batch layout and mask, new feature matrix.
    pub fn with_data(&self, data: Matrix) -> Result<Self> {
        Self::from_parts(self.batch, self.time, data, self.mask.clone())
    }

    /// All-zero tensor with this layout and mask but `features` columns.
    pub fn zeros_like(&self, features: usize) -> Self {
        Self {
            batch: self.batch,
            time: self.time,
            data: Matrix::zeros(self.batch * self.time, features),
            mask: self.mask.clone(),
        }
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.batch
    }

    #[inline]
    pub fn time(&self) -> usize {
        self.time
    }

    #[inline]
    pub fn features(&self) -> usize {
        self.data.cols()
    }

    #[inline]
    pub fn data(&self) -> &Matrix {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut Matrix {
        &mut self.data
    }

    pub fn into_data(self) -> Matrix {
        self.data
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn set_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.mask.len() {
            return Err(Error::Dimension {
                op: "set_mask",
                left: Shape(self.batch, self.time),
                right: Shape(mask.len(), 1),
            });
        }
        self.mask = mask;
        Ok(())
    }

    #[inline]
    pub fn index(&self, b: usize, t: usize) -> usize {
        b * self.time + t
    }

    #[inline]
    pub fn is_valid(&self, b: usize, t: usize) -> bool {
        self.mask[b * self.time + t]
    }

    #[inline]
    pub fn vector(&self, b: usize, t: usize) -> &[f64] {
        self.data.row(b * self.time + t)
    }

    #[inline]
    pub fn vector_mut(&mut self, b: usize, t: usize) -> &mut [f64] {
        self.data.row_mut(b * self.time + t)
    }

    /// Indices of valid steps of sequence `b`.
    pub fn valid_steps(&self, b: usize) -> Vec<usize> {
        (0..self.time).filter(|&t| self.is_valid(b, t)).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Copy of sequence `b`'s rows as a `time × features` matrix.
    pub fn sequence_matrix(&self, b: usize) -> Matrix {
        let f = self.features();
        let start = b * self.time * f;
        Matrix::from_vec(
            self.time,
            f,
            self.data.as_slice()[start..start + self.time * f].to_vec(),
        )
        .expect("slice length matches shape")
    }

    pub(crate) fn check_features(&self, op: &'static str, expected: usize) -> Result<()> {
        if self.features() != expected {
            return Err(Error::Dimension {
                op,
                left: Shape(self.batch * self.time, self.features()),
                right: Shape(self.batch * self.time, expected),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn right_padding_from_sequences() {
        let seqs = vec![vec![vec![1.0, 2.0]], vec![vec![3.0, 4.0], vec![5.0, 6.0]]];
        let t = BatchTensor::from_sequences(&seqs, 2).unwrap();
        assert_eq!((t.batch(), t.time(), t.features()), (2, 2, 2));
        assert_eq!(t.mask(), &[true, false, true, true]);
        assert_eq!(t.vector(0, 1), &[0.0, 0.0]);
        assert_eq!(t.vector(1, 1), &[5.0, 6.0]);
        assert_eq!(t.valid_steps(0), vec![0]);
    }

    #[test]
    fn zero_grad_is_explicit() {
        let mut p = Parameter::new("w", Matrix::zeros(2, 2));
        p.grad.fill(3.0);
        assert!(p.grad.as_slice().iter().all(|&g| g == 3.0));
        p.zero_grad();
        assert!(p.grad.as_slice().iter().all(|&g| g == 0.0));
    }
}
