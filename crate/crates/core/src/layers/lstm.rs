use rand::Rng;

use crate::error::{Error, Result, Shape};
use crate::numeric::{sigmoid, t_matmul_acc, BatchTensor, Layer, Matrix, Parameter};

/// LSTM cell parameters with the four gates fused column-wise.
///
/// Column block `k·hidden .. (k+1)·hidden` of `w`, `u` and `b` belongs to gate
/// `k` in the order input, forget, cell candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w: Parameter,
    pub u: Parameter,
    pub b: Parameter,
    input_dim: usize,
    hidden: usize,
}

pub(crate) const FORGET_BIAS: f64 = 1.0;

impl LstmCell {
    /// Glorot-uniform weights per gate, zero biases except forget gate at 1.0.
    pub fn new<R: Rng + ?Sized>(prefix: &str, input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let w = Matrix::glorot_uniform(input_dim, 4 * hidden, input_dim, hidden, rng);
        let u = Matrix::glorot_uniform(hidden, 4 * hidden, hidden, hidden, rng);
        let mut b = Matrix::zeros(1, 4 * hidden);
        for j in hidden..2 * hidden {
            b.set(0, j, FORGET_BIAS);
        }
        Self::from_parts(prefix, w, u, b).expect("shapes built consistently")
    }

    pub fn zeros(prefix: &str, input_dim: usize, hidden: usize) -> Self {
        Self::from_parts(
            prefix,
            Matrix::zeros(input_dim, 4 * hidden),
            Matrix::zeros(hidden, 4 * hidden),
            Matrix::zeros(1, 4 * hidden),
        )
        .expect("shapes built consistently")
    }

    pub fn from_parts(prefix: &str, w: Matrix, u: Matrix, b: Matrix) -> Result<Self> {
        let hidden = u.rows();
        if u.cols() != 4 * hidden || w.cols() != 4 * hidden || b.rows() != 1 || b.cols() != 4 * hidden
        {
            return Err(Error::Dimension {
                op: "lstm_cell",
                left: w.shape(),
                right: u.shape(),
            });
        }
        Ok(Self {
            input_dim: w.rows(),
            hidden,
            w: Parameter::new(format!("{prefix}.w"), w),
            u: Parameter::new(format!("{prefix}.u"), u),
            b: Parameter::new(format!("{prefix}.b"), b),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// One time step for a single sequence.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = self.hidden;
        if x.len() != self.input_dim || h_prev.len() != h || c_prev.len() != h {
            return Err(Error::Dimension {
                op: "lstm_cell_step",
                left: Shape(self.input_dim, h),
                right: Shape(x.len(), h_prev.len().max(c_prev.len())),
            });
        }
        let mut z = self.b.value.as_slice().to_vec();
        accumulate_row(x, &self.w.value, &mut z);
        accumulate_row(h_prev, &self.u.value, &mut z);
        let mut h_t = vec![0.0; h];
        let mut c_t = vec![0.0; h];
        for j in 0..h {
            let (i, f, g, o) = gate_values(&z, h, j);
            c_t[j] = f * c_prev[j] + i * g;
            h_t[j] = o * c_t[j].tanh();
        }
        Ok((h_t, c_t))
    }

    pub fn parameters(&self) -> [&Parameter; 3] {
        [&self.w, &self.u, &self.b]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 3] {
        [&mut self.w, &mut self.u, &mut self.b]
    }
}

/// `(h_t, c_t)` for one LSTM step.
pub fn lstm_cell_step(
    cell: &LstmCell,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    cell.step(x, h_prev, c_prev)
}

#[inline]
fn gate_values(z: &[f64], h: usize, j: usize) -> (f64, f64, f64, f64) {
    (
        sigmoid(z[j]),
        sigmoid(z[h + j]),
        z[2 * h + j].tanh(),
        sigmoid(z[3 * h + j]),
    )
}

/// `out += v · m` for a row vector `v`.
fn accumulate_row(v: &[f64], m: &Matrix, out: &mut [f64]) {
    for (k, &a) in v.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(m.row(k)) {
            *o += a * w;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn order(self, time: usize) -> Vec<usize> {
        match self {
            Direction::Forward => (0..time).collect(),
            Direction::Backward => (0..time).rev().collect(),
        }
    }
}

/// Activations of one direction, one row per `(b, t)`.
#[derive(Debug, Clone)]
pub struct DirectionCache {
    direction: Direction,
    gates: Matrix,
    tanh_c: Matrix,
    h_prev: Matrix,
    c_prev: Matrix,
}

/// Run `cell` over every sequence of the batch in one direction.
///
/// Padded steps leave the recurrent state untouched and emit zeros, so a
/// backward pass effectively starts at the last valid token.
pub fn run_direction(
    cell: &LstmCell,
    input: &BatchTensor,
    direction: Direction,
) -> Result<(Matrix, DirectionCache)> {
    input.check_features("lstm", cell.input_dim)?;
    let (batch, time, h) = (input.batch(), input.time(), cell.hidden);
    let rows = batch * time;
    let xw = input.data().matmul(&cell.w.value)?;
    let bias = cell.b.value.as_slice();
    let mut out = Matrix::zeros(rows, h);
    let mut cache = DirectionCache {
        direction,
        gates: Matrix::zeros(rows, 4 * h),
        tanh_c: Matrix::zeros(rows, h),
        h_prev: Matrix::zeros(rows, h),
        c_prev: Matrix::zeros(rows, h),
    };
    let mut h_state = Matrix::zeros(batch, h);
    let mut c_state = Matrix::zeros(batch, h);
    let mut z = vec![0.0; 4 * h];
    for t in direction.order(time) {
        let hu = h_state.matmul(&cell.u.value)?;
        for b in 0..batch {
            let r = b * time + t;
            if !input.mask()[r] {
                continue;
            }
            cache.h_prev.row_mut(r).copy_from_slice(h_state.row(b));
            cache.c_prev.row_mut(r).copy_from_slice(c_state.row(b));
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = xw.get(r, k) + hu.get(b, k) + bias[k];
            }
            for j in 0..h {
                let (i, f, g, o) = gate_values(&z, h, j);
                let c = f * c_state.get(b, j) + i * g;
                let tc = c.tanh();
                let hh = o * tc;
                let gates = cache.gates.row_mut(r);
                gates[j] = i;
                gates[h + j] = f;
                gates[2 * h + j] = g;
                gates[3 * h + j] = o;
                cache.tanh_c.set(r, j, tc);
                c_state.set(b, j, c);
                h_state.set(b, j, hh);
                out.set(r, j, hh);
            }
        }
    }
    Ok((out, cache))
}

/// Backpropagation through time for one direction. Accumulates into the
/// cell's gradients and returns the gradient with respect to the input.
pub fn backprop_direction(
    cell: &mut LstmCell,
    input: &BatchTensor,
    cache: &DirectionCache,
    grad_out: &Matrix,
) -> Result<Matrix> {
    let (batch, time, h) = (input.batch(), input.time(), cell.hidden);
    if grad_out.rows() != batch * time || grad_out.cols() != h {
        return Err(Error::Dimension {
            op: "lstm_backward",
            left: Shape(batch * time, h),
            right: grad_out.shape(),
        });
    }
    let mut dz_all = Matrix::zeros(batch * time, 4 * h);
    let mut dh_next = Matrix::zeros(batch, h);
    let mut dc_next = Matrix::zeros(batch, h);
    let mut dz_step = Matrix::zeros(batch, 4 * h);
    let mut hp_step = Matrix::zeros(batch, h);
    for t in cache.direction.order(time).into_iter().rev() {
        dz_step.fill(0.0);
        hp_step.fill(0.0);
        for b in 0..batch {
            let r = b * time + t;
            if !input.mask()[r] {
                continue;
            }
            let gates = cache.gates.row(r);
            for j in 0..h {
                let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = cache.tanh_c.get(r, j);
                let dh = grad_out.get(r, j) + dh_next.get(b, j);
                let d_o = dh * tc;
                let dc = dc_next.get(b, j) + dh * o * (1.0 - tc * tc);
                let di = dc * g;
                let dg = dc * i;
                let df = dc * cache.c_prev.get(r, j);
                dc_next.set(b, j, dc * f);
                let dz = dz_step.row_mut(b);
                dz[j] = di * i * (1.0 - i);
                dz[h + j] = df * f * (1.0 - f);
                dz[2 * h + j] = dg * (1.0 - g * g);
                dz[3 * h + j] = d_o * o * (1.0 - o);
            }
            dz_all.row_mut(r).copy_from_slice(dz_step.row(b));
            hp_step.row_mut(b).copy_from_slice(cache.h_prev.row(r));
        }
        let dh_prev = dz_step.matmul_t(&cell.u.value)?;
        for b in 0..batch {
            if input.mask()[b * time + t] {
                dh_next.row_mut(b).copy_from_slice(dh_prev.row(b));
            }
        }
        t_matmul_acc(&hp_step, &dz_step, &mut cell.u.grad);
        cell.b.grad.add_assign(&dz_step.column_sums())?;
    }
    t_matmul_acc(input.data(), &dz_all, &mut cell.w.grad);
    dz_all.matmul_t(&cell.w.value)
}

/// Bidirectional LSTM; output step `t` is `[forward h_t, backward h_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    input: BatchTensor,
    forward: DirectionCache,
    backward: DirectionCache,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(prefix: &str, input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            forward: LstmCell::new(&format!("{prefix}.fwd"), input_dim, hidden, rng),
            backward: LstmCell::new(&format!("{prefix}.bwd"), input_dim, hidden, rng),
        }
    }

    pub fn from_cells(forward: LstmCell, backward: LstmCell) -> Result<Self> {
        if forward.input_dim != backward.input_dim || forward.hidden != backward.hidden {
            return Err(Error::Dimension {
                op: "bilstm",
                left: Shape(forward.input_dim, forward.hidden),
                right: Shape(backward.input_dim, backward.hidden),
            });
        }
        Ok(Self { forward, backward })
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }
}

/// Forward pass of a bidirectional LSTM with separate direction parameters.
pub fn bilstm_forward(fwd: &LstmCell, bwd: &LstmCell, seq: &BatchTensor) -> Result<BatchTensor> {
    let (f, _) = run_direction(fwd, seq, Direction::Forward)?;
    let (b, _) = run_direction(bwd, seq, Direction::Backward)?;
    seq.with_data(concat_columns(&f, &b))
}

fn concat_columns(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), a.cols() + b.cols());
    for r in 0..a.rows() {
        let row = out.row_mut(r);
        row[..a.cols()].copy_from_slice(a.row(r));
        row[a.cols()..].copy_from_slice(b.row(r));
    }
    out
}

fn split_columns(m: &Matrix, at: usize) -> (Matrix, Matrix) {
    let mut a = Matrix::zeros(m.rows(), at);
    let mut b = Matrix::zeros(m.rows(), m.cols() - at);
    for r in 0..m.rows() {
        a.row_mut(r).copy_from_slice(&m.row(r)[..at]);
        b.row_mut(r).copy_from_slice(&m.row(r)[at..]);
    }
    (a, b)
}

impl Layer for BiLstm {
    type Cache = BiLstmCache;

    fn forward(&self, input: &BatchTensor) -> Result<(BatchTensor, BiLstmCache)> {
        let (f, fc) = run_direction(&self.forward, input, Direction::Forward)?;
        let (b, bc) = run_direction(&self.backward, input, Direction::Backward)?;
        let out = input.with_data(concat_columns(&f, &b))?;
        Ok((
            out,
            BiLstmCache {
                input: input.clone(),
                forward: fc,
                backward: bc,
            },
        ))
    }

    fn backward(&mut self, cache: &BiLstmCache, grad_output: &BatchTensor) -> Result<BatchTensor> {
        grad_output.check_features("bilstm_backward", self.output_dim())?;
        let (gf, gb) = split_columns(grad_output.data(), self.forward.hidden);
        let mut dx = backprop_direction(&mut self.forward, &cache.input, &cache.forward, &gf)?;
        let dxb = backprop_direction(&mut self.backward, &cache.input, &cache.backward, &gb)?;
        dx.add_assign(&dxb)?;
        cache.input.with_data(dx)
    }

    fn parameters(&self) -> Vec<&Parameter> {
        self.forward
            .parameters()
            .into_iter()
            .chain(self.backward.parameters())
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let (f, b) = (&mut self.forward, &mut self.backward);
        f.parameters_mut().into_iter().chain(b.parameters_mut()).collect()
    }
}
