//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{BatchTensor, Matrix, Parameter};

/// A differentiable block with explicit forward and backward passes.
///
/// `forward` never mutates the layer; the returned cache is owned by the caller
/// and handed back to `backward`, which accumulates parameter gradients and
/// returns the gradient with respect to the input.
pub trait Layer {
    type Cache;

    fn forward(&self, input: &BatchTensor) -> Result<(BatchTensor, Self::Cache)>;

    fn backward(&mut self, cache: &Self::Cache, grad_output: &BatchTensor) -> Result<BatchTensor>;

    fn parameters(&self) -> Vec<&Parameter>;

    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}

/// Scalar function of a layer output, with its gradient.
pub trait Objective {
    fn evaluate(&self, output: &BatchTensor) -> Result<(f64, BatchTensor)>;
}

/// `Σ w ⊙ y` over valid positions.
#[derive(Debug, Clone)]
pub struct Projection {
    weights: Matrix,
}

impl Projection {
    pub fn new(weights: Matrix) -> Self {
        Self { weights }
    }

    /// All-ones weights, i.e. the plain sum of valid outputs.
    pub fn sum(rows: usize, cols: usize) -> Self {
        let mut weights = Matrix::zeros(rows, cols);
        weights.fill(1.0);
        Self { weights }
    }

    pub fn seeded(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            weights: Matrix::uniform(rows, cols, 1.0, &mut rng),
        }
    }
}

impl Objective for Projection {
    fn evaluate(&self, output: &BatchTensor) -> Result<(f64, BatchTensor)> {
        let mut grad = output.zeros_like(output.features());
        if self.weights.shape() != output.data().shape() {
            return Err(Error::Dimension {
                op: "projection",
                left: self.weights.shape(),
                right: output.data().shape(),
            });
        }
        let mut value = 0.0;
        for (r, &valid) in output.mask().iter().enumerate() {
            if !valid {
                continue;
            }
            let w = self.weights.row(r);
            value += w.iter().zip(output.data().row(r)).map(|(a, b)| a * b).sum::<f64>();
            grad.data_mut().row_mut(r).copy_from_slice(w);
        }
        Ok((value, grad))
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Location of the worst entry, e.g. `lstm.w[17]` or `input[3]`.
    pub worst: String,
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Worst relative error between analytic and central-difference gradients,
/// under a fixed random linear projection of the layer output.
pub fn grad_check<L: Layer>(layer: &mut L, input: &BatchTensor, epsilon: f64) -> Result<f64> {
    let (out, _) = layer.forward(input)?;
    let objective = Projection::seeded(out.data().rows(), out.features(), 0x5eed);
    Ok(grad_check_with(layer, input, epsilon, &objective)?.max_relative_error)
}

/// Compare analytic gradients against `(f(θ+ε) − f(θ−ε)) / 2ε` for every
/// parameter entry and every valid input entry.
pub fn grad_check_with<L: Layer, O: Objective>(
    layer: &mut L,
    input: &BatchTensor,
    epsilon: f64,
    objective: &O,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::Config(format!(
            "grad_check epsilon must lie in (0, 1e-2], got {epsilon}"
        )));
    }
    for p in layer.parameters() {
        if !p.value.is_finite() {
            return Err(Error::Numeric {
                name: p.name.clone(),
            });
        }
    }

    layer.zero_grad();
    let (out, cache) = layer.forward(input)?;
    let (_, upstream) = objective.evaluate(&out)?;
    let grad_input = layer.backward(&cache, &upstream)?;
    let analytic: Vec<Vec<f64>> = layer
        .parameters()
        .iter()
        .map(|p| p.grad.as_slice().to_vec())
        .collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        entries_checked: 0,
    };
    let record = |err: f64, location: String, report: &mut GradCheckReport| {
        report.entries_checked += 1;
        if err > report.max_relative_error || report.worst.is_empty() {
            report.max_relative_error = err;
            report.worst = location;
        }
    };

    let eval = |layer: &L, x: &BatchTensor, name: &str| -> Result<f64> {
        let (out, _) = layer.forward(x)?;
        let (v, _) = objective.evaluate(&out)?;
        if !v.is_finite() {
            return Err(Error::Numeric {
                name: name.to_string(),
            });
        }
        Ok(v)
    };

    for (pi, grads) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let (name, orig) = {
                let params = layer.parameters_mut();
                let p = &params[pi];
                (p.name.clone(), p.value.as_slice()[k])
            };
            layer.parameters_mut()[pi].value.as_mut_slice()[k] = orig + epsilon;
            let plus = eval(layer, input, &name);
            layer.parameters_mut()[pi].value.as_mut_slice()[k] = orig - epsilon;
            let minus = eval(layer, input, &name);
            layer.parameters_mut()[pi].value.as_mut_slice()[k] = orig;
            let n = (plus? - minus?) / (2.0 * epsilon);
            record(relative_error(a, n), format!("{name}[{k}]"), &mut report);
        }
    }

    let features = input.features();
    let mut probe = input.clone();
    for (r, &valid) in input.mask().iter().enumerate() {
        if !valid {
            continue;
        }
        for c in 0..features {
            let k = r * features + c;
            let orig = input.data().as_slice()[k];
            probe.data_mut().as_mut_slice()[k] = orig + epsilon;
            let plus = eval(layer, &probe, "input");
            probe.data_mut().as_mut_slice()[k] = orig - epsilon;
            let minus = eval(layer, &probe, "input");
            probe.data_mut().as_mut_slice()[k] = orig;
            let n = (plus? - minus?) / (2.0 * epsilon);
            let a = grad_input.data().as_slice()[k];
            record(relative_error(a, n), format!("input[{k}]"), &mut report);
        }
    }
    Ok(report)
}

/// Random batch with uniform(-1, 1) entries; sequence `b` has `lengths[b]` valid steps.
pub fn random_batch<R: Rng + ?Sized>(
    lengths: &[usize],
    features: usize,
    rng: &mut R,
) -> BatchTensor {
    let seqs: Vec<Vec<Vec<f64>>> = lengths
        .iter()
        .map(|&n| {
            (0..n)
                .map(|_| (0..features).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();
    BatchTensor::from_sequences(&seqs, features).expect("consistent feature width")
}
