use crate::error::{Error, Result};
use crate::numeric::{Matrix, Parameter};

/// Adam moments for an ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moments(&self) -> (&[Matrix], &[Matrix]) {
        (&self.m, &self.v)
    }
}

/// One bias-corrected Adam update from the accumulated gradients. Nothing is
/// modified if any gradient is non-finite.
pub fn adam_step(params: &mut [&mut Parameter], state: &mut AdamState, lr: f64) -> Result<()> {
    for p in params.iter() {
        if !p.grad.is_finite() {
            return Err(Error::Numeric {
                name: p.name.clone(),
            });
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len()
        || params.iter().zip(&state.m).any(|(p, m)| p.value.shape() != m.shape())
    {
        return Err(Error::Contract("Adam state does not match the parameter list".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad.as_slice();
        let m = m.as_mut_slice();
        let v = v.as_mut_slice();
        for (k, w) in p.value.as_mut_slice().iter_mut().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64]) -> Parameter {
        Parameter::new("w", Matrix::from_vec(1, values.len(), values.to_vec()).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = param(&[1.0, -2.0]);
        let mut s = AdamState::new();
        for _ in 0..3 {
            adam_step(&mut [&mut p], &mut s, 0.1).unwrap();
        }
        assert_eq!(p.value.as_slice(), [1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = param(&[0.0, 0.0]);
        p.grad = Matrix::from_vec(1, 2, vec![3.0, -0.02]).unwrap();
        let mut s = AdamState::new();
        adam_step(&mut [&mut p], &mut s, 1e-3).unwrap();
        assert!((p.value.get(0, 0) + 1e-3).abs() < 1e-9);
        assert!((p.value.get(0, 1) - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = param(&[0.0]);
        p.grad.set(0, 0, f64::INFINITY);
        let mut s = AdamState::new();
        match adam_step(&mut [&mut p], &mut s, 1e-3) {
            Err(Error::Numeric { name }) => assert_eq!(name, "w"),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.step, 0);
    }

    #[test]
    fn quadratic_bowl_descends() {
        // f(w) = Σ a_k (w_k − c_k)², gradient 2 a (w − c).
        let a = [1.0, 4.0, 0.25];
        let c = [0.5, -1.0, 2.0];
        let f = |w: &[f64]| -> f64 { (0..3).map(|k| a[k] * (w[k] - c[k]).powi(2)).sum() };
        let mut p = param(&[3.0, 3.0, -3.0]);
        let mut s = AdamState::new();
        let mut losses = vec![f(p.value.as_slice())];
        for _ in 0..100 {
            let w = p.value.as_slice().to_vec();
            p.grad = Matrix::from_vec(1, 3, (0..3).map(|k| 2.0 * a[k] * (w[k] - c[k])).collect()).unwrap();
            adam_step(&mut [&mut p], &mut s, 0.01).unwrap();
            losses.push(f(p.value.as_slice()));
        }
        for w in losses[5..].windows(2) {
            assert!(w[1] < w[0], "{losses:?}");
        }
        assert!(losses[100] < 0.6 * losses[0]);
    }
}
