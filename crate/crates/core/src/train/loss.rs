use crate::error::{Error, Result, Shape};
use crate::labels::Label;
use crate::numeric::{BatchTensor, Objective};

fn check_gold(pred: &BatchTensor, gold: &[Vec<Label>]) -> Result<usize> {
    if pred.features() != Label::COUNT || gold.len() != pred.batch() {
        return Err(Error::Dimension {
            op: "masked_cross_entropy",
            left: Shape(pred.batch(), pred.features()),
            right: Shape(gold.len(), Label::COUNT),
        });
    }
    let mut total = 0;
    for (b, labels) in gold.iter().enumerate() {
        let valid = pred.valid_steps(b);
        if valid.len() != labels.len() {
            return Err(Error::Contract(format!(
                "sequence {b} has {} valid steps but {} gold labels",
                valid.len(),
                labels.len()
            )));
        }
        total += valid.len();
    }
    if total == 0 {
        return Err(Error::Contract("cross-entropy over a batch with no valid tokens".into()));
    }
    Ok(total)
}

/// Mean of `−ln p(gold)` over valid tokens, and its gradient with respect
/// to the predicted distributions (zero at padded steps).
pub fn masked_cross_entropy(pred: &BatchTensor, gold: &[Vec<Label>]) -> Result<(f64, BatchTensor)> {
    let n = check_gold(pred, gold)? as f64;
    let mut grad = pred.zeros_like(Label::COUNT);
    let mut loss = 0.0;
    for (b, labels) in gold.iter().enumerate() {
        for (t, &label) in pred.valid_steps(b).into_iter().zip(labels) {
            let k = label.index();
            // `max` would swallow a NaN and hide a diverged forward pass.
            let raw = pred.vector(b, t)[k];
            let p = if raw < f64::MIN_POSITIVE { f64::MIN_POSITIVE } else { raw };
            loss -= p.ln();
            grad.vector_mut(b, t)[k] = -1.0 / (n * p);
        }
    }
    Ok((loss / n, grad))
}

/// Cross-entropy against fixed gold labels, usable with the gradient checker.
#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub gold: Vec<Vec<Label>>,
}

impl Objective for CrossEntropy {
    fn evaluate(&self, output: &BatchTensor) -> Result<(f64, BatchTensor)> {
        masked_cross_entropy(output, &self.gold)
    }
}
