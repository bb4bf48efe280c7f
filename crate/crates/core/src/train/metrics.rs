use serde::Serialize;

use crate::labels::Label;

const K: usize = Label::COUNT;

/// Token-level scores. `confusion[gold][predicted]`, classes in `B, I, O`
/// order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub confusion: [[usize; K]; K],
    pub support: [usize; K],
    pub precision: [f64; K],
    pub recall: [f64; K],
    pub f1: [f64; K],
    /// Per-class F1 weighted by gold support; classes without support get
    /// weight zero.
    pub weighted_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_confusion(confusion: [[usize; K]; K]) -> Self {
        let support: [usize; K] = std::array::from_fn(|g| confusion[g].iter().sum());
        let predicted: [usize; K] = std::array::from_fn(|p| (0..K).map(|g| confusion[g][p]).sum());
        let precision: [f64; K] = std::array::from_fn(|c| ratio(confusion[c][c], predicted[c]));
        let recall: [f64; K] = std::array::from_fn(|c| ratio(confusion[c][c], support[c]));
        let f1: [f64; K] = std::array::from_fn(|c| {
            let (p, r) = (precision[c], recall[c]);
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        });
        let total: usize = support.iter().sum();
        let weighted_f1 = if total == 0 {
            0.0
        } else {
            (0..K).map(|c| support[c] as f64 * f1[c]).sum::<f64>() / total as f64
        };
        let correct: usize = (0..K).map(|c| confusion[c][c]).sum();
        Self {
            confusion,
            support,
            precision,
            recall,
            f1,
            weighted_f1,
            accuracy: ratio(correct, total),
        }
    }

    /// Scores from aligned gold and predicted label sequences.
    pub fn from_labels<'a>(
        pairs: impl IntoIterator<Item = (&'a [Label], &'a [Label])>,
    ) -> Self {
        let mut confusion = [[0; K]; K];
        for (gold, pred) in pairs {
            assert_eq!(gold.len(), pred.len(), "gold and predicted lengths differ");
            for (g, p) in gold.iter().zip(pred) {
                confusion[g.index()][p.index()] += 1;
            }
        }
        Self::from_confusion(confusion)
    }

    pub fn tokens(&self) -> usize {
        self.support.iter().sum()
    }

    pub fn f1_of(&self, label: Label) -> f64 {
        self.f1[label.index()]
    }
}
