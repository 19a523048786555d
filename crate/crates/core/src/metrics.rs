use serde::{Deserialize, Serialize};

use crate::svm::{DatasetView, GlobalModel, Label, SvmError};

/// Confusion counts with +1 as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Positive, Label::Positive) => self.true_positive += 1,
            (Label::Negative, Label::Positive) => self.false_positive += 1,
            (Label::Positive, Label::Negative) => self.false_negative += 1,
            (Label::Negative, Label::Negative) => self.true_negative += 1,
        }
    }

    /// F1 of the positive class; 0 when there are no true positives.
    pub fn f1(&self) -> f64 {
        let tp = self.true_positive as f64;
        let denom = 2.0 * tp + self.false_positive as f64 + self.false_negative as f64;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    }

    /// Unweighted mean of the per-class accuracies over classes present.
    pub fn mccr(&self) -> f64 {
        let pos = self.true_positive + self.false_negative;
        let neg = self.true_negative + self.false_positive;
        let mut rates = Vec::with_capacity(2);
        if pos > 0 {
            rates.push(self.true_positive as f64 / pos as f64);
        }
        if neg > 0 {
            rates.push(self.true_negative as f64 / neg as f64);
        }
        if rates.is_empty() {
            0.0
        } else {
            rates.iter().sum::<f64>() / rates.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1: f64,
    pub mccr: f64,
    pub confusion: Confusion,
}

impl From<Confusion> for Metrics {
    fn from(confusion: Confusion) -> Self {
        Metrics {
            f1: confusion.f1(),
            mccr: confusion.mccr(),
            confusion,
        }
    }
}

pub fn evaluate(model: &GlobalModel, data: &DatasetView) -> Result<Metrics, SvmError> {
    if data.is_empty() {
        return Err(SvmError::EmptyDataset);
    }
    if model.dim() != data.dim() {
        return Err(SvmError::DimensionMismatch {
            expected: model.dim(),
            got: data.dim(),
        });
    }
    let mut c = Confusion::default();
    for s in data.samples() {
        c.record(s.y, model.predict(&s.x));
    }
    Ok(c.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svm::LabeledSample;
    use proptest::prelude::*;

    fn view(points: &[(f64, Label)]) -> DatasetView {
        DatasetView::from_samples(
            points
                .iter()
                .map(|&(x, y)| LabeledSample::new(vec![x], y))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_separation() {
        let data = view(&[(1.0, Label::Positive), (-1.0, Label::Negative), (2.0, Label::Positive)]);
        let m = evaluate(&GlobalModel::new(vec![1.0]), &data).unwrap();
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.mccr, 1.0);
        assert_eq!(m.confusion.total(), 3);
    }

    #[test]
    fn constant_positive_prediction_on_balanced_data() {
        let data = view(&[(1.0, Label::Positive), (-1.0, Label::Negative)]);
        let m = evaluate(&GlobalModel::zeros(1), &data).unwrap();
        assert_eq!(m.mccr, 0.5);
    }

    #[test]
    fn f1_from_counts() {
        let c = Confusion {
            true_positive: 3,
            false_positive: 1,
            false_negative: 1,
            true_negative: 5,
        };
        assert!((c.f1() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let data = DatasetView::new(vec![], 2).unwrap();
        assert_eq!(evaluate(&GlobalModel::zeros(2), &data), Err(SvmError::EmptyDataset));
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_invariant(
            pts in proptest::collection::vec((-1.0f64..1.0, any::<bool>()), 1..40),
            w in -2.0f64..2.0,
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let labeled: Vec<(f64, Label)> = pts
                .iter()
                .map(|&(x, b)| (x, if b { Label::Positive } else { Label::Negative }))
                .collect();
            let mut shuffled = labeled.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let model = GlobalModel::new(vec![w]);
            let a = evaluate(&model, &view(&labeled)).unwrap();
            let b = evaluate(&model, &view(&shuffled)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
