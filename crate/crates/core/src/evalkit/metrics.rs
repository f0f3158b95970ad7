//! Binary classification metrics with Relevant as the positive class.

use serde::{Deserialize, Serialize};

use crate::classifier::PairClassifier;
use crate::corpus::{Label, LabeledPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Precision had a zero denominator and is reported as 0.
    pub precision_undefined: bool,
    /// Recall had a zero denominator and is reported as 0.
    pub recall_undefined: bool,
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                (0.0, true)
            } else {
                (num as f64 / den as f64, false)
            }
        };
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
            precision_undefined,
            recall_undefined,
        }
    }

    /// Tally `(predicted, actual)` pairs.
    pub fn from_predictions(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (pred, actual) in pairs {
            match (pred, actual) {
                (Label::Relevant, Label::Relevant) => tp += 1,
                (Label::Relevant, Label::Irrelevant) => fp += 1,
                (Label::Irrelevant, Label::Relevant) => fn_ += 1,
                (Label::Irrelevant, Label::Irrelevant) => tn += 1,
            }
        }
        Self::from_counts(tp, fp, fn_, tn)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total().max(1) as f64
    }
}

/// Score `model` against the labels carried by `test`.
pub fn evaluate(model: &dyn PairClassifier, test: &[LabeledPair]) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::Input("empty evaluation set".into()));
    }
    let preds = test
        .iter()
        .map(|p| Ok((model.classify(&p.query, &p.product)?, p.label)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics::from_predictions(preds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_counts() {
        let m = Metrics::from_counts(3, 1, 2, 0);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.6);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!(!m.precision_undefined && !m.recall_undefined);
    }

    #[test]
    fn degenerate_predictor_is_flagged() {
        let m = Metrics::from_predictions([
            (Label::Irrelevant, Label::Relevant),
            (Label::Irrelevant, Label::Irrelevant),
        ]);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.precision_undefined);
        assert!(!m.recall_undefined);
    }

    #[test]
    fn perfect_predictor() {
        let m = Metrics::from_predictions([
            (Label::Relevant, Label::Relevant),
            (Label::Irrelevant, Label::Irrelevant),
        ]);
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }
}
