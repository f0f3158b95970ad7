//! Pair-level classification interface shared by the student, the teacher,
//! annotators and test stubs.

use crate::corpus::{Label, Product, Query};
use crate::error::Result;

pub trait PairClassifier {
    fn classify(&self, q: &Query, p: &Product) -> Result<Label>;
}

/// Adapter for closures, mostly for tests and oracle baselines.
pub struct FnClassifier<F>(pub F);

impl<F> PairClassifier for FnClassifier<F>
where
    F: Fn(&Query, &Product) -> Label,
{
    fn classify(&self, q: &Query, p: &Product) -> Result<Label> {
        Ok((self.0)(q, p))
    }
}

/// The ground-truth oracle as a classifier.
pub struct OracleClassifier;

impl PairClassifier for OracleClassifier {
    fn classify(&self, q: &Query, p: &Product) -> Result<Label> {
        Ok(crate::corpus::judge_label(q, p))
    }
}
