//! Hard-sample mining: exposures where the online student disagrees with
//! the annotator, relabelled with the annotator's verdict.

use super::CotAnnotator;
use crate::classifier::PairClassifier;
use crate::corpus::{ExposureLog, LabeledPair, Source};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct MiningResult {
    pub pairs: Vec<LabeledPair>,
    /// Exposures whose annotation was malformed (counted as Irrelevant).
    pub malformed: usize,
    pub inspected: usize,
}

pub fn mine_hard(
    annotator: &dyn CotAnnotator,
    student: &dyn PairClassifier,
    exposures: &ExposureLog,
) -> Result<MiningResult> {
    let mut pairs = Vec::new();
    let mut malformed = 0;
    for e in &exposures.entries {
        let (verdict, bad) = annotator.verdict(&e.query, &e.product)?;
        malformed += usize::from(bad);
        if student.classify(&e.query, &e.product)? != verdict {
            pairs.push(LabeledPair {
                query: e.query.clone(),
                product: e.product.clone(),
                label: verdict,
                source: Source::RDMined,
            });
        }
    }
    log::info!(
        "mined {} hard samples from {} exposures ({malformed} malformed)",
        pairs.len(),
        exposures.entries.len()
    );
    Ok(MiningResult {
        pairs,
        malformed,
        inspected: exposures.entries.len(),
    })
}
