//! Relevance annotator: CoT simulation and tuning, KTO alignment against
//! purchases, and hard-sample mining.

pub mod cot;
pub mod kto;
pub mod mining;
pub mod simulator;
pub mod tuning;

pub use cot::{cot_prompt, parse_cot, parse_cot_recover, CoTRecord, MAX_COT_TOKENS};
pub use kto::{
    align_kto, align_kto_selected, build_preference_set, estimate_z0, kto_loss, kto_loss_with_z0, kto_objective,
    purchase_false_negative_rate, AlignReport, KtoConfig, KtoTrainConfig, PreferenceExample, Selector,
};
pub use mining::{mine_hard, MiningResult};
pub use simulator::{extract_product, extract_query, filter_cot_consistent, render_cot};
pub use tuning::{annotate, train_cot_model, Annotation, CotExample, CotTrainConfig, CotTrainReport};

use crate::corpus::{Label, Product, Query, Vocab, World};
use crate::error::{Error, Result};
use crate::neural::DecoderModel;

/// Anything that produces a CoT annotation for a pair.
pub trait CotAnnotator {
    fn annotate_pair(&self, q: &Query, p: &Product) -> Result<Annotation>;

    /// Verdict for labelling purposes: decode failures count as Irrelevant
    /// and are flagged as malformed.
    fn verdict(&self, q: &Query, p: &Product) -> Result<(Label, bool)> {
        match self.annotate_pair(q, p) {
            Ok(a) => Ok((a.record.verdict, a.repaired)),
            Err(Error::Decode(msg)) => {
                log::warn!("malformed annotation treated as Irrelevant: {msg}");
                Ok((Label::Irrelevant, true))
            }
            Err(e) => Err(e),
        }
    }
}

/// A tuned CoT decoder.
pub struct DecoderAnnotator<'a> {
    pub decoder: &'a DecoderModel,
    pub vocab: &'a Vocab,
}

impl CotAnnotator for DecoderAnnotator<'_> {
    fn annotate_pair(&self, q: &Query, p: &Product) -> Result<Annotation> {
        annotate(self.decoder, self.vocab, q, p)
    }
}

/// The rule-based simulator, usable wherever a trained annotator is.
pub struct SimulatedAnnotator<'a> {
    pub world: &'a World,
    pub strictness: f64,
    pub seed: u64,
}

impl CotAnnotator for SimulatedAnnotator<'_> {
    fn annotate_pair(&self, q: &Query, p: &Product) -> Result<Annotation> {
        Ok(Annotation {
            record: render_cot(self.world, q, p, self.strictness, self.seed)?,
            repaired: false,
        })
    }
}
