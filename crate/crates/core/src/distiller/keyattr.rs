//! CoT rewriting into compact key-attribute strings.
//!
//! Grammar: one `marker kind` pair per comparison, in comparison order,
//! where the marker is `match:`, `mismatch:`, `miss:` (essential absence)
//! or `miss*:` (non-essential absence). No verdict token ever appears.

use serde::{Deserialize, Serialize};

use crate::annotator::CoTRecord;
use crate::corpus::vocab::{is_verdict_token, kind_token, tok};
use crate::corpus::{Kind, Outcome};
use crate::error::{Error, Result};

/// Longest possible rewrite: every kind compared once.
pub const KEY_ATTR_CAP: usize = 2 * Kind::ALL.len();

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyAttrString {
    pub tokens: Vec<u32>,
}

fn marker(outcome: Outcome) -> u32 {
    match outcome {
        Outcome::Match => tok::KEY_MATCH,
        Outcome::Mismatch => tok::KEY_MISMATCH,
        Outcome::AbsentEssential => tok::KEY_MISS,
        Outcome::AbsentNonEssential => tok::KEY_MISS_NONESSENTIAL,
    }
}

pub fn rewrite_cot(cot: &CoTRecord) -> Result<KeyAttrString> {
    let aligned = cot.comparisons.len() == cot.query_attrs.len()
        && cot
            .comparisons
            .iter()
            .zip(&cot.query_attrs)
            .all(|(c, a)| c.kind == a.attribute.kind);
    if !aligned {
        return Err(Error::Input("CoT comparisons do not line up with query attributes".into()));
    }
    if cot.tokens.iter().filter(|&&t| is_verdict_token(t)).count() != 1
        || !cot.tokens.last().is_some_and(|&t| is_verdict_token(t))
    {
        return Err(Error::Input("CoT tokens must end in exactly one verdict".into()));
    }
    let mut tokens = Vec::with_capacity(2 * cot.comparisons.len());
    for c in &cot.comparisons {
        tokens.push(marker(c.outcome));
        tokens.push(kind_token(c.kind));
    }
    if tokens.len() > KEY_ATTR_CAP {
        return Err(Error::Input(format!(
            "rewrite of {} tokens exceeds the cap of {KEY_ATTR_CAP}",
            tokens.len()
        )));
    }
    Ok(KeyAttrString { tokens })
}
