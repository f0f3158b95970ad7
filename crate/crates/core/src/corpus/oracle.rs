//! Ground-truth relevance rule.
//!
//! A pair is Relevant iff every essential assertion (the category always
//! being one) is matched by an equal-valued product attribute. Unsatisfied
//! non-essential assertions never break relevance.

use serde::{Deserialize, Serialize};

use super::types::{Assertion, Kind, Label, Outcome, Product, Query};
use super::world::World;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Comparison {
    pub kind: Kind,
    pub outcome: Outcome,
}

pub fn compare(assertion: &Assertion, product: &Product) -> Outcome {
    let kind = assertion.attribute.kind;
    if product.values_of(kind).any(|v| v == assertion.attribute.value) {
        Outcome::Match
    } else if product.has_kind(kind) {
        Outcome::Mismatch
    } else if assertion.essential {
        Outcome::AbsentEssential
    } else {
        Outcome::AbsentNonEssential
    }
}

/// Oracle without integrity checks; callers guarantee `q` and `p` come from
/// a consistent world.
pub fn judge(q: &Query, p: &Product) -> (Label, Vec<Comparison>) {
    let mut relevant = true;
    let reasons = q
        .assertions
        .iter()
        .map(|a| {
            let outcome = compare(a, p);
            if a.essential && outcome != Outcome::Match {
                relevant = false;
            }
            Comparison {
                kind: a.attribute.kind,
                outcome,
            }
        })
        .collect();
    let label = if relevant {
        Label::Relevant
    } else {
        Label::Irrelevant
    };
    (label, reasons)
}

pub fn judge_label(q: &Query, p: &Product) -> Label {
    judge(q, p).0
}

/// Checked oracle: rejects queries or products that reference values outside
/// the world's tables or violate the query shape rules.
pub fn oracle_label(world: &World, q: &Query, p: &Product) -> Result<(Label, Vec<Comparison>)> {
    for a in &q.assertions {
        if !world.is_valid_attribute(a.attribute) {
            return Err(Error::Integrity(format!(
                "query {} references unknown {} value {}",
                q.id,
                a.attribute.kind.name(),
                a.attribute.value
            )));
        }
    }
    for a in &p.attributes {
        if !world.is_valid_attribute(*a) {
            return Err(Error::Integrity(format!(
                "product {} references unknown {} value {}",
                p.id,
                a.kind.name(),
                a.value
            )));
        }
    }
    let categories: Vec<_> = q
        .assertions
        .iter()
        .filter(|a| a.attribute.kind == Kind::Category)
        .collect();
    if categories.len() != 1 || !categories[0].essential {
        return Err(Error::Integrity(format!(
            "query {} must carry exactly one essential category assertion",
            q.id
        )));
    }
    Ok(judge(q, p))
}

/// True when the pair has at least one gap and every gap is a non-essential
/// absence: the pattern an over-strict annotator mislabels.
pub fn only_nonessential_absences(reasons: &[Comparison]) -> bool {
    let mut any = false;
    for r in reasons {
        match r.outcome {
            Outcome::Match => {}
            Outcome::AbsentNonEssential => any = true,
            _ => return false,
        }
    }
    any
}

pub fn has_nonessential_absence(reasons: &[Comparison]) -> bool {
    reasons
        .iter()
        .any(|r| r.outcome == Outcome::AbsentNonEssential)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::types::Attribute;
    use crate::corpus::world::{gen_world, WorldConfig};

    fn world() -> World {
        gen_world(&WorldConfig::default(), 1).unwrap()
    }

    fn assertion(kind: Kind, value: u32, essential: bool) -> Assertion {
        Assertion {
            attribute: Attribute::new(kind, value),
            essential,
        }
    }

    #[test]
    fn matching_essentials_are_relevant() {
        let w = world();
        let q = w.render_query(
            0,
            vec![
                assertion(Kind::Category, 3, true),
                assertion(Kind::Brand, 5, true),
            ],
        );
        let p = w.render_product(
            0,
            vec![Attribute::new(Kind::Category, 3), Attribute::new(Kind::Brand, 5)],
        );
        let (label, reasons) = oracle_label(&w, &q, &p).unwrap();
        assert_eq!(label, Label::Relevant);
        assert!(reasons.iter().all(|r| r.outcome == Outcome::Match));
    }

    #[test]
    fn essential_brand_mismatch_is_irrelevant() {
        let w = world();
        let q = w.render_query(
            0,
            vec![
                assertion(Kind::Category, 3, true),
                assertion(Kind::Brand, 5, true),
            ],
        );
        let p = w.render_product(
            0,
            vec![Attribute::new(Kind::Category, 3), Attribute::new(Kind::Brand, 9)],
        );
        let (label, reasons) = oracle_label(&w, &q, &p).unwrap();
        assert_eq!(label, Label::Irrelevant);
        assert_eq!(reasons[1].outcome, Outcome::Mismatch);
    }

    #[test]
    fn nonessential_absence_is_tolerated() {
        let w = world();
        let q = w.render_query(
            0,
            vec![
                assertion(Kind::Category, 3, true),
                assertion(Kind::Spec, 2, false),
            ],
        );
        let p = w.render_product(
            0,
            vec![Attribute::new(Kind::Category, 3), Attribute::new(Kind::Brand, 1)],
        );
        let (label, reasons) = oracle_label(&w, &q, &p).unwrap();
        assert_eq!(label, Label::Relevant);
        assert_eq!(reasons[1].outcome, Outcome::AbsentNonEssential);
        assert!(only_nonessential_absences(&reasons));
    }

    #[test]
    fn unknown_values_are_integrity_errors() {
        let w = world();
        let q = w.render_query(0, vec![assertion(Kind::Category, 3, true)]);
        let mut p = w.render_product(
            0,
            vec![Attribute::new(Kind::Category, 3), Attribute::new(Kind::Brand, 1)],
        );
        p.attributes[1].value = 10_000;
        assert!(matches!(oracle_label(&w, &q, &p), Err(Error::Integrity(_))));
    }
}
