//! Rule-based CoT annotator: exact attribute extraction from the rendered
//! templates, oracle comparisons, and an injectable over-strict bias.

use rand::Rng as _;

use super::cot::CoTRecord;
use crate::corpus::oracle::{judge, only_nonessential_absences};
use crate::corpus::{tok, Assertion, Attribute, Label, Product, Query, Vocab, World};
use crate::error::{Error, Result};
use crate::rng::entry_rng;

/// Query assertions in rendered (token) order, read back from the template.
pub fn extract_query(vocab: &Vocab, q: &Query) -> Vec<Assertion> {
    let mut out = Vec::with_capacity(q.assertions.len());
    let mut essential = true;
    for &t in &q.tokens {
        if t == tok::OPT {
            essential = false;
        } else if let Some(attribute) = vocab.attribute_of(t) {
            out.push(Assertion {
                attribute,
                essential,
            });
            essential = true;
        }
    }
    out
}

/// Product attributes in title order.
pub fn extract_product(vocab: &Vocab, p: &Product) -> Vec<Attribute> {
    p.title_tokens
        .iter()
        .filter_map(|&t| vocab.attribute_of(t))
        .collect()
}

/// Per-pair stream index so a pair's draw never depends on its position.
pub(crate) fn pair_index(q: &Query, p: &Product) -> u64 {
    q.id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ p.id.rotate_left(29)
}

/// Simulated annotator output for one pair. With probability `strictness`,
/// a pair whose only gaps are non-essential absences is verdicted
/// Irrelevant; otherwise the verdict is the oracle label.
pub fn render_cot(world: &World, q: &Query, p: &Product, strictness: f64, seed: u64) -> Result<CoTRecord> {
    if !(0.0..=1.0).contains(&strictness) {
        return Err(Error::Config(format!("strictness {strictness} outside [0, 1]")));
    }
    let query_attrs = extract_query(&world.vocab, q);
    let product_attrs = extract_product(&world.vocab, p);
    let ordered = Query {
        id: q.id,
        tokens: Vec::new(),
        assertions: query_attrs.clone(),
    };
    let (label, comparisons) = judge(&ordered, p);
    let mut verdict = label;
    if strictness > 0.0 && only_nonessential_absences(&comparisons) {
        let draw: f64 = entry_rng(seed, "cot-strictness", pair_index(q, p)).gen();
        if draw < strictness {
            verdict = Label::Irrelevant;
        }
    }
    Ok(CoTRecord::new(&world.vocab, query_attrs, product_attrs, comparisons, verdict))
}

/// Keep the records whose verdict equals the reference label, in order.
pub fn filter_cot_consistent(cots: &[CoTRecord], labels: &[Label]) -> Result<Vec<CoTRecord>> {
    if cots.len() != labels.len() {
        return Err(Error::Shape(format!("{} records for {} labels", cots.len(), labels.len())));
    }
    Ok(cots
        .iter()
        .zip(labels)
        .filter(|(c, &l)| c.verdict == l)
        .map(|(c, _)| c.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotator::cot::parse_cot;
    use crate::corpus::oracle::oracle_label;
    use crate::corpus::{gen_pairs, gen_world, id_base, Kind, Outcome, WorldConfig};

    fn world() -> World {
        gen_world(&WorldConfig::default(), 3).unwrap()
    }

    #[test]
    fn unbiased_mode_matches_oracle_and_round_trips() {
        let w = world();
        for pair in gen_pairs(&w, 300, 5, id_base::TRAIN).unwrap() {
            let c = render_cot(&w, &pair.query, &pair.product, 0.0, 1).unwrap();
            assert_eq!(c.verdict, oracle_label(&w, &pair.query, &pair.product).unwrap().0);
            assert_eq!(parse_cot(&w.vocab, &c.tokens).unwrap(), c);
            assert!(c.tokens.len() <= super::super::cot::MAX_COT_TOKENS);
        }
    }

    #[test]
    fn full_strictness_flips_only_nonessential_gap_pairs() {
        let w = world();
        let mut flipped = 0;
        for pair in gen_pairs(&w, 400, 6, id_base::TRAIN).unwrap() {
            let (label, reasons) = oracle_label(&w, &pair.query, &pair.product).unwrap();
            let c = render_cot(&w, &pair.query, &pair.product, 1.0, 1).unwrap();
            if only_nonessential_absences(&reasons) {
                assert_eq!(label, Label::Relevant);
                assert_eq!(c.verdict, Label::Irrelevant);
                flipped += 1;
            } else {
                assert_eq!(c.verdict, label);
            }
        }
        assert!(flipped > 0);
    }

    #[test]
    fn extraction_inverts_templates() {
        let w = world();
        let q = w.render_query(
            1,
            vec![
                Assertion {
                    attribute: Attribute::new(Kind::Category, 2),
                    essential: true,
                },
                Assertion {
                    attribute: Attribute::new(Kind::Audience, 1),
                    essential: false,
                },
            ],
        );
        let mut got = extract_query(&w.vocab, &q);
        got.sort_by_key(|a| a.attribute);
        assert_eq!(got, q.assertions);
        let p = &w.catalog[0];
        let mut attrs = extract_product(&w.vocab, p);
        attrs.sort();
        assert_eq!(attrs, p.attributes);
        let c = render_cot(&w, &q, p, 0.0, 0).unwrap();
        assert!(c
            .comparisons
            .iter()
            .all(|c| c.kind != Kind::Audience || c.outcome != Outcome::AbsentEssential));
    }

    #[test]
    fn filter_keeps_consistent_records_in_order() {
        let w = world();
        let pairs = gen_pairs(&w, 10, 8, id_base::TRAIN).unwrap();
        let cots: Vec<_> = pairs
            .iter()
            .map(|p| render_cot(&w, &p.query, &p.product, 0.0, 0).unwrap())
            .collect();
        let mut labels: Vec<_> = cots.iter().map(|c| c.verdict).collect();
        assert_eq!(filter_cot_consistent(&cots, &labels).unwrap(), cots);
        for i in [1, 4, 7] {
            labels[i] = if labels[i].is_relevant() {
                Label::Irrelevant
            } else {
                Label::Relevant
            };
        }
        let kept = filter_cot_consistent(&cots, &labels).unwrap();
        assert_eq!(kept.len(), 7);
        let expected: Vec<_> = cots
            .iter()
            .enumerate()
            .filter(|(i, _)| ![1, 4, 7].contains(i))
            .map(|(_, c)| c.clone())
            .collect();
        assert_eq!(kept, expected);
        let all_wrong: Vec<_> = cots
            .iter()
            .map(|c| {
                if c.verdict.is_relevant() {
                    Label::Irrelevant
                } else {
                    Label::Relevant
                }
            })
            .collect();
        assert!(filter_cot_consistent(&cots, &all_wrong).unwrap().is_empty());
        assert!(filter_cot_consistent(&cots, &labels[..3]).is_err());
    }
}
