//! Structured chain-of-thought records and their token grammar.
//!
//! ```text
//! <query> [opt] v_1 ... <product> v_1 ... <compare> v =outcome ... =>verdict
//! ```
//! Query attributes keep the query's rendered order and carry an `opt`
//! prefix when non-essential; product attributes follow the title. Each
//! comparison repeats the query value it judges (or the bare kind token when
//! the query has no value of that kind), so the outcome depends only on the
//! preceding token. Exactly one verdict token, last.

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{
    kind_of_token, kind_token, outcome_of_token, outcome_token, tok, verdict_of_token, verdict_token,
};
use crate::corpus::{Assertion, Attribute, Comparison, Label, Product, Query, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoTRecord {
    pub query_attrs: Vec<Assertion>,
    pub product_attrs: Vec<Attribute>,
    pub comparisons: Vec<Comparison>,
    pub verdict: Label,
    pub tokens: Vec<u32>,
}

impl CoTRecord {
    pub fn new(
        vocab: &Vocab,
        query_attrs: Vec<Assertion>,
        product_attrs: Vec<Attribute>,
        comparisons: Vec<Comparison>,
        verdict: Label,
    ) -> Self {
        let tokens = render_tokens(vocab, &query_attrs, &product_attrs, &comparisons, verdict);
        Self {
            query_attrs,
            product_attrs,
            comparisons,
            verdict,
            tokens,
        }
    }

    /// Same reasoning, different verdict.
    pub fn with_verdict(&self, vocab: &Vocab, verdict: Label) -> Self {
        Self::new(
            vocab,
            self.query_attrs.clone(),
            self.product_attrs.clone(),
            self.comparisons.clone(),
            verdict,
        )
    }
}

fn render_tokens(
    vocab: &Vocab,
    query_attrs: &[Assertion],
    product_attrs: &[Attribute],
    comparisons: &[Comparison],
    verdict: Label,
) -> Vec<u32> {
    let mut t = Vec::with_capacity(4 + query_attrs.len() * 4 + product_attrs.len());
    t.push(tok::COT_QUERY);
    for a in query_attrs {
        if !a.essential {
            t.push(tok::OPT);
        }
        t.push(vocab.value_token(a.attribute));
    }
    t.push(tok::COT_PRODUCT);
    t.extend(product_attrs.iter().map(|&a| vocab.value_token(a)));
    t.push(tok::COT_COMPARE);
    for c in comparisons {
        let subject = query_attrs
            .iter()
            .find(|a| a.attribute.kind == c.kind)
            .map_or(kind_token(c.kind), |a| vocab.value_token(a.attribute));
        t.push(subject);
        t.push(outcome_token(c.outcome));
    }
    t.push(verdict_token(verdict));
    t
}

/// Upper bound on CoT length for the default world shapes (4 query
/// assertions, 6 product attributes).
pub const MAX_COT_TOKENS: usize = 24;

/// Decoder prompt for a pair: `query [SEP] title [SEP]`, with the title cut
/// from the tail so that the prompt plus a full CoT fits in `max_len`
/// (one slot is taken by BOS).
pub fn cot_prompt(q: &Query, p: &Product, max_len: usize) -> Vec<u32> {
    let budget = max_len.saturating_sub(1 + MAX_COT_TOKENS);
    let mut prompt = q.tokens.clone();
    prompt.push(tok::SEP);
    let room = budget.saturating_sub(prompt.len() + 1);
    prompt.extend(p.title_tokens.iter().take(room));
    prompt.push(tok::SEP);
    prompt
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Start,
    Query,
    Product,
    Compare,
}

/// Strict parser: accepts exactly the rendered grammar.
pub fn parse_cot(vocab: &Vocab, tokens: &[u32]) -> Result<CoTRecord> {
    let rec = parse_lenient(vocab, tokens, true)?;
    if rec.tokens != tokens {
        return Err(Error::Input("token sequence is not in canonical CoT form".into()));
    }
    Ok(rec)
}

/// Recovery parser: cuts at the first verdict token and skips tokens that
/// do not fit the section they appear in. Fails only without a verdict.
pub fn parse_cot_recover(vocab: &Vocab, tokens: &[u32]) -> Result<CoTRecord> {
    parse_lenient(vocab, tokens, false)
}

fn parse_lenient(vocab: &Vocab, tokens: &[u32], strict: bool) -> Result<CoTRecord> {
    let malformed = |msg: &str| Error::Input(format!("malformed CoT: {msg}"));
    let end = tokens
        .iter()
        .position(|&t| verdict_of_token(t).is_some())
        .ok_or_else(|| malformed("no verdict token"))?;
    if strict && end + 1 != tokens.len() {
        return Err(malformed("tokens after the verdict"));
    }
    let verdict = verdict_of_token(tokens[end]).expect("verdict token");
    let mut section = Section::Start;
    let mut query_attrs = Vec::new();
    let mut product_attrs = Vec::new();
    let mut comparisons = Vec::new();
    let mut pending_opt = false;
    let mut pending_kind = None;
    for &t in &tokens[..end] {
        match t {
            tok::COT_QUERY => section = Section::Query,
            tok::COT_PRODUCT => section = Section::Product,
            tok::COT_COMPARE => section = Section::Compare,
            _ => match section {
                Section::Query if t == tok::OPT => pending_opt = true,
                Section::Query => match vocab.attribute_of(t) {
                    Some(attribute) => {
                        query_attrs.push(Assertion {
                            attribute,
                            essential: !pending_opt,
                        });
                        pending_opt = false;
                    }
                    None if strict => return Err(malformed("unexpected token in query section")),
                    None => {}
                },
                Section::Product => match vocab.attribute_of(t) {
                    Some(a) => product_attrs.push(a),
                    None if strict => return Err(malformed("unexpected token in product section")),
                    None => {}
                },
                Section::Compare => {
                    if let Some(kind) = kind_of_token(t) {
                        pending_kind = Some(kind);
                    } else if let Some(a) = vocab.attribute_of(t) {
                        pending_kind = Some(a.kind);
                    } else if let (Some(outcome), Some(kind)) = (outcome_of_token(t), pending_kind) {
                        comparisons.push(Comparison { kind, outcome });
                        pending_kind = None;
                    } else if strict {
                        return Err(malformed("unexpected token in compare section"));
                    }
                }
                Section::Start if strict => return Err(malformed("tokens before the query section")),
                Section::Start => {}
            },
        }
    }
    Ok(CoTRecord::new(vocab, query_attrs, product_attrs, comparisons, verdict))
}
