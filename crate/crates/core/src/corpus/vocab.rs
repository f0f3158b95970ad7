//! Token vocabulary shared by every model in the pipeline.
//!
//! Ids below [`tok::VALUE_BASE`] are fixed structural tokens; value tokens for
//! each attribute kind follow in canonical kind order.

use serde::{Deserialize, Serialize};

use super::types::{Attribute, Kind, Label, Outcome};

pub mod tok {
    pub const PAD: u32 = 0;
    /// Out-of-vocabulary token.
    pub const UNK: u32 = 1;
    pub const CLS: u32 = 2;
    pub const SEP: u32 = 3;
    pub const BOS: u32 = 4;
    /// Marks the following query attribute as non-essential.
    pub const OPT: u32 = 5;
    pub const COT_QUERY: u32 = 6;
    pub const COT_PRODUCT: u32 = 7;
    pub const COT_COMPARE: u32 = 8;
    pub const KIND_BASE: u32 = 9;
    pub const OUTCOME_BASE: u32 = 14;
    pub const VERDICT_RELEVANT: u32 = 18;
    pub const VERDICT_IRRELEVANT: u32 = 19;
    pub const KEY_MATCH: u32 = 20;
    pub const KEY_MISMATCH: u32 = 21;
    pub const KEY_MISS: u32 = 22;
    pub const KEY_MISS_NONESSENTIAL: u32 = 23;
    pub const VALUE_BASE: u32 = 24;
}

const SPECIAL_NAMES: [&str; tok::VALUE_BASE as usize] = [
    "[PAD]",
    "[UNK]",
    "[CLS]",
    "[SEP]",
    "[BOS]",
    "opt",
    "<query>",
    "<product>",
    "<compare>",
    "k:category",
    "k:brand",
    "k:model",
    "k:audience",
    "k:spec",
    "=match",
    "=mismatch",
    "=absent",
    "=absent*",
    "=>relevant",
    "=>irrelevant",
    "match:",
    "mismatch:",
    "miss:",
    "miss*:",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    sizes: [u32; 5],
    offsets: [u32; 5],
    tokens: Vec<String>,
}

impl Vocab {
    /// Build the vocabulary for per-kind value table sizes (canonical kind order).
    pub fn new(sizes: [u32; 5]) -> Self {
        let mut offsets = [0u32; 5];
        let mut tokens: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        let mut next = tok::VALUE_BASE;
        for kind in Kind::ALL {
            offsets[kind.index()] = next;
            for v in 0..sizes[kind.index()] {
                tokens.push(format!("{}_{}", kind.prefix(), v));
            }
            next += sizes[kind.index()];
        }
        Self {
            sizes,
            offsets,
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn size_of(&self, kind: Kind) -> u32 {
        self.sizes[kind.index()]
    }

    pub fn value_token(&self, attr: Attribute) -> u32 {
        debug_assert!(attr.value < self.sizes[attr.kind.index()]);
        self.offsets[attr.kind.index()] + attr.value
    }

    pub fn attribute_of(&self, token: u32) -> Option<Attribute> {
        Kind::ALL.iter().find_map(|&kind| {
            let off = self.offsets[kind.index()];
            (token >= off && token < off + self.sizes[kind.index()])
                .then(|| Attribute::new(kind, token - off))
        })
    }

    pub fn name(&self, token: u32) -> &str {
        self.tokens
            .get(token as usize)
            .map(String::as_str)
            .unwrap_or("[UNK]")
    }

    pub fn lookup(&self, name: &str) -> u32 {
        self.tokens
            .iter()
            .position(|t| t == name)
            .map(|i| i as u32)
            .unwrap_or(tok::UNK)
    }

    pub fn render(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .map(|&t| self.name(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn kind_token(kind: Kind) -> u32 {
    tok::KIND_BASE + kind.index() as u32
}

pub fn kind_of_token(token: u32) -> Option<Kind> {
    (tok::KIND_BASE..tok::KIND_BASE + 5)
        .contains(&token)
        .then(|| Kind::ALL[(token - tok::KIND_BASE) as usize])
}

pub fn outcome_token(outcome: Outcome) -> u32 {
    tok::OUTCOME_BASE
        + match outcome {
            Outcome::Match => 0,
            Outcome::Mismatch => 1,
            Outcome::AbsentEssential => 2,
            Outcome::AbsentNonEssential => 3,
        }
}

pub fn outcome_of_token(token: u32) -> Option<Outcome> {
    match token.checked_sub(tok::OUTCOME_BASE)? {
        0 => Some(Outcome::Match),
        1 => Some(Outcome::Mismatch),
        2 => Some(Outcome::AbsentEssential),
        3 => Some(Outcome::AbsentNonEssential),
        _ => None,
    }
}

pub fn verdict_token(label: Label) -> u32 {
    match label {
        Label::Relevant => tok::VERDICT_RELEVANT,
        Label::Irrelevant => tok::VERDICT_IRRELEVANT,
    }
}

pub fn verdict_of_token(token: u32) -> Option<Label> {
    match token {
        tok::VERDICT_RELEVANT => Some(Label::Relevant),
        tok::VERDICT_IRRELEVANT => Some(Label::Irrelevant),
        _ => None,
    }
}

pub fn is_verdict_token(token: u32) -> bool {
    verdict_of_token(token).is_some()
}

pub fn is_key_marker(token: u32) -> bool {
    (tok::KEY_MATCH..=tok::KEY_MISS_NONESSENTIAL).contains(&token)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_tokens_round_trip() {
        let v = Vocab::new([3, 4, 2, 1, 5]);
        assert_eq!(v.len(), tok::VALUE_BASE as usize + 15);
        for kind in Kind::ALL {
            for value in 0..v.size_of(kind) {
                let a = Attribute::new(kind, value);
                let t = v.value_token(a);
                assert_eq!(v.attribute_of(t), Some(a));
                assert_eq!(v.lookup(v.name(t)), t);
            }
        }
        assert_eq!(v.attribute_of(tok::SEP), None);
        assert_eq!(v.name(9999), "[UNK]");
    }

    #[test]
    fn structural_token_maps_are_inverse() {
        for kind in Kind::ALL {
            assert_eq!(kind_of_token(kind_token(kind)), Some(kind));
        }
        for o in [
            Outcome::Match,
            Outcome::Mismatch,
            Outcome::AbsentEssential,
            Outcome::AbsentNonEssential,
        ] {
            assert_eq!(outcome_of_token(outcome_token(o)), Some(o));
        }
        assert_eq!(outcome_of_token(tok::VERDICT_RELEVANT), None);
        assert_eq!(verdict_of_token(verdict_token(Label::Irrelevant)), Some(Label::Irrelevant));
    }
}
