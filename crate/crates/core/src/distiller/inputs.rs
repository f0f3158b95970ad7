//! Encoder input layouts. Only the teacher ever sees key-attribute tokens.

use super::keyattr::KeyAttrString;
use crate::corpus::{Product, Query};
use crate::neural::EncoderInput;

/// `[CLS] query [SEP] title [SEP] attrs`; truncation eats attrs, then the
/// title tail, before touching the query.
pub fn teacher_input(q: &Query, p: &Product, attrs: &KeyAttrString, max_len: usize) -> EncoderInput {
    EncoderInput::from_segments(&[&q.tokens, &p.title_tokens, &attrs.tokens], max_len)
}

/// `[CLS] query [SEP] title`, title cut from the tail when over-long.
pub fn student_input(q: &Query, p: &Product, max_len: usize) -> EncoderInput {
    EncoderInput::from_segments(&[&q.tokens, &p.title_tokens], max_len)
}
