//! Bidirectional cross-encoder with a [CLS] classification head.

use super::config::{ModelConfig, N_CLASSES};
use super::loss::softmax_backward;
use super::ops::softmax_in_place;
use super::transformer::{Trace, Transformer};
use crate::corpus::tok;
use crate::corpus::Label;
use crate::error::{Error, Result};

/// Token ids plus segment ids for one encoder input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderInput {
    pub tokens: Vec<u32>,
    pub segments: Vec<u8>,
}

impl EncoderInput {
    /// Lay out `[CLS] s0 [SEP] s1 [SEP] s2 ...`. Each separator belongs to
    /// the segment it closes. Over-length inputs lose tokens from the tail of
    /// the last segment first, then from earlier segments.
    pub fn from_segments(parts: &[&[u32]], max_len: usize) -> Self {
        let mut lens: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        let total = 1 + lens.iter().sum::<usize>() + parts.len().saturating_sub(1);
        let mut excess = total.saturating_sub(max_len);
        for l in lens.iter_mut().rev() {
            let cut = excess.min(*l);
            *l -= cut;
            excess -= cut;
        }
        let mut tokens = vec![tok::CLS];
        let mut segments = vec![0u8];
        for (i, (part, &len)) in parts.iter().zip(&lens).enumerate() {
            let seg = i.min(2) as u8;
            if i > 0 {
                tokens.push(tok::SEP);
                segments.push(seg - 1);
            }
            tokens.extend_from_slice(&part[..len]);
            segments.extend(std::iter::repeat(seg).take(len));
        }
        let mut input = Self { tokens, segments };
        input.truncate(max_len);
        input
    }

    pub fn truncate(&mut self, max_len: usize) {
        self.tokens.truncate(max_len);
        self.segments.truncate(max_len);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub net: Transformer,
}

/// Forward result: the [CLS] vector, class probabilities, and the cached trace.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub trace: Trace,
    pub cls: Vec<f64>,
    pub probs: Vec<f64>,
}

impl EncoderTrace {
    pub fn label(&self) -> Label {
        Label::from_class_index(usize::from(self.probs[1] > self.probs[0]))
    }
}

impl EncoderModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.causal {
            return Err(Error::Config("encoder config must not be causal".into()));
        }
        Ok(Self {
            net: Transformer::init(config, seed)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn hidden_dim(&self) -> usize {
        self.net.config.hidden_dim
    }

    /// Run the encoder. Inputs longer than `max_len` are cut from the tail.
    pub fn encode(&self, input: &EncoderInput) -> Result<EncoderTrace> {
        let max_len = self.net.config.max_len;
        let trace = if input.len() > max_len {
            let mut cut = input.clone();
            cut.truncate(max_len);
            self.net.forward(&cut.tokens, &cut.segments)?
        } else {
            self.net.forward(&input.tokens, &input.segments)?
        };
        let h = self.hidden_dim();
        let cls = trace.hidden[..h].to_vec();
        let mut probs = trace.logits[..N_CLASSES].to_vec();
        softmax_in_place(&mut probs);
        Ok(EncoderTrace { trace, cls, probs })
    }

    pub fn predict(&self, input: &EncoderInput) -> Result<Label> {
        Ok(self.encode(input)?.label())
    }

    /// Accumulate parameter gradients given `dL/dŷ` and optionally `dL/dh`.
    pub fn backward(
        &self,
        out: &EncoderTrace,
        d_probs: &[f64],
        d_cls: Option<&[f64]>,
        grads: &mut [f64],
    ) -> Result<()> {
        if d_probs.len() != N_CLASSES {
            return Err(Error::Shape("class gradient must have two entries".into()));
        }
        if let Some(d) = d_cls {
            if d.len() != self.hidden_dim() {
                return Err(Error::Shape(format!(
                    "cls gradient has {} entries, hidden_dim is {}",
                    d.len(),
                    self.hidden_dim()
                )));
            }
        }
        let d_logits = softmax_backward(&out.probs, d_probs);
        self.net.backward(&out.trace, &d_logits, d_cls, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderModel {
        EncoderModel::init(
            ModelConfig {
                vocab_size: 40,
                max_len: 12,
                hidden_dim: 8,
                n_layers: 2,
                n_heads: 2,
                ffn_dim: 16,
                causal: false,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = tiny();
        let input = EncoderInput::from_segments(&[&[30, 31], &[32, 33, 34]], 12);
        let out = m.encode(&input).unwrap();
        assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(out.cls.len(), 8);
    }

    #[test]
    fn product_order_matters() {
        let m = tiny();
        let a = m.encode(&EncoderInput::from_segments(&[&[30], &[32, 33, 34]], 12)).unwrap();
        let b = m.encode(&EncoderInput::from_segments(&[&[30], &[34, 32, 33]], 12)).unwrap();
        assert_ne!(a.probs, b.probs);
        assert_ne!(a.cls, b.cls);
    }

    #[test]
    fn over_length_is_truncated() {
        let m = tiny();
        let long: Vec<u32> = (24..39).collect();
        let mut raw = EncoderInput::from_segments(&[&[30], &long], 100);
        assert!(raw.len() > 12);
        let out = m.encode(&raw).unwrap();
        assert_eq!(out.trace.len(), 12);
        raw.truncate(12);
        let direct = m.encode(&raw).unwrap();
        assert_eq!(out.probs, direct.probs);
    }

    #[test]
    fn layout_and_segments() {
        let x = EncoderInput::from_segments(&[&[30, 31], &[32], &[]], 20);
        assert_eq!(x.tokens, vec![tok::CLS, 30, 31, tok::SEP, 32, tok::SEP]);
        assert_eq!(x.segments, vec![0, 0, 0, 0, 1, 1]);
        let y = EncoderInput::from_segments(&[&[30, 31], &[32, 33, 34, 35]], 6);
        assert_eq!(y.tokens, vec![tok::CLS, 30, 31, tok::SEP, 32, 33]);
    }

    #[test]
    fn out_of_range_token_is_error() {
        let m = tiny();
        let x = EncoderInput::from_segments(&[&[30], &[99]], 12);
        assert!(matches!(m.encode(&x), Err(Error::Input(_))));
    }

    #[test]
    fn causal_config_rejected() {
        let mut cfg = tiny().net.config;
        cfg.causal = true;
        assert!(EncoderModel::init(cfg, 1).is_err());
    }
}
