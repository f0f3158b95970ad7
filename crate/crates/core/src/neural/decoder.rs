//! Causal decoder with a token head: `P(w_i | w_<i)`.

use super::config::ModelConfig;
use super::ops::log_softmax;
use super::transformer::{DecodeState, Trace, Transformer};
use crate::corpus::tok;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DecoderModel {
    pub net: Transformer,
}

/// Forward result over an input sequence; `logprobs` is `T × V`.
#[derive(Debug, Clone)]
pub struct DecoderTrace {
    pub trace: Trace,
    pub logprobs: Vec<f64>,
    /// Tokens scored at each position (`input[t + 1]`, then the final target).
    pub targets: Vec<u32>,
}

impl DecoderTrace {
    /// `log P(target_t | prefix)` for every position.
    pub fn target_logprobs(&self) -> Vec<f64> {
        let v = self.logprobs.len() / self.targets.len();
        self.targets
            .iter()
            .enumerate()
            .map(|(t, &y)| self.logprobs[t * v + y as usize])
            .collect()
    }
}

/// Section of a token given the section of the token before it: section
/// markers open a new section (and belong to it), everything else inherits.
pub fn next_section(prev: u8, token: u32) -> u8 {
    match token {
        tok::COT_QUERY => 1,
        tok::COT_PRODUCT => 2,
        tok::COT_COMPARE => 3,
        _ => prev,
    }
}

/// Section ids for a whole input sequence.
pub fn sections(tokens: &[u32]) -> Vec<u8> {
    let mut s = 0;
    tokens
        .iter()
        .map(|&t| {
            s = next_section(s, t);
            s
        })
        .collect()
}

impl DecoderModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        if !config.causal {
            return Err(Error::Config("decoder config must be causal".into()));
        }
        Ok(Self {
            net: Transformer::init(config, seed)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    /// Score `tokens` autoregressively: the model reads `[BOS] w_1 .. w_{N-1}`
    /// and predicts `w_1 .. w_N`.
    pub fn score(&self, tokens: &[u32]) -> Result<DecoderTrace> {
        if tokens.is_empty() {
            return Err(Error::Input("cannot score an empty sequence".into()));
        }
        let mut input = Vec::with_capacity(tokens.len());
        input.push(tok::BOS);
        input.extend_from_slice(&tokens[..tokens.len() - 1]);
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.net.config.vocab_size) {
            return Err(Error::Input(format!("token id {t} out of range")));
        }
        let trace = self.net.forward(&input, &sections(&input))?;
        let v = self.net.config.vocab_size;
        let mut logprobs = vec![0.0; trace.logits.len()];
        for (row, out) in trace.logits.chunks(v).zip(logprobs.chunks_mut(v)) {
            log_softmax(row, out);
        }
        Ok(DecoderTrace {
            trace,
            logprobs,
            targets: tokens.to_vec(),
        })
    }

    /// Accumulate the gradient of `Σ_t weights[t] · log P(target_t | prefix)`.
    pub fn backward_logprob(&self, out: &DecoderTrace, weights: &[f64], grads: &mut [f64]) -> Result<()> {
        if weights.len() != out.targets.len() {
            return Err(Error::Shape(format!(
                "{} weights for {} targets",
                weights.len(),
                out.targets.len()
            )));
        }
        let v = self.net.config.vocab_size;
        let mut d_logits = vec![0.0; out.logprobs.len()];
        for (t, (&w, &y)) in weights.iter().zip(&out.targets).enumerate() {
            if w == 0.0 {
                continue;
            }
            let lp = &out.logprobs[t * v..(t + 1) * v];
            let d = &mut d_logits[t * v..(t + 1) * v];
            for (di, &l) in d.iter_mut().zip(lp) {
                *di = -w * l.exp();
            }
            d[y as usize] += w;
        }
        self.net.backward(&out.trace, &d_logits, None, grads)
    }

    pub fn start(&self) -> DecodeState {
        self.net.start_decode()
    }

    /// Feed one token; returns next-token log-probabilities.
    pub fn step(&self, state: &mut DecodeState, token: u32) -> Result<Vec<f64>> {
        let segment = next_section(state.segment, token);
        let logits = self.net.decode_step(state, token, segment)?;
        state.segment = segment;
        let mut lp = vec![0.0; logits.len()];
        log_softmax(&logits, &mut lp);
        Ok(lp)
    }

    /// Greedy continuation of `prompt` (which must not include BOS). Stops
    /// after emitting a token for which `stop` holds, or when the context is
    /// full; returns the generated tokens and whether `stop` fired.
    pub fn greedy(&self, prompt: &[u32], stop: impl Fn(u32) -> bool) -> Result<(Vec<u32>, bool)> {
        let max_len = self.net.config.max_len;
        if prompt.len() + 1 > max_len {
            return Err(Error::Input("prompt does not fit in the context".into()));
        }
        let mut state = self.start();
        let mut lp = self.step(&mut state, tok::BOS)?;
        for &t in prompt {
            lp = self.step(&mut state, t)?;
        }
        let mut out = Vec::new();
        loop {
            let next = argmax(&lp) as u32;
            out.push(next);
            if stop(next) {
                return Ok((out, true));
            }
            if state.len >= max_len {
                return Ok((out, false));
            }
            lp = self.step(&mut state, next)?;
        }
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean negative log-likelihood `-(1/N) Σ log P(w_i | w_<i)` over targets at
/// positions `first_target..`; accumulates `scale ×` its gradient when
/// `grads` is given.
pub fn lm_loss_from(
    model: &DecoderModel,
    tokens: &[u32],
    first_target: usize,
    scale: f64,
    grads: Option<&mut [f64]>,
) -> Result<f64> {
    if first_target >= tokens.len() {
        return Err(Error::Input("no target positions to score".into()));
    }
    let out = model.score(tokens)?;
    let n = (tokens.len() - first_target) as f64;
    let lps = out.target_logprobs();
    let loss = -lps[first_target..].iter().sum::<f64>() / n;
    if let Some(g) = grads {
        let w = -scale / n;
        let weights: Vec<f64> = (0..tokens.len())
            .map(|t| if t >= first_target { w } else { 0.0 })
            .collect();
        model.backward_logprob(&out, &weights, g)?;
    }
    Ok(loss)
}

/// Standard language-model loss over the whole sequence.
pub fn lm_loss(model: &DecoderModel, tokens: &[u32], grads: Option<&mut [f64]>) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::Input("language-model loss of an empty sequence".into()));
    }
    lm_loss_from(model, tokens, 0, 1.0, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(vocab: usize) -> DecoderModel {
        DecoderModel::init(
            ModelConfig {
                vocab_size: vocab,
                max_len: 16,
                hidden_dim: 8,
                n_layers: 2,
                n_heads: 2,
                ffn_dim: 16,
                causal: true,
            },
            11,
        )
        .unwrap()
    }

    #[test]
    fn uniform_head_gives_ln_vocab() {
        let mut m = tiny(8);
        let ranges = [m.net.head_weight_range(), m.net.head_bias_range()];
        for r in ranges {
            m.net.params[r].fill(0.0);
        }
        let loss = lm_loss(&m, &[5, 6, 7, 5, 6], None).unwrap();
        assert!((loss - 8f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn certain_head_gives_zero_loss() {
        let mut m = tiny(8);
        let w = m.net.head_weight_range();
        m.net.params[w].fill(0.0);
        let b = m.net.head_bias_range();
        m.net.params[b.start + 6] = 1000.0;
        assert_eq!(lm_loss(&m, &[6, 6, 6], None).unwrap(), 0.0);
    }

    #[test]
    fn empty_sequence_is_error() {
        assert!(lm_loss(&tiny(8), &[], None).is_err());
    }

    #[test]
    fn distributions_sum_to_one() {
        let m = tiny(9);
        let out = m.score(&[5, 6, 7]).unwrap();
        for row in out.logprobs.chunks(9) {
            let s: f64 = row.iter().map(|l| l.exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn causal_mask_blocks_future_tokens() {
        let m = tiny(12);
        let a = m.score(&[5, 6, 7, 8, 9]).unwrap();
        let b = m.score(&[5, 6, 11, 8, 9]).unwrap();
        // Changing token 2 leaves the distributions for targets 0..=2 untouched.
        assert_eq!(a.logprobs[..3 * 12], b.logprobs[..3 * 12]);
        assert_ne!(a.logprobs[3 * 12..4 * 12], b.logprobs[3 * 12..4 * 12]);
    }

    #[test]
    fn incremental_decoding_matches_full_forward() {
        let m = tiny(12);
        // Crosses every section boundary.
        let seq = [5u32, tok::COT_QUERY, 6, tok::COT_PRODUCT, 7, tok::COT_COMPARE, 8];
        let full = m.score(&seq).unwrap();
        let mut st = m.start();
        let mut prev = tok::BOS;
        for (t, &y) in seq.iter().enumerate() {
            let lp = m.step(&mut st, prev).unwrap();
            assert!((lp[y as usize] - full.target_logprobs()[t]).abs() < 1e-12);
            prev = y;
        }
    }

    #[test]
    fn sections_follow_markers() {
        let seq = [5, tok::COT_QUERY, 6, tok::COT_PRODUCT, 7, 7, tok::COT_COMPARE, 8];
        assert_eq!(sections(&seq), vec![0, 1, 1, 2, 2, 2, 3, 3]);
    }

    #[test]
    fn greedy_is_deterministic() {
        let m = tiny(12);
        let a = m.greedy(&[5, 6], |t| t == 9).unwrap();
        let b = m.greedy(&[5, 6], |t| t == 9).unwrap();
        assert_eq!(a, b);
    }
}
