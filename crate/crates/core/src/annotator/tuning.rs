//! Supervised CoT tuning of the decoder and greedy annotation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::cot::{cot_prompt, parse_cot, parse_cot_recover, CoTRecord};
use crate::corpus::vocab::is_verdict_token;
use crate::corpus::{Product, Query, Vocab};
use crate::error::{Error, Result};
use crate::neural::{lm_loss_from, Adam, AdamConfig, DecoderModel};
use crate::rng::stream_rng;

/// One training sequence: prompt tokens followed by the CoT completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotExample {
    pub query: Query,
    pub product: Product,
    pub cot: CoTRecord,
}

impl CotExample {
    /// Full token sequence and the index of the first completion token.
    pub fn sequence(&self, max_len: usize) -> (Vec<u32>, usize) {
        let mut seq = cot_prompt(&self.query, &self.product, max_len);
        let start = seq.len();
        seq.extend_from_slice(&self.cot.tokens);
        (seq, start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CotTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Final learning rate as a fraction of the initial one (linear decay).
    pub final_lr_fraction: f64,
}

impl Default for CotTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 16,
            adam: AdamConfig::default(),
            final_lr_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotTrainReport {
    pub steps: u64,
    /// Mean completion loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean completion loss on the first batch, before and after training.
    pub batch_loss_before: f64,
    pub batch_loss_after: f64,
    /// Greedy verdict agreement with the reference CoTs on held-out pairs.
    pub heldout_verdict_accuracy: Option<f64>,
    pub heldout_decode_failures: usize,
}

fn mean_completion_loss(model: &DecoderModel, examples: &[CotExample]) -> Result<f64> {
    let max_len = model.config().max_len;
    let mut total = 0.0;
    for ex in examples {
        let (seq, start) = ex.sequence(max_len);
        total += lm_loss_from(model, &seq, start, 0.0, None)?;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Fine-tune `decoder` with the language-model loss on completion tokens.
pub fn train_cot_model(
    decoder: &DecoderModel,
    vocab: &Vocab,
    train: &[CotExample],
    heldout: &[CotExample],
    cfg: &CotTrainConfig,
    seed: u64,
) -> Result<(DecoderModel, CotTrainReport)> {
    if train.is_empty() {
        return Err(Error::Input("empty CoT training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let max_len = decoder.config().max_len;
    for ex in train {
        let (seq, _) = ex.sequence(max_len);
        if seq.len() > max_len {
            return Err(Error::Input(format!(
                "CoT sequence of {} tokens exceeds max_len {max_len}",
                seq.len()
            )));
        }
    }
    let mut model = decoder.clone();
    let probe = &train[..cfg.batch_size.min(train.len())];
    let batch_loss_before = mean_completion_loss(&model, probe)?;
    let mut adam = Adam::new(cfg.adam.clone(), model.net.params.len());
    let mut rng = stream_rng(seed, "cot-train");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch) as f64;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut grads = model.net.zero_grads();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (seq, start) = train[i].sequence(max_len);
                epoch_loss += lm_loss_from(&model, &seq, start, scale, Some(&mut grads))?;
            }
            let progress = (epoch * batches_per_epoch + b) as f64 / total_steps;
            let lr = cfg.adam.lr * (1.0 - (1.0 - cfg.final_lr_fraction) * progress);
            adam.step_with_lr(&mut model.net.params, &grads, lr)?;
        }
        let mean = epoch_loss / train.len() as f64;
        log::info!("cot epoch {epoch}: loss {mean:.4}");
        epoch_losses.push(mean);
    }
    let batch_loss_after = mean_completion_loss(&model, probe)?;
    let (heldout_verdict_accuracy, heldout_decode_failures) = if heldout.is_empty() {
        (None, 0)
    } else {
        let mut agree = 0usize;
        let mut failures = 0usize;
        for ex in heldout {
            match annotate(&model, vocab, &ex.query, &ex.product) {
                Ok(a) if a.record.verdict == ex.cot.verdict => agree += 1,
                Ok(_) => {}
                Err(_) => failures += 1,
            }
        }
        (Some(agree as f64 / heldout.len() as f64), failures)
    };
    Ok((
        model,
        CotTrainReport {
            steps: adam.steps,
            epoch_losses,
            batch_loss_before,
            batch_loss_after,
            heldout_verdict_accuracy,
            heldout_decode_failures,
        },
    ))
}

/// Greedy annotation result; `repaired` marks output that only parsed in
/// recovery mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub record: CoTRecord,
    pub repaired: bool,
}

/// Greedy CoT decoding for one pair. Fails when no verdict token appears
/// before the context is exhausted.
pub fn annotate(decoder: &DecoderModel, vocab: &Vocab, q: &Query, p: &Product) -> Result<Annotation> {
    let prompt = cot_prompt(q, p, decoder.config().max_len);
    let (out, stopped) = decoder.greedy(&prompt, is_verdict_token)?;
    if !stopped {
        return Err(Error::Decode(format!(
            "no verdict within {} tokens for pair ({}, {})",
            decoder.config().max_len,
            q.id,
            p.id
        )));
    }
    match parse_cot(vocab, &out) {
        Ok(record) => Ok(Annotation {
            record,
            repaired: false,
        }),
        Err(_) => Ok(Annotation {
            record: parse_cot_recover(vocab, &out)?,
            repaired: true,
        }),
    }
}
