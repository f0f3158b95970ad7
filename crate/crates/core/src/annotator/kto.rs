//! Preference alignment of the CoT decoder with the KTO objective.
//!
//! `r = Σ log π(y|x) − log π_ref(y|x)` over completion tokens;
//! `z0 = max(0, mean r)` over a reference batch, held constant;
//! `v = λ_D σ(β(r − z0))` for desirable and `λ_U σ(β(z0 − r))` for
//! undesirable completions; loss `= mean(λ_y − v)`.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::cot::cot_prompt;
use super::simulator::render_cot;
use super::tuning::annotate;
use crate::corpus::{Label, Product, PurchaseLog, Query, Vocab, World};
use crate::error::{Error, Result};
use crate::neural::ops::sigmoid;
use crate::neural::{Adam, AdamConfig, DecoderModel};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub query: Query,
    pub product: Product,
    pub completion: Vec<u32>,
    pub desirable: bool,
}

impl PreferenceExample {
    fn sequence(&self, max_len: usize) -> (Vec<u32>, usize) {
        let mut seq = cot_prompt(&self.query, &self.product, max_len);
        let start = seq.len();
        seq.extend_from_slice(&self.completion);
        (seq, start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KtoConfig {
    pub beta: f64,
    pub lambda_d: f64,
    pub lambda_u: f64,
    pub ref_batch: usize,
    /// Score only the verdict token instead of the whole completion.
    pub verdict_only: bool,
}

impl Default for KtoConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            lambda_d: 1.0,
            lambda_u: 1.0,
            ref_batch: 32,
            verdict_only: false,
        }
    }
}

impl KtoConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.beta, self.lambda_d, self.lambda_u];
        if positive.iter().any(|&x| !(x > 0.0 && x.is_finite())) || self.ref_batch == 0 {
            return Err(Error::Config(
                "kto beta, lambda_d, lambda_u and ref_batch must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KtoTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for KtoTrainConfig {
    fn default() -> Self {
        Self {
            // The strict and fair completions differ in one token, so long
            // or large-step runs overshoot into a global "say Relevant"
            // shift. Small steps keep the drift gradual enough for
            // checkpoint selection to stop in time.
            steps: 40,
            batch_size: 16,
            adam: AdamConfig {
                lr: 5e-5,
                ..AdamConfig::default()
            },
        }
    }
}

/// Preference pairs from purchases the decoder wrongly verdicts Irrelevant:
/// its own output is the undesirable completion, an unbiased simulator CoT
/// the desirable one.
pub fn build_preference_set(
    decoder: &DecoderModel,
    purchases: &PurchaseLog,
    world: &World,
    seed: u64,
) -> Result<Vec<PreferenceExample>> {
    let mut out = Vec::new();
    for e in purchases.purchased() {
        let got = match annotate(decoder, &world.vocab, &e.query, &e.product) {
            Ok(a) => a.record,
            Err(Error::Decode(msg)) => {
                log::warn!("skipping undecodable purchase: {msg}");
                continue;
            }
            Err(err) => return Err(err),
        };
        if got.verdict != Label::Irrelevant {
            continue;
        }
        let winner = render_cot(world, &e.query, &e.product, 0.0, seed)?;
        if winner.verdict != Label::Relevant {
            // Purchased but not oracle-Relevant: no valid winner exists.
            continue;
        }
        out.push(PreferenceExample {
            query: e.query.clone(),
            product: e.product.clone(),
            completion: got.tokens,
            desirable: false,
        });
        out.push(PreferenceExample {
            query: e.query.clone(),
            product: e.product.clone(),
            completion: winner.tokens,
            desirable: true,
        });
    }
    Ok(out)
}

/// Loss and `∂loss/∂r_i` from per-example rewards.
pub fn kto_objective(rewards: &[f64], desirable: &[bool], z0: f64, cfg: &KtoConfig) -> (f64, Vec<f64>) {
    let n = rewards.len() as f64;
    let mut loss = 0.0;
    let mut d_r = Vec::with_capacity(rewards.len());
    for (&r, &good) in rewards.iter().zip(desirable) {
        if good {
            let s = sigmoid(cfg.beta * (r - z0));
            loss += cfg.lambda_d * (1.0 - s);
            d_r.push(-cfg.lambda_d * cfg.beta * s * (1.0 - s) / n);
        } else {
            let s = sigmoid(cfg.beta * (z0 - r));
            loss += cfg.lambda_u * (1.0 - s);
            d_r.push(cfg.lambda_u * cfg.beta * s * (1.0 - s) / n);
        }
    }
    (loss / n, d_r)
}

fn completion_weights(len: usize, start: usize, verdict_only: bool) -> Vec<f64> {
    (0..len)
        .map(|t| {
            let scored = if verdict_only { t + 1 == len } else { t >= start };
            if scored {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// `log π(y|x)` summed over the scored completion positions.
fn completion_logprob(model: &DecoderModel, ex: &PreferenceExample, verdict_only: bool) -> Result<f64> {
    let (seq, start) = ex.sequence(model.config().max_len);
    let lps = model.score(&seq)?.target_logprobs();
    let w = completion_weights(seq.len(), start, verdict_only);
    Ok(lps.iter().zip(&w).map(|(l, w)| l * w).sum())
}

/// Accumulate `scale · ∂log π(y|x)/∂θ` and return `log π(y|x)`.
fn completion_logprob_grad(
    model: &DecoderModel,
    ex: &PreferenceExample,
    verdict_only: bool,
    scale: f64,
    grads: &mut [f64],
) -> Result<f64> {
    let (seq, start) = ex.sequence(model.config().max_len);
    let out = model.score(&seq)?;
    let w = completion_weights(seq.len(), start, verdict_only);
    let lp = out.target_logprobs().iter().zip(&w).map(|(l, w)| l * w).sum();
    let scaled: Vec<f64> = w.iter().map(|w| w * scale).collect();
    model.backward_logprob(&out, &scaled, grads)?;
    Ok(lp)
}

fn check_pair(policy: &DecoderModel, reference: &DecoderModel) -> Result<()> {
    if policy.config() != reference.config() {
        return Err(Error::Config("policy and reference configs differ".into()));
    }
    Ok(())
}

/// `max(0, mean r)` over `ref_batch`, without gradient.
pub fn estimate_z0(
    policy: &DecoderModel,
    reference: &DecoderModel,
    ref_batch: &[PreferenceExample],
    cfg: &KtoConfig,
) -> Result<f64> {
    check_pair(policy, reference)?;
    if ref_batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ex in ref_batch {
        total += completion_logprob(policy, ex, cfg.verdict_only)?
            - completion_logprob(reference, ex, cfg.verdict_only)?;
    }
    Ok((total / ref_batch.len() as f64).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KtoLoss {
    pub loss: f64,
    pub z0: f64,
    pub rewards: Vec<f64>,
}

/// KTO loss with `z0` estimated from `ref_batch`. Gradient (w.r.t. the
/// policy only) is accumulated into `grads` when given.
pub fn kto_loss(
    policy: &DecoderModel,
    reference: &DecoderModel,
    batch: &[PreferenceExample],
    ref_batch: &[PreferenceExample],
    cfg: &KtoConfig,
    grads: Option<&mut [f64]>,
) -> Result<KtoLoss> {
    let z0 = estimate_z0(policy, reference, ref_batch, cfg)?;
    kto_loss_with_z0(policy, reference, batch, z0, cfg, grads)
}

/// KTO loss for a given constant `z0`.
pub fn kto_loss_with_z0(
    policy: &DecoderModel,
    reference: &DecoderModel,
    batch: &[PreferenceExample],
    z0: f64,
    cfg: &KtoConfig,
    grads: Option<&mut [f64]>,
) -> Result<KtoLoss> {
    let ref_lps = batch
        .iter()
        .map(|ex| completion_logprob(reference, ex, cfg.verdict_only))
        .collect::<Result<Vec<_>>>()?;
    kto_loss_cached(policy, batch, &ref_lps, z0, cfg, grads)
}

fn kto_loss_cached(
    policy: &DecoderModel,
    batch: &[PreferenceExample],
    ref_lps: &[f64],
    z0: f64,
    cfg: &KtoConfig,
    grads: Option<&mut [f64]>,
) -> Result<KtoLoss> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Input("empty KTO batch".into()));
    }
    let rewards = batch
        .iter()
        .zip(ref_lps)
        .map(|(ex, r)| Ok(completion_logprob(policy, ex, cfg.verdict_only)? - r))
        .collect::<Result<Vec<_>>>()?;
    let desirable: Vec<bool> = batch.iter().map(|e| e.desirable).collect();
    let (loss, d_r) = kto_objective(&rewards, &desirable, z0, cfg);
    if let Some(g) = grads {
        for (ex, &d) in batch.iter().zip(&d_r) {
            completion_logprob_grad(policy, ex, cfg.verdict_only, d, g)?;
        }
    }
    Ok(KtoLoss { loss, z0, rewards })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignReport {
    pub steps: u64,
    /// Step of the returned checkpoint (equals `steps` without selection).
    pub selected_step: u64,
    pub n_prefs: usize,
    pub losses: Vec<f64>,
    pub mean_r_desirable_before: f64,
    pub mean_r_desirable_after: f64,
    pub mean_r_undesirable_before: f64,
    pub mean_r_undesirable_after: f64,
}

fn mean_rewards(
    policy: &DecoderModel,
    prefs: &[PreferenceExample],
    ref_lps: &[f64],
    verdict_only: bool,
) -> Result<(f64, f64)> {
    let (mut sd, mut nd, mut su, mut nu) = (0.0, 0usize, 0.0, 0usize);
    for (ex, r) in prefs.iter().zip(ref_lps) {
        let reward = completion_logprob(policy, ex, verdict_only)? - r;
        if ex.desirable {
            sd += reward;
            nd += 1;
        } else {
            su += reward;
            nu += 1;
        }
    }
    Ok((sd / nd.max(1) as f64, su / nu.max(1) as f64))
}

/// Checkpoint selection for [`align_kto_selected`]. Every `every` steps the
/// policy is scored (higher is better); `None` marks it unacceptable and
/// ends training. The best-scoring checkpoint wins, the earliest on ties;
/// the starting policy is a candidate too.
pub struct Selector<'a> {
    pub every: usize,
    pub score: Box<dyn FnMut(&DecoderModel) -> Result<Option<f64>> + 'a>,
}

/// Align a frozen copy of `decoder` to the preference set.
pub fn align_kto(
    decoder: &DecoderModel,
    prefs: &[PreferenceExample],
    cfg: &KtoConfig,
    hyper: &KtoTrainConfig,
    seed: u64,
) -> Result<(DecoderModel, AlignReport)> {
    align_kto_selected(decoder, prefs, cfg, hyper, seed, None)
}

/// [`align_kto`] with optional checkpoint selection.
pub fn align_kto_selected(
    decoder: &DecoderModel,
    prefs: &[PreferenceExample],
    cfg: &KtoConfig,
    hyper: &KtoTrainConfig,
    seed: u64,
    mut selector: Option<Selector<'_>>,
) -> Result<(DecoderModel, AlignReport)> {
    cfg.validate()?;
    if selector.as_ref().is_some_and(|s| s.every == 0) {
        return Err(Error::Config("selection interval must be positive".into()));
    }
    if prefs.is_empty() {
        return Err(Error::Input("empty preference set".into()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let reference = decoder;
    let mut policy = decoder.clone();
    let ref_lps = prefs
        .iter()
        .map(|ex| completion_logprob(reference, ex, cfg.verdict_only))
        .collect::<Result<Vec<_>>>()?;
    let (d_before, u_before) = mean_rewards(&policy, prefs, &ref_lps, cfg.verdict_only)?;
    let mut adam = Adam::new(hyper.adam.clone(), policy.net.params.len());
    let mut rng = stream_rng(seed, "kto");
    let mut grads = policy.net.zero_grads();
    let mut losses = Vec::with_capacity(hyper.steps);
    let bs = hyper.batch_size.min(prefs.len());
    let rb = cfg.ref_batch.min(prefs.len());
    // (score, step, params) of the best checkpoint so far.
    let mut best: Option<(f64, u64, Vec<f64>)> = None;
    if let Some(sel) = selector.as_mut() {
        let v = (sel.score)(&policy)?.unwrap_or_else(|| {
            log::warn!("kto: the starting policy already fails selection");
            f64::NEG_INFINITY
        });
        best = Some((v, 0, policy.net.params.clone()));
    }
    for step in 0..hyper.steps {
        let idx = sample(&mut rng, prefs.len(), bs).into_vec();
        let ref_idx = sample(&mut rng, prefs.len(), rb).into_vec();
        let mut z = 0.0;
        for &i in &ref_idx {
            z += completion_logprob(&policy, &prefs[i], cfg.verdict_only)? - ref_lps[i];
        }
        let z0 = (z / rb as f64).max(0.0);
        let batch: Vec<PreferenceExample> = idx.iter().map(|&i| prefs[i].clone()).collect();
        let batch_ref: Vec<f64> = idx.iter().map(|&i| ref_lps[i]).collect();
        grads.iter_mut().for_each(|g| *g = 0.0);
        let out = kto_loss_cached(&policy, &batch, &batch_ref, z0, cfg, Some(&mut grads))?;
        adam.step(&mut policy.net.params, &grads)?;
        log::debug!("kto step {step}: loss {:.4} z0 {z0:.4}", out.loss);
        losses.push(out.loss);
        if let Some(sel) = selector.as_mut() {
            let done = step as u64 + 1;
            if done % sel.every as u64 == 0 {
                match (sel.score)(&policy)? {
                    None => {
                        log::info!("kto: selection rejects step {done}; stopping");
                        break;
                    }
                    Some(v) => {
                        log::debug!("kto step {done}: selection score {v:.4}");
                        if best.as_ref().map_or(true, |b| v > b.0) {
                            best = Some((v, done, policy.net.params.clone()));
                        }
                    }
                }
            }
        }
    }
    let mut selected_step = adam.steps;
    if let Some((_, at, params)) = best {
        policy.net.params = params;
        selected_step = at;
    }
    let (d_after, u_after) = mean_rewards(&policy, prefs, &ref_lps, cfg.verdict_only)?;
    Ok((
        policy,
        AlignReport {
            steps: adam.steps,
            selected_step,
            n_prefs: prefs.len(),
            losses,
            mean_r_desirable_before: d_before,
            mean_r_desirable_after: d_after,
            mean_r_undesirable_before: u_before,
            mean_r_undesirable_after: u_after,
        },
    ))
}

/// Fraction of purchased, oracle-Relevant pairs that `decoder` verdicts
/// Irrelevant (decode failures count as Irrelevant). Returns the rate and
/// the number of pairs inspected.
pub fn purchase_false_negative_rate(
    decoder: &DecoderModel,
    vocab: &Vocab,
    purchases: &PurchaseLog,
) -> Result<(f64, usize)> {
    let mut n = 0usize;
    let mut fneg = 0usize;
    for e in purchases.purchased() {
        if !crate::corpus::judge_label(&e.query, &e.product).is_relevant() {
            continue;
        }
        n += 1;
        let verdict = match annotate(decoder, vocab, &e.query, &e.product) {
            Ok(a) => a.record.verdict,
            Err(Error::Decode(_)) => Label::Irrelevant,
            Err(err) => return Err(err),
        };
        fneg += usize::from(verdict == Label::Irrelevant);
    }
    Ok((if n == 0 { 0.0 } else { fneg as f64 / n as f64 }, n))
}
