//! Finite-difference checks shared by the gradient tests and the acceptance suite.

use relevance_core::annotator::{kto_loss, kto_loss_with_z0, render_cot, KtoConfig, PreferenceExample};
use relevance_core::corpus::{gen_pairs, gen_world, id_base, WorldConfig};
use relevance_core::distiller::distill_loss;
use relevance_core::neural::gradcheck::GradCheckReport;
use relevance_core::neural::{
    ce_loss, grad_check, lm_loss, one_hot, DecoderModel, EncoderInput, EncoderModel, ModelConfig,
};

pub const EPS: f64 = 1e-4;
pub const TOL: f64 = 1e-4;
pub const SAMPLES: usize = 200;

fn tiny(causal: bool) -> ModelConfig {
    ModelConfig {
        vocab_size: 30,
        max_len: 16,
        hidden_dim: 8,
        n_layers: 2,
        n_heads: 2,
        ffn_dim: 12,
        causal,
    }
}

pub fn ce_check() -> GradCheckReport {
    let mut model = EncoderModel::init(tiny(false), 21).unwrap();
    let input = EncoderInput::from_segments(&[&[25, 26, 27], &[28, 25, 29, 24]], 16);
    let y = one_hot(1, 2);
    let out = model.encode(&input).unwrap();
    let (_, d_probs) = ce_loss(&out.probs, &y).unwrap();
    let mut grads = model.net.zero_grads();
    model.backward(&out, &d_probs, None, &mut grads).unwrap();

    let mut params = model.net.params.clone();
    let rep = grad_check(
        &mut params,
        &grads,
        |p| {
            model.net.params.copy_from_slice(p);
            let out = model.encode(&input).unwrap();
            ce_loss(&out.probs, &y).unwrap().0
        },
        EPS,
        SAMPLES,
        1,
    );
    rep
}

pub fn lm_check() -> GradCheckReport {
    let mut model = DecoderModel::init(tiny(true), 22).unwrap();
    let seq = [5u32, 9, 17, 3, 22, 9, 11];
    let mut grads = model.net.zero_grads();
    lm_loss(&model, &seq, Some(&mut grads)).unwrap();
    let mut params = model.net.params.clone();
    let rep = grad_check(
        &mut params,
        &grads,
        |p| {
            model.net.params.copy_from_slice(p);
            lm_loss(&model, &seq, None).unwrap()
        },
        EPS,
        SAMPLES,
        2,
    );
    rep
}

fn preference_batch() -> (usize, Vec<PreferenceExample>) {
    let world = gen_world(&WorldConfig::default(), 4).unwrap();
    let pairs = gen_pairs(&world, 4, 5, id_base::TRAIN).unwrap();
    let prefs = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| PreferenceExample {
            query: p.query.clone(),
            product: p.product.clone(),
            completion: render_cot(&world, &p.query, &p.product, 0.0, 0).unwrap().tokens,
            desirable: i % 2 == 0,
        })
        .collect();
    (world.vocab.len(), prefs)
}

fn kto_models(vocab: usize) -> (DecoderModel, DecoderModel) {
    let cfg = ModelConfig {
        vocab_size: vocab,
        max_len: 48,
        hidden_dim: 8,
        n_layers: 2,
        n_heads: 2,
        ffn_dim: 12,
        causal: true,
    };
    let reference = DecoderModel::init(cfg.clone(), 23).unwrap();
    // A policy away from the reference so rewards are nonzero.
    let mut policy = DecoderModel::init(cfg, 24).unwrap();
    for (p, r) in policy.net.params.iter_mut().zip(&reference.net.params) {
        *p = 0.5 * (*p + *r);
    }
    (policy, reference)
}

/// With an empty reference batch (z0 = 0) and with a fixed z0.
pub fn kto_checks() -> Vec<GradCheckReport> {
    let (vocab, batch) = preference_batch();
    let (mut policy, reference) = kto_models(vocab);
    let cfg = KtoConfig::default();
    let mut reports = Vec::new();
    for (z0, seed) in [(None, 3), (Some(0.3), 4)] {
        let loss = |policy: &DecoderModel, grads: Option<&mut [f64]>| match z0 {
            // Empty reference batch: z0 = 0.
            None => kto_loss(policy, &reference, &batch, &[], &cfg, grads).unwrap().loss,
            Some(z) => kto_loss_with_z0(policy, &reference, &batch, z, &cfg, grads).unwrap().loss,
        };
        let mut grads = policy.net.zero_grads();
        loss(&policy, Some(&mut grads));
        let mut params = policy.net.params.clone();
        let rep = grad_check(
            &mut params,
            &grads,
            |p| {
                policy.net.params.copy_from_slice(p);
                loss(&policy, None)
            },
            EPS,
            SAMPLES,
            seed,
        );
        reports.push(rep);
    }
    reports
}

pub fn distill_check() -> GradCheckReport {
    let mut model = EncoderModel::init(tiny(false), 25).unwrap();
    let input = EncoderInput::from_segments(&[&[25, 26, 27], &[28, 25, 29, 24]], 16);
    let y = one_hot(0, 2);
    let h: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
    let alpha = 0.4;
    let out = model.encode(&input).unwrap();
    let d = distill_loss(&y, &out.probs, &h, &out.cls, alpha).unwrap();
    let mut grads = model.net.zero_grads();
    model.backward(&out, &d.d_probs, Some(&d.d_cls), &mut grads).unwrap();
    let mut params = model.net.params.clone();
    let rep = grad_check(
        &mut params,
        &grads,
        |p| {
            model.net.params.copy_from_slice(p);
            let out = model.encode(&input).unwrap();
            distill_loss(&y, &out.probs, &h, &out.cls, alpha).unwrap().loss
        },
        EPS,
        SAMPLES,
        5,
    );
    rep
}
