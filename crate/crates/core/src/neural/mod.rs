//! From-scratch transformer core: encoder and decoder models, manual
//! backpropagation, Adam, finite-difference checks, and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod gradcheck;
pub mod loss;
pub mod ops;
pub mod transformer;

pub use adam::{Adam, AdamConfig};
pub use config::{ModelConfig, N_CLASSES, N_DECODER_SEGMENTS, N_SEGMENTS};
pub use decoder::{lm_loss, lm_loss_from, DecoderModel, DecoderTrace};
pub use encoder::{EncoderInput, EncoderModel, EncoderTrace};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{ce_loss, one_hot, softmax_backward};
pub use transformer::{Trace, Transformer, INIT_BOUND};

/// Uniform access to a model's flat parameter vector.
pub trait Parameterized {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
}

impl Parameterized for EncoderModel {
    fn params(&self) -> &[f64] {
        &self.net.params
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.net.params
    }
}

impl Parameterized for DecoderModel {
    fn params(&self) -> &[f64] {
        &self.net.params
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.net.params
    }
}

/// Initialize either model family from a config.
pub fn init_model(config: ModelConfig, seed: u64) -> crate::Result<Transformer> {
    Transformer::init(config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::encoder(60, 24, 2);
        assert_eq!(init_model(cfg.clone(), 4).unwrap().params, init_model(cfg.clone(), 4).unwrap().params);
        assert_ne!(init_model(cfg.clone(), 4).unwrap().params, init_model(cfg, 5).unwrap().params);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let cfg = ModelConfig {
            n_heads: 5,
            ..ModelConfig::encoder(60, 24, 2)
        };
        assert!(matches!(init_model(cfg, 1), Err(crate::Error::Config(_))));
    }

    #[test]
    fn default_init_is_bounded() {
        for cfg in [ModelConfig::encoder(170, 32, 4), ModelConfig::decoder(170, 48)] {
            let m = init_model(cfg, 9).unwrap();
            assert!(m.params.iter().all(|p| p.is_finite() && p.abs() <= INIT_BOUND));
        }
    }
}
