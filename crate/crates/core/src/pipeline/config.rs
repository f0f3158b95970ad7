//! Pipeline configuration. Every knob has an explicit key; the TOML emitted
//! by `PipelineConfig::default().to_toml()` lists all of them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotator::{CotTrainConfig, KtoConfig, KtoTrainConfig};
use crate::corpus::{SplitSizes, WorldConfig};
use crate::distiller::EncoderTrainConfig;
use crate::error::{Error, Result};
use crate::neural::{AdamConfig, ModelConfig};

/// Transformer dimensions; the vocabulary size comes from the world.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
}

impl ModelShape {
    pub fn model_config(&self, vocab_size: usize, causal: bool) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            vocab_size,
            max_len: self.max_len,
            hidden_dim: self.hidden_dim,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            ffn_dim: self.ffn_dim,
            causal,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub world: WorldConfig,
    pub splits: SplitSizes,
    /// Exposure pool mined for hard samples; purchases are drawn from it too.
    pub exposures: usize,
    /// Second exposure stream whose purchases measure annotator false negatives.
    pub heldout_exposures: usize,
    pub irrelevant_rate: f64,
    /// Share of purchases whose query has a non-essential attribute absent
    /// from the product.
    pub nonessential_gap_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorConfig {
    /// CoT-labelled pairs used to tune the decoder.
    pub cot_pairs: usize,
    /// Pairs held out to measure verdict accuracy after tuning.
    pub heldout_pairs: usize,
    /// Over-strictness injected into the CoT tuning data.
    pub strictness: f64,
    pub decoder: ModelShape,
    pub train: CotTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentConfig {
    pub kto: KtoConfig,
    pub train: KtoTrainConfig,
    pub selection: AlignmentSelection,
}

/// Checkpoint selection on the validation split: the checkpoint with the
/// highest recall whose precision stays within `max_precision_drop` of the
/// tuned annotator's; training stops at the first checkpoint outside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentSelection {
    pub eval_every: usize,
    pub max_precision_drop: f64,
}

impl Default for AlignmentSelection {
    fn default() -> Self {
        Self {
            eval_every: 1,
            max_precision_drop: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Rounds of mine → synthesize → select → filter → retrain.
    pub iterations: usize,
    pub candidates_per_iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderStageConfig {
    pub model: ModelShape,
    pub train: EncoderTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillStageConfig {
    /// Candidate weights; the one with the best validation F1 is kept
    /// (earliest on ties).
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seeds: Vec<u64>,
    pub corpus: CorpusConfig,
    pub annotator: AnnotatorConfig,
    pub alignment: AlignmentConfig,
    pub synthesis: SynthesisConfig,
    pub teacher: EncoderStageConfig,
    pub student: EncoderStageConfig,
    pub distill: DistillStageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let encoder = |n_layers: usize, max_len: usize| ModelShape {
            hidden_dim: 64,
            n_layers,
            n_heads: 4,
            ffn_dim: 128,
            max_len,
        };
        Self {
            seeds: vec![1, 2, 3],
            corpus: CorpusConfig {
                world: WorldConfig::default(),
                splits: SplitSizes {
                    train: 1500,
                    valid: 1000,
                    test: 2000,
                },
                exposures: 6000,
                heldout_exposures: 2000,
                irrelevant_rate: 0.5,
                nonessential_gap_rate: 0.3,
            },
            annotator: AnnotatorConfig {
                cot_pairs: 8000,
                heldout_pairs: 300,
                strictness: 0.8,
                decoder: ModelShape {
                    hidden_dim: 64,
                    n_layers: 2,
                    n_heads: 4,
                    ffn_dim: 128,
                    max_len: 48,
                },
                train: CotTrainConfig {
                    epochs: 8,
                    batch_size: 16,
                    adam: AdamConfig::default(),
                    final_lr_fraction: 0.1,
                },
            },
            alignment: AlignmentConfig {
                kto: KtoConfig::default(),
                train: KtoTrainConfig::default(),
                selection: AlignmentSelection::default(),
            },
            synthesis: SynthesisConfig {
                iterations: 3,
                candidates_per_iteration: 2000,
            },
            teacher: EncoderStageConfig {
                model: encoder(4, 40),
                train: EncoderTrainConfig {
                    epochs: 12,
                    ..EncoderTrainConfig::default()
                },
            },
            student: EncoderStageConfig {
                model: encoder(2, 24),
                // A small oracle split keeps the student well short of the
                // annotator, so the epoch count is raised to hold the step
                // budget.
                train: EncoderTrainConfig {
                    epochs: 16,
                    ..EncoderTrainConfig::default()
                },
            },
            distill: DistillStageConfig {
                alphas: vec![0.25, 0.5, 0.75],
            },
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let c = &self.corpus;
        c.world.validate()?;
        if c.splits.train == 0 || c.splits.valid == 0 || c.splits.test == 0 {
            return Err(Error::Config("every split must be nonempty".into()));
        }
        if c.exposures == 0 || c.heldout_exposures == 0 {
            return Err(Error::Config("exposure pools must be nonempty".into()));
        }
        for (name, x) in [
            ("corpus.irrelevant_rate", c.irrelevant_rate),
            ("corpus.nonessential_gap_rate", c.nonessential_gap_rate),
            ("annotator.strictness", self.annotator.strictness),
        ] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {x}")));
            }
        }
        if self.annotator.cot_pairs == 0 {
            return Err(Error::Config("annotator.cot_pairs must be positive".into()));
        }
        // Vocabulary size is irrelevant to shape checks.
        self.annotator.decoder.model_config(32, true)?;
        self.teacher.model.model_config(32, false)?;
        self.student.model.model_config(32, false)?;
        if self.teacher.model.hidden_dim != self.student.model.hidden_dim {
            return Err(Error::Config(format!(
                "teacher hidden_dim {} must equal student hidden_dim {} for [CLS] alignment",
                self.teacher.model.hidden_dim, self.student.model.hidden_dim
            )));
        }
        self.alignment.kto.validate()?;
        if self.alignment.selection.eval_every == 0 {
            return Err(Error::Config("alignment.selection.eval_every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alignment.selection.max_precision_drop) {
            return Err(Error::Config("alignment.selection.max_precision_drop must lie in [0, 1]".into()));
        }
        if self.alignment.train.batch_size == 0 {
            return Err(Error::Config("alignment.train.batch_size must be positive".into()));
        }
        for (name, t) in [("teacher", &self.teacher.train), ("student", &self.student.train)] {
            if t.epochs == 0 || t.batch_size == 0 {
                return Err(Error::Config(format!("{name}.train epochs and batch_size must be positive")));
            }
        }
        if self.annotator.train.epochs == 0 || self.annotator.train.batch_size == 0 {
            return Err(Error::Config("annotator.train epochs and batch_size must be positive".into()));
        }
        if self.synthesis.iterations > 0 && self.synthesis.candidates_per_iteration == 0 {
            return Err(Error::Config("synthesis.candidates_per_iteration must be positive".into()));
        }
        if self.distill.alphas.is_empty() || self.distill.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config("distill.alphas must be a nonempty list within [0, 1]".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn missing_and_unknown_keys_are_rejected() {
        let text = PipelineConfig::default().to_toml();
        let missing = text.replace("strictness = 0.8\n", "");
        assert!(PipelineConfig::from_toml(&missing).is_err());
        let unknown = text.replace("strictness = 0.8\n", "strictness = 0.8\nstrictnes = 0.1\n");
        assert!(PipelineConfig::from_toml(&unknown).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.student.model.hidden_dim = 32;
        cfg.student.model.ffn_dim = 64;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.distill.alphas = vec![1.5];
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }
}
