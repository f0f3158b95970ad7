//! End-to-end pipeline: configuration and file-backed stages.

pub mod config;
pub mod stages;

pub use config::{
    AlignmentConfig, AlignmentSelection, AnnotatorConfig, CorpusConfig, DistillStageConfig, EncoderStageConfig, ModelShape,
    PipelineConfig, SynthesisConfig,
};
pub use stages::{artifact, run_seed, run_seed_timed, RunDir, StageTimings, StudentVariant};
