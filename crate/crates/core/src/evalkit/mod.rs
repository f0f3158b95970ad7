//! Metrics, ablation orchestration and report emission.

pub mod metrics;
pub mod report;

pub use metrics::{evaluate, Metrics};
pub use report::{
    emit_report, read_report, sign_test, sign_test_p, AblationReport, AnnotatorSummary, DataSummary, MeanMetrics,
    SeedReport, SignTest, Stage, StageMean, StageResult, SynthIteration,
};

use std::path::Path;

use crate::error::Result;
use crate::pipeline::{run_seed, PipelineConfig, RunDir};

/// Run the whole pipeline once per seed, each in `work_dir/seed-<seed>`,
/// and aggregate. Stages within a seed share the corpus and the student
/// initialization; a failing stage aborts the run.
pub fn run_ablation(config: &PipelineConfig, seeds: &[u64], work_dir: &Path) -> Result<AblationReport> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(crate::Error::Config("ablation needs at least one seed".into()));
    }
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let dir = RunDir::create(&work_dir.join(format!("seed-{seed}")))?;
        reports.push(run_seed(config, seed, &dir)?);
    }
    AblationReport::from_seeds(reports)
}
