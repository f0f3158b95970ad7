//! Ablation report types, aggregation, the sign test and emission.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Metrics;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "Base")]
    Base,
    #[serde(rename = "+RD")]
    Rd,
    #[serde(rename = "+RD+DS")]
    RdDs,
    #[serde(rename = "+RD+DS+KD")]
    RdDsKd,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Base, Stage::Rd, Stage::RdDs, Stage::RdDsKd];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Base => "Base",
            Stage::Rd => "+RD",
            Stage::RdDs => "+RD+DS",
            Stage::RdDsKd => "+RD+DS+KD",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: Stage,
    pub metrics: Metrics,
}

/// Annotator quality before and after preference alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorSummary {
    pub heldout_verdict_accuracy: Option<f64>,
    pub preference_examples: usize,
    /// Held-out purchased pairs that are oracle-Relevant.
    pub purchased_relevant: usize,
    pub purchase_fn_rate_before: f64,
    pub purchase_fn_rate_after: f64,
    /// Annotator verdicts on the test split.
    pub test_before: Metrics,
    pub test_after: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthIteration {
    pub generated: usize,
    pub rejected_attempts: usize,
    pub selected: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub train: usize,
    pub exposures: usize,
    pub mined: usize,
    pub mined_malformed: usize,
    pub synthesis: Vec<SynthIteration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub stages: Vec<StageResult>,
    pub teacher_plain: Metrics,
    pub teacher_attr: Metrics,
    /// Distillation weight chosen on the validation split.
    pub distill_alpha: f64,
    pub annotator: AnnotatorSummary,
    pub data: DataSummary,
}

impl SeedReport {
    pub fn stage(&self, stage: Stage) -> Option<&Metrics> {
        self.stages.iter().find(|s| s.stage == stage).map(|s| &s.metrics)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MeanMetrics {
    fn of<'a>(ms: impl IntoIterator<Item = &'a Metrics>) -> Self {
        let (mut p, mut r, mut f, mut n) = (0.0, 0.0, 0.0, 0.0);
        for m in ms {
            p += m.precision;
            r += m.recall;
            f += m.f1;
            n += 1.0;
        }
        Self {
            precision: p / n,
            recall: r / n,
            f1: f / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMean {
    pub stage: Stage,
    pub mean: MeanMetrics,
}

/// One-sided sign test of `after` F1 ≥ `before` F1 across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub before: String,
    pub after: String,
    pub mean_gap: f64,
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    /// P(at least `positive` successes) under Binomial(positive + negative, 1/2).
    pub p_value: f64,
}

/// Tail probability of the one-sided sign test; ties are dropped.
pub fn sign_test_p(positive: usize, negative: usize) -> f64 {
    let n = positive + negative;
    if n == 0 {
        return 1.0;
    }
    let mut tail = 0.0;
    for k in positive..=n {
        tail += binomial(n, k);
    }
    tail / 2f64.powi(n as i32)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn sign_test(before: &str, after: &str, gaps: &[f64]) -> SignTest {
    let positive = gaps.iter().filter(|&&g| g > 0.0).count();
    let negative = gaps.iter().filter(|&&g| g < 0.0).count();
    SignTest {
        before: before.to_string(),
        after: after.to_string(),
        mean_gap: gaps.iter().sum::<f64>() / gaps.len().max(1) as f64,
        positive,
        negative,
        ties: gaps.len() - positive - negative,
        p_value: sign_test_p(positive, negative),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<SeedReport>,
    pub stage_means: Vec<StageMean>,
    pub teacher_plain_mean: MeanMetrics,
    pub teacher_attr_mean: MeanMetrics,
    /// Consecutive stage comparisons, then attribute vs plain teacher.
    pub sign_tests: Vec<SignTest>,
}

impl AblationReport {
    pub fn from_seeds(seeds: Vec<SeedReport>) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::Input("ablation report needs at least one seed".into()));
        }
        let stage_metrics = |stage: Stage| -> Result<Vec<Metrics>> {
            seeds
                .iter()
                .map(|s| {
                    s.stage(stage).copied().ok_or_else(|| {
                        Error::Input(format!("seed {} lacks stage {}", s.seed, stage.name()))
                    })
                })
                .collect()
        };
        let mut stage_means = Vec::new();
        let mut per_stage = Vec::new();
        for stage in Stage::ALL {
            let ms = stage_metrics(stage)?;
            stage_means.push(StageMean {
                stage,
                mean: MeanMetrics::of(&ms),
            });
            per_stage.push(ms);
        }
        let mut sign_tests = Vec::new();
        for i in 1..Stage::ALL.len() {
            let gaps: Vec<f64> = per_stage[i]
                .iter()
                .zip(&per_stage[i - 1])
                .map(|(a, b)| a.f1 - b.f1)
                .collect();
            sign_tests.push(sign_test(Stage::ALL[i - 1].name(), Stage::ALL[i].name(), &gaps));
        }
        let gaps: Vec<f64> = seeds.iter().map(|s| s.teacher_attr.f1 - s.teacher_plain.f1).collect();
        sign_tests.push(sign_test("teacher", "teacher+attrs", &gaps));
        Ok(Self {
            teacher_plain_mean: MeanMetrics::of(seeds.iter().map(|s| &s.teacher_plain)),
            teacher_attr_mean: MeanMetrics::of(seeds.iter().map(|s| &s.teacher_attr)),
            seeds,
            stage_means,
            sign_tests,
        })
    }

    pub fn stage_mean(&self, stage: Stage) -> MeanMetrics {
        self.stage_means
            .iter()
            .find(|m| m.stage == stage)
            .expect("every stage is aggregated")
            .mean
    }

    /// Fixed-width table: one row per seed and stage, then the means.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let rule = "-".repeat(52);
        let _ = writeln!(out, "{:<6} {:<14} {:>9} {:>9} {:>9}", "seed", "model", "P(%)", "R(%)", "F1(%)");
        let _ = writeln!(out, "{rule}");
        let row = |out: &mut String, seed: &str, name: &str, p: f64, r: f64, f: f64| {
            let _ = writeln!(
                out,
                "{seed:<6} {name:<14} {:>9.2} {:>9.2} {:>9.2}",
                100.0 * p,
                100.0 * r,
                100.0 * f
            );
        };
        for s in &self.seeds {
            let seed = s.seed.to_string();
            row(&mut out, &seed, "teacher", s.teacher_plain.precision, s.teacher_plain.recall, s.teacher_plain.f1);
            row(&mut out, &seed, "teacher+attrs", s.teacher_attr.precision, s.teacher_attr.recall, s.teacher_attr.f1);
            for st in &s.stages {
                row(&mut out, &seed, st.stage.name(), st.metrics.precision, st.metrics.recall, st.metrics.f1);
            }
        }
        let _ = writeln!(out, "{rule}");
        let m = self.teacher_plain_mean;
        row(&mut out, "mean", "teacher", m.precision, m.recall, m.f1);
        let m = self.teacher_attr_mean;
        row(&mut out, "mean", "teacher+attrs", m.precision, m.recall, m.f1);
        for sm in &self.stage_means {
            row(&mut out, "mean", sm.stage.name(), sm.mean.precision, sm.mean.recall, sm.mean.f1);
        }
        let _ = writeln!(out, "{rule}");
        for t in &self.sign_tests {
            let _ = writeln!(
                out,
                "{} -> {}: mean gap {:+.2} pts, +{} -{} ={} , one-sided p = {:.4}",
                t.before,
                t.after,
                100.0 * t.mean_gap,
                t.positive,
                t.negative,
                t.ties,
                t.p_value
            );
        }
        out
    }
}

/// Write `report` as JSON to `path` and as a text table next to it
/// (same stem, `.txt`).
pub fn emit_report(report: &AblationReport, path: &Path) -> Result<()> {
    crate::corpus::io::write_json(path, report)?;
    let table = path.with_extension("txt");
    std::fs::write(&table, report.to_table()).map_err(|e| Error::io(&table, e))
}

pub fn read_report(path: &Path) -> Result<AblationReport> {
    crate::corpus::io::read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(seed: u64, f: [u64; 4]) -> SeedReport {
        let m = |tp: u64| Metrics::from_counts(tp, 10, 100 - tp, 90);
        SeedReport {
            seed,
            stages: Stage::ALL
                .iter()
                .zip(f)
                .map(|(&stage, tp)| StageResult { stage, metrics: m(tp) })
                .collect(),
            teacher_plain: m(70),
            teacher_attr: m(80),
            distill_alpha: 0.5,
            annotator: AnnotatorSummary {
                heldout_verdict_accuracy: Some(0.9),
                preference_examples: 4,
                purchased_relevant: 10,
                purchase_fn_rate_before: 0.3,
                purchase_fn_rate_after: 0.1,
                test_before: m(60),
                test_after: m(65),
            },
            data: DataSummary {
                train: 10,
                exposures: 5,
                mined: 2,
                mined_malformed: 0,
                synthesis: vec![SynthIteration {
                    generated: 3,
                    rejected_attempts: 1,
                    selected: 2,
                    kept: 1,
                }],
            },
        }
    }

    #[test]
    fn sign_test_tail_probabilities() {
        assert_eq!(sign_test_p(3, 0), 0.125);
        assert_eq!(sign_test_p(2, 1), 0.5);
        assert_eq!(sign_test_p(0, 0), 1.0);
        // 5 of 5 positive: 1/32.
        assert_eq!(sign_test_p(5, 0), 1.0 / 32.0);
        let t = sign_test("a", "b", &[0.1, 0.0, -0.2, 0.3]);
        assert_eq!((t.positive, t.negative, t.ties), (2, 1, 1));
        assert!((t.mean_gap - 0.05).abs() < 1e-12);
    }

    #[test]
    fn aggregates_and_round_trips() {
        let r = AblationReport::from_seeds(vec![seed(1, [60, 70, 75, 80]), seed(2, [62, 61, 80, 81])]).unwrap();
        let base = r.stage_mean(Stage::Base);
        let expect = (Metrics::from_counts(60, 10, 40, 90).f1 + Metrics::from_counts(62, 10, 38, 90).f1) / 2.0;
        assert!((base.f1 - expect).abs() < 1e-15);
        assert_eq!(r.sign_tests[0].positive, 1);
        assert_eq!(r.sign_tests[0].negative, 1);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        emit_report(&r, &path).unwrap();
        assert_eq!(read_report(&path).unwrap(), r);
        let first = (std::fs::read(&path).unwrap(), std::fs::read(path.with_extension("txt")).unwrap());
        emit_report(&r, &path).unwrap();
        let second = (std::fs::read(&path).unwrap(), std::fs::read(path.with_extension("txt")).unwrap());
        assert_eq!(first, second);

        let table = r.to_table();
        // Two seeds x (2 teachers + 4 stages) plus 6 mean rows.
        let rows = table.lines().filter(|l| l.contains('.') && !l.contains("->")).count();
        assert_eq!(rows, 2 * 6 + 6);
    }

    #[test]
    fn missing_stage_is_rejected() {
        let mut s = seed(1, [1, 2, 3, 4]);
        s.stages.pop();
        assert!(AblationReport::from_seeds(vec![s]).is_err());
        assert!(AblationReport::from_seeds(vec![]).is_err());
    }
}
