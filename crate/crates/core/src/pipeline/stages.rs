//! Pipeline stages. Each stage reads and writes named artifacts inside one
//! run directory, so the CLI can run them one at a time and `run_seed`
//! chains them in order.

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::annotator::{
    align_kto_selected, build_preference_set, mine_hard, purchase_false_negative_rate, render_cot,
    train_cot_model, AlignReport, Annotation, CotAnnotator, CotExample, CotTrainReport, DecoderAnnotator, Selector,
};
use crate::classifier::PairClassifier;
use crate::corpus::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::corpus::{
    gen_pairs, gen_splits, gen_world, id_base, simulate_exposures, simulate_heldout_exposures, simulate_purchases,
    ExposureEntry, ExposureLog, LabeledPair, Product, PurchaseEntry, PurchaseLog, Query, World, WorldManifest,
};
use crate::distiller::{
    rewrite_cot, train_student, train_teacher, DistillConfig, KeyAttrString, StudentClassifier, TeacherClassifier,
    TeacherData, TrainReport,
};
use crate::error::{Error, Result};
use crate::evalkit::{
    evaluate, AnnotatorSummary, DataSummary, Metrics, SeedReport, Stage, StageResult, SynthIteration,
};
use crate::neural::checkpoint::{load_decoder, load_encoder, save_decoder, save_encoder};
use crate::neural::{DecoderModel, EncoderModel};
use crate::rng::derive;
use crate::synthesizer::{
    filter_candidates, mine_error_types, select_confusing, synthesize, ErrorProfile, SynthPair,
};

/// Artifact names inside a run directory. Checkpoints are stems
/// (`<stem>.json` + `<stem>.bin`).
pub mod artifact {
    pub const WORLD: &str = "world.json";
    pub const TRAIN: &str = "train.jsonl";
    pub const VALID: &str = "valid.jsonl";
    pub const TEST: &str = "test.jsonl";
    pub const EXPOSURES: &str = "exposures.jsonl";
    pub const PURCHASES: &str = "purchases.jsonl";
    pub const HELDOUT_PURCHASES: &str = "heldout_purchases.jsonl";
    pub const COT_TRAIN: &str = "cot_train.jsonl";
    pub const ANNOTATOR_SFT: &str = "annotator_sft";
    pub const ANNOTATOR_SFT_REPORT: &str = "annotator_sft_report.json";
    pub const PREFERENCES: &str = "preferences.jsonl";
    pub const ANNOTATOR: &str = "annotator_kto";
    pub const ALIGNMENT: &str = "alignment.json";
    pub const STUDENT_BASE: &str = "student_base";
    pub const STUDENT_RD: &str = "student_rd";
    pub const STUDENT_DS: &str = "student_ds";
    pub const STUDENT_KD: &str = "student_kd";
    pub const MINED: &str = "mined.jsonl";
    pub const MINING: &str = "mining.json";
    pub const SYNTH_ACCEPTED: &str = "synth_accepted.jsonl";
    pub const SYNTHESIS: &str = "synthesis.json";
    pub const KEY_ATTRS: &str = "key_attrs.jsonl";
    pub const TEACHER_ATTR: &str = "teacher_attr";
    pub const TEACHER_PLAIN: &str = "teacher_plain";
    pub const TEACHERS: &str = "teachers.json";
    pub const DISTILL: &str = "distill.json";
    pub const SEED_REPORT: &str = "seed_report.json";

    pub fn synth_candidates(iteration: usize) -> String {
        format!("synth_candidates_{iteration}.jsonl")
    }
}

/// Student checkpoints the `distill` stage can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudentVariant {
    Base,
    Rd,
    Kd,
}

/// One seed's run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn pairs(&self, name: &str) -> Result<Vec<LabeledPair>> {
        read_jsonl(&self.path(name))
    }

    fn world(&self) -> Result<World> {
        let manifest: WorldManifest = read_json(&self.path(artifact::WORLD))?;
        World::from_manifest(&manifest)
    }

    fn encoder(&self, stem: &str) -> Result<EncoderModel> {
        // The manifest is the first file read, so a missing checkpoint is
        // reported under its .json name.
        Ok(load_encoder(&self.path(stem))?.0)
    }

    fn decoder(&self, stem: &str) -> Result<DecoderModel> {
        Ok(load_decoder(&self.path(stem))?.0)
    }
}

/// Memoizes annotations by prompt content; the decoder sees nothing else.
pub struct CachedAnnotator<A> {
    inner: A,
    cache: RefCell<HashMap<(Vec<u32>, Vec<u32>), std::result::Result<Annotation, String>>>,
}

impl<A: CotAnnotator> CachedAnnotator<A> {
    pub fn new(inner: A) -> Self {
        Self {
            inner,
            cache: RefCell::new(HashMap::new()),
        }
    }
}

impl<A: CotAnnotator> CotAnnotator for CachedAnnotator<A> {
    fn annotate_pair(&self, q: &Query, p: &Product) -> Result<Annotation> {
        let key = (q.tokens.clone(), p.title_tokens.clone());
        if let Some(hit) = self.cache.borrow().get(&key) {
            return hit.clone().map_err(Error::Decode);
        }
        let got = match self.inner.annotate_pair(q, p) {
            Ok(a) => Ok(a),
            Err(Error::Decode(msg)) => Err(msg),
            Err(e) => return Err(e),
        };
        self.cache.borrow_mut().insert(key, got.clone());
        got.map_err(Error::Decode)
    }
}

fn seed_of(seed: u64, what: &str) -> u64 {
    derive(seed, what)
}

fn write_purchases(path: &Path, log: &PurchaseLog) -> Result<()> {
    write_jsonl(path, &log.entries)
}

fn read_purchases(path: &Path) -> Result<PurchaseLog> {
    Ok(PurchaseLog {
        entries: read_jsonl::<PurchaseEntry>(path)?,
    })
}

/// World, splits, exposure pools and purchase logs.
pub fn gen_corpus(cfg: &PipelineConfig, seed: u64, dir: &RunDir) -> Result<()> {
    let c = &cfg.corpus;
    let world = gen_world(&c.world, seed)?;
    let splits = gen_splits(&world, c.splits, seed)?;
    let exposures = simulate_exposures(&world, c.exposures, c.irrelevant_rate, seed)?;
    let purchases = simulate_purchases(&world, &exposures, c.nonessential_gap_rate, seed)?;
    let heldout = simulate_heldout_exposures(&world, c.heldout_exposures, c.irrelevant_rate, seed)?;
    let heldout_purchases =
        simulate_purchases(&world, &heldout, c.nonessential_gap_rate, seed_of(seed, "heldout-purchases"))?;
    for w in [&purchases.warning, &heldout_purchases.warning].into_iter().flatten() {
        log::warn!("{w}");
    }
    write_json(&dir.path(artifact::WORLD), &world.manifest())?;
    write_jsonl(&dir.path(artifact::TRAIN), &splits.train)?;
    write_jsonl(&dir.path(artifact::VALID), &splits.valid)?;
    write_jsonl(&dir.path(artifact::TEST), &splits.test)?;
    write_jsonl(&dir.path(artifact::EXPOSURES), &exposures.entries)?;
    write_purchases(&dir.path(artifact::PURCHASES), &purchases.log)?;
    write_purchases(&dir.path(artifact::HELDOUT_PURCHASES), &heldout_purchases.log)?;
    log::info!(
        "corpus: {} train / {} valid / {} test pairs, {} exposures",
        splits.train.len(),
        splits.valid.len(),
        splits.test.len(),
        exposures.entries.len()
    );
    Ok(())
}

/// CoT tuning data: simulator CoTs kept only when consistent with the
/// oracle, then re-rendered with the configured over-strictness.
pub fn cot_training_data(cfg: &PipelineConfig, world: &World, seed: u64) -> Result<Vec<CotExample>> {
    let a = &cfg.annotator;
    let pairs = gen_pairs(world, a.cot_pairs + a.heldout_pairs, seed_of(seed, "cot-pairs"), id_base::COT)?;
    let cot_seed = seed_of(seed, "cot-render");
    let fair = pairs
        .iter()
        .map(|p| render_cot(world, &p.query, &p.product, 0.0, cot_seed))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(pairs.len());
    for (p, cot) in pairs.iter().zip(&fair) {
        // Consistency filter: the simulator's verdict must match the oracle.
        if cot.verdict != p.label {
            log::warn!("dropping inconsistent CoT for pair ({}, {})", p.query.id, p.product.id);
            continue;
        }
        out.push(CotExample {
            query: p.query.clone(),
            product: p.product.clone(),
            cot: render_cot(world, &p.query, &p.product, a.strictness, cot_seed)?,
        });
    }
    Ok(out)
}

pub fn train_annotator(cfg: &PipelineConfig, seed: u64, dir: &RunDir) -> Result<CotTrainReport> {
    let world = dir.world()?;
    let examples = cot_training_data(cfg, &world, seed)?;
    let split = examples.len().saturating_sub(cfg.annotator.heldout_pairs);
    let (train, heldout) = examples.split_at(split);
    let model_cfg = cfg.annotator.decoder.model_config(world.vocab.len(), true)?;
    let init = DecoderModel::init(model_cfg, seed_of(seed, "decoder-init"))?;
    let (decoder, report) = train_cot_model(
        &init,
        &world.vocab,
        train,
        heldout,
        &cfg.annotator.train,
        seed_of(seed, "decoder-train"),
    )?;
    write_jsonl(&dir.path(artifact::COT_TRAIN), train)?;
    save_decoder(&decoder, &dir.path(artifact::ANNOTATOR_SFT), seed, report.steps)?;
    write_json(&dir.path(artifact::ANNOTATOR_SFT_REPORT), &report)?;
    log::info!(
        "annotator tuned: {} steps, held-out verdict accuracy {:?}",
        report.steps,
        report.heldout_verdict_accuracy
    );
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub summary: AnnotatorSummary,
    /// Absent when there was nothing to align.
    pub report: Option<AlignReport>,
}

fn annotator_metrics(decoder: &DecoderModel, world: &World, pairs: &[LabeledPair]) -> Result<Metrics> {
    evaluate(
        &AnnotatorClassifier(DecoderAnnotator {
            decoder,
            vocab: &world.vocab,
        }),
        pairs,
    )
}

/// Annotator verdicts as a classifier (malformed output counts as Irrelevant).
pub struct AnnotatorClassifier<A>(pub A);

impl<A: CotAnnotator> PairClassifier for AnnotatorClassifier<A> {
    fn classify(&self, q: &Query, p: &Product) -> Result<crate::corpus::Label> {
        Ok(self.0.verdict(q, p)?.0)
    }
}

pub fn align_annotator(cfg: &PipelineConfig, seed: u64, dir: &RunDir) -> Result<AlignmentRecord> {
    let world = dir.world()?;
    let sft = dir.decoder(artifact::ANNOTATOR_SFT)?;
    let purchases = read_purchases(&dir.path(artifact::PURCHASES))?;
    let heldout = read_purchases(&dir.path(artifact::HELDOUT_PURCHASES))?;
    let test = dir.pairs(artifact::TEST)?;
    let prefs = build_preference_set(&sft, &purchases, &world, seed_of(seed, "preferences"))?;
    write_jsonl(&dir.path(artifact::PREFERENCES), &prefs)?;
    let (aligned, report) = if prefs.is_empty() {
        log::warn!("no over-strict purchases found; the annotator is left unaligned");
        (sft.clone(), None)
    } else {
        let valid = dir.pairs(artifact::VALID)?;
        let sel = &cfg.alignment.selection;
        let floor = annotator_metrics(&sft, &world, &valid)?.precision - sel.max_precision_drop;
        let selector = Selector {
            every: sel.eval_every,
            score: Box::new(|m: &DecoderModel| {
                let v = annotator_metrics(m, &world, &valid)?;
                Ok((v.precision >= floor).then_some(v.recall))
            }),
        };
        let (m, r) = align_kto_selected(
            &sft,
            &prefs,
            &cfg.alignment.kto,
            &cfg.alignment.train,
            seed_of(seed, "kto"),
            Some(selector),
        )?;
        log::info!("alignment: kept step {} of {}", r.selected_step, r.steps);
        (m, Some(r))
    };
    let (before, n) = purchase_false_negative_rate(&sft, &world.vocab, &heldout)?;
    let (after, _) = purchase_false_negative_rate(&aligned, &world.vocab, &heldout)?;
    let sft_report: CotTrainReport = read_json(&dir.path(artifact::ANNOTATOR_SFT_REPORT))?;
    let summary = AnnotatorSummary {
        heldout_verdict_accuracy: sft_report.heldout_verdict_accuracy,
        preference_examples: prefs.len(),
        purchased_relevant: n,
        purchase_fn_rate_before: before,
        purchase_fn_rate_after: after,
        test_before: annotator_metrics(&sft, &world, &test)?,
        test_after: annotator_metrics(&aligned, &world, &test)?,
    };
    log::info!(
        "alignment: {} preferences, purchase FN rate {before:.4} -> {after:.4} over {n} pairs",
        prefs.len()
    );
    let steps = report.as_ref().map_or(0, |r| r.steps);
    save_decoder(&aligned, &dir.path(artifact::ANNOTATOR), seed, steps)?;
    let record = AlignmentRecord { summary, report };
    write_json(&dir.path(artifact::ALIGNMENT), &record)?;
    Ok(record)
}

fn student_init(cfg: &PipelineConfig, world: &World, seed: u64) -> Result<EncoderModel> {
    let model_cfg = cfg.student.model.model_config(world.vocab.len(), false)?;
    EncoderModel::init(model_cfg, seed_of(seed, "student-init"))
}

fn teacher_init(cfg: &PipelineConfig, world: &World, seed: u64) -> Result<EncoderModel> {
    let model_cfg = cfg.teacher.model.model_config(world.vocab.len(), false)?;
    EncoderModel::init(model_cfg, seed_of(seed, "teacher-init"))
}

/// Plain cross-entropy student starting from `init`: the shared
/// initialization for Base, the previous stage's student afterwards.
fn fit_student(
    cfg: &PipelineConfig,
    init: &EncoderModel,
    seed: u64,
    data: &[LabeledPair],
    valid: &[LabeledPair],
) -> Result<(EncoderModel, TrainReport)> {
    let dcfg = DistillConfig {
        alpha: 1.0,
        hidden_dim: init.hidden_dim(),
    };
    train_student(init, None, data, &dcfg, &cfg.student.train, seed_of(seed, "student-train"), Some(valid))
}

fn annotator<'a>(decoder: &'a DecoderModel, world: &'a World) -> CachedAnnotator<DecoderAnnotator<'a>> {
    CachedAnnotator::new(DecoderAnnotator {
        decoder,
        vocab: &world.vocab,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningRecord {
    pub inspected: usize,
    pub mined: usize,
    pub malformed: usize,
}

pub fn mine(_cfg: &PipelineConfig, _seed: u64, dir: &RunDir) -> Result<MiningRecord> {
    let world = dir.world()?;
    let student = dir.encoder(artifact::STUDENT_BASE)?;
    let decoder = dir.decoder(artifact::ANNOTATOR)?;
    let exposures = ExposureLog {
        entries: read_jsonl::<ExposureEntry>(&dir.path(artifact::EXPOSURES))?,
    };
    let result = mine_hard(
        &DecoderAnnotator {
            decoder: &decoder,
            vocab: &world.vocab,
        },
        &StudentClassifier { model: &student },
        &exposures,
    )?;
    write_jsonl(&dir.path(artifact::MINED), &result.pairs)?;
    let record = MiningRecord {
        inspected: result.inspected,
        mined: result.pairs.len(),
        malformed: result.malformed,
    };
    write_json(&dir.path(artifact::MINING), &record)?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub profiles: Vec<ErrorProfile>,
    pub iterations: Vec<SynthIteration>,
}

/// The DS loop: profile the current student on validation, synthesize from
/// the training split, keep what confuses the student and survives the
/// annotator, and fine-tune the current student on the grown pool.
pub fn run_synthesis(cfg: &PipelineConfig, seed: u64, dir: &RunDir) -> Result<SynthesisRecord> {
    let world = dir.world()?;
    let train = dir.pairs(artifact::TRAIN)?;
    let valid = dir.pairs(artifact::VALID)?;
    let mined = dir.pairs(artifact::MINED)?;
    let decoder = dir.decoder(artifact::ANNOTATOR)?;
    let annot = annotator(&decoder, &world);
    let mut current = dir.encoder(artifact::STUDENT_RD)?;
    let mut accepted: Vec<SynthPair> = Vec::new();
    let mut record = SynthesisRecord {
        profiles: Vec::new(),
        iterations: Vec::new(),
    };
    for it in 0..cfg.synthesis.iterations {
        let profile = mine_error_types(&StudentClassifier { model: &current }, &valid)?;
        let synth = synthesize(
            &world,
            &train,
            &profile,
            cfg.synthesis.candidates_per_iteration,
            seed_of(seed, &format!("synthesize-{it}")),
        )?;
        write_jsonl(&dir.path(&artifact::synth_candidates(it)), &synth.pairs)?;
        let selected = select_confusing(&StudentClassifier { model: &current }, &synth.pairs)?;
        let kept = filter_candidates(&annot, &selected)?;
        log::info!(
            "synthesis round {it}: {} generated, {} confusing, {} kept",
            synth.pairs.len(),
            selected.len(),
            kept.len()
        );
        record.iterations.push(SynthIteration {
            generated: synth.pairs.len(),
            rejected_attempts: synth.rejected(),
            selected: selected.len(),
            kept: kept.len(),
        });
        record.profiles.push(profile);
        accepted.extend(kept);
        let data = pool(&train, &mined, &accepted);
        current = fit_student(cfg, &current, seed, &data, &valid)?.0;
    }
    write_jsonl(&dir.path(artifact::SYNTH_ACCEPTED), &accepted)?;
    write_json(&dir.path(artifact::SYNTHESIS), &record)?;
    save_encoder(&current, &dir.path(artifact::STUDENT_DS), seed, 0)?;
    Ok(record)
}

fn pool(train: &[LabeledPair], mined: &[LabeledPair], synth: &[SynthPair]) -> Vec<LabeledPair> {
    train
        .iter()
        .chain(mined)
        .cloned()
        .chain(synth.iter().map(|s| s.pair.clone()))
        .collect()
}

fn full_pool(dir: &RunDir) -> Result<Vec<LabeledPair>> {
    let synth: Vec<SynthPair> = read_jsonl(&dir.path(artifact::SYNTH_ACCEPTED))?;
    Ok(pool(&dir.pairs(artifact::TRAIN)?, &dir.pairs(artifact::MINED)?, &synth))
}

fn key_attrs(annot: &dyn CotAnnotator, pairs: &[LabeledPair]) -> Result<Vec<KeyAttrString>> {
    pairs
        .iter()
        .map(|p| match annot.annotate_pair(&p.query, &p.product) {
            Ok(a) => Ok(rewrite_cot(&a.record).unwrap_or_default()),
            Err(Error::Decode(_)) => Ok(KeyAttrString::default()),
            Err(e) => Err(e),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRecord {
    pub attr: TrainReport,
    pub plain: TrainReport,
}

/// Attribute-augmented teacher and its attribute-free twin (same
/// architecture, initialization and data order).
pub fn train_teachers(cfg: &PipelineConfig, seed: u64, dir: &RunDir) -> Result<TeacherRecord> {
    let world = dir.world()?;
    let data = full_pool(dir)?;
    let valid = dir.pairs(artifact::VALID)?;
    let decoder = dir.decoder(artifact::ANNOTATOR)?;
    let annot = annotator(&decoder, &world);
    let attrs = key_attrs(&annot, &data)?;
    let valid_attrs = key_attrs(&annot, &valid)?;
    write_jsonl(&dir.path(artifact::KEY_ATTRS), &attrs)?;
    let init = teacher_init(cfg, &world, seed)?;
    let train_seed = seed_of(seed, "teacher-train");
    let (attr_model, attr_report) = train_teacher(
        &init,
        TeacherData {
            pairs: &data,
            attrs: Some(&attrs),
        },
        Some(TeacherData {
            pairs: &valid,
            attrs: Some(&valid_attrs),
        }),
        &cfg.teacher.train,
        train_seed,
    )?;
    let (plain_model, plain_report) = train_teacher(
        &init,
        TeacherData {
            pairs: &data,
            attrs: None,
        },
        Some(TeacherData {
            pairs: &valid,
            attrs: None,
        }),
        &cfg.teacher.train,
        train_seed,
    )?;
    save_encoder(&attr_model, &dir.path(artifact::TEACHER_ATTR), seed, attr_report.steps)?;
    save_encoder(&plain_model, &dir.path(artifact::TEACHER_PLAIN), seed, plain_report.steps)?;
    let record = TeacherRecord {
        attr: attr_report,
        plain: plain_report,
    };
    write_json(&dir.path(artifact::TEACHERS), &record)?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaTrial {
    pub alpha: f64,
    pub validation: Metrics,
    pub final_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillRecord {
    pub trials: Vec<AlphaTrial>,
    pub chosen_alpha: f64,
}

/// Train one student checkpoint: Base (training split, fresh weights), +RD
/// (plus mined pairs, fine-tuned from Base) or KD (full pool, fine-tuned
/// from the DS student under distillation from the attribute teacher, with
/// the α that scores best on validation).
pub fn distill(cfg: &PipelineConfig, seed: u64, dir: &RunDir, variant: StudentVariant) -> Result<Option<DistillRecord>> {
    let world = dir.world()?;
    match variant {
        StudentVariant::Base => {
            let train = dir.pairs(artifact::TRAIN)?;
            let init = student_init(cfg, &world, seed)?;
            let (m, r) = fit_student(cfg, &init, seed, &train, &dir.pairs(artifact::VALID)?)?;
            save_encoder(&m, &dir.path(artifact::STUDENT_BASE), seed, r.steps)?;
            Ok(None)
        }
        StudentVariant::Rd => {
            let data = pool(&dir.pairs(artifact::TRAIN)?, &dir.pairs(artifact::MINED)?, &[]);
            let init = dir.encoder(artifact::STUDENT_BASE)?;
            let (m, r) = fit_student(cfg, &init, seed, &data, &dir.pairs(artifact::VALID)?)?;
            save_encoder(&m, &dir.path(artifact::STUDENT_RD), seed, r.steps)?;
            Ok(None)
        }
        StudentVariant::Kd => {
            let data = full_pool(dir)?;
            let attrs: Vec<KeyAttrString> = read_jsonl(&dir.path(artifact::KEY_ATTRS))?;
            let teacher = dir.encoder(artifact::TEACHER_ATTR)?;
            let valid = dir.pairs(artifact::VALID)?;
            let init = dir.encoder(artifact::STUDENT_DS)?;
            let mut best: Option<(EncoderModel, u64, f64, f64)> = None;
            let mut trials = Vec::new();
            for &alpha in &cfg.distill.alphas {
                let dcfg = DistillConfig::new(alpha, &teacher, &init)?;
                let (m, r) = train_student(
                    &init,
                    Some((&teacher, &attrs)),
                    &data,
                    &dcfg,
                    &cfg.student.train,
                    seed_of(seed, "student-train"),
                    Some(&valid),
                )?;
                let validation = evaluate(&StudentClassifier { model: &m }, &valid)?;
                log::info!("distillation alpha {alpha}: validation F1 {:.4}", validation.f1);
                let better = best.as_ref().map_or(true, |b| validation.f1 > b.2);
                trials.push(AlphaTrial {
                    alpha,
                    validation,
                    final_mse: r.epochs.last().map_or(0.0, |e| e.mse),
                });
                if better {
                    best = Some((m, r.steps, validation.f1, alpha));
                }
            }
            let (model, steps, _, chosen) = best.expect("alphas are nonempty");
            save_encoder(&model, &dir.path(artifact::STUDENT_KD), seed, steps)?;
            let record = DistillRecord {
                trials,
                chosen_alpha: chosen,
            };
            write_json(&dir.path(artifact::DISTILL), &record)?;
            Ok(Some(record))
        }
    }
}

/// Score every checkpoint on the test split and assemble the seed report.
pub fn evaluate_run(_cfg: &PipelineConfig, seed: u64, dir: &RunDir) -> Result<SeedReport> {
    let world = dir.world()?;
    let test = dir.pairs(artifact::TEST)?;
    let mut stages = Vec::new();
    for (stage, stem) in [
        (Stage::Base, artifact::STUDENT_BASE),
        (Stage::Rd, artifact::STUDENT_RD),
        (Stage::RdDs, artifact::STUDENT_DS),
        (Stage::RdDsKd, artifact::STUDENT_KD),
    ] {
        let model = dir.encoder(stem)?;
        stages.push(StageResult {
            stage,
            metrics: evaluate(&StudentClassifier { model: &model }, &test)?,
        });
    }
    let decoder = dir.decoder(artifact::ANNOTATOR)?;
    let annot = annotator(&decoder, &world);
    let attr = dir.encoder(artifact::TEACHER_ATTR)?;
    let plain = dir.encoder(artifact::TEACHER_PLAIN)?;
    let teacher_attr = evaluate(
        &TeacherClassifier {
            model: &attr,
            annotator: Some(&annot),
        },
        &test,
    )?;
    let teacher_plain = evaluate(
        &TeacherClassifier {
            model: &plain,
            annotator: None,
        },
        &test,
    )?;
    let alignment: AlignmentRecord = read_json(&dir.path(artifact::ALIGNMENT))?;
    let mining: MiningRecord = read_json(&dir.path(artifact::MINING))?;
    let synthesis: SynthesisRecord = read_json(&dir.path(artifact::SYNTHESIS))?;
    let distill: DistillRecord = read_json(&dir.path(artifact::DISTILL))?;
    let report = SeedReport {
        seed,
        stages,
        teacher_plain,
        teacher_attr,
        distill_alpha: distill.chosen_alpha,
        annotator: alignment.summary,
        data: DataSummary {
            train: dir.pairs(artifact::TRAIN)?.len(),
            exposures: mining.inspected,
            mined: mining.mined,
            mined_malformed: mining.malformed,
            synthesis: synthesis.iterations,
        },
    };
    write_json(&dir.path(artifact::SEED_REPORT), &report)?;
    Ok(report)
}

/// Wall-clock seconds at which each stage finished, measured from the start
/// of the seed. Kept out of [`SeedReport`] so reports stay reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub laps: Vec<(String, f64)>,
}

impl StageTimings {
    pub fn at(&self, stage: &str) -> Option<f64> {
        self.laps.iter().find(|(n, _)| n == stage).map(|&(_, s)| s)
    }

    pub fn total(&self) -> f64 {
        self.laps.last().map_or(0.0, |&(_, s)| s)
    }
}

/// Every stage for one seed, in pipeline order.
pub fn run_seed(cfg: &PipelineConfig, seed: u64, dir: &RunDir) -> Result<SeedReport> {
    run_seed_timed(cfg, seed, dir).map(|(r, _)| r)
}

pub fn run_seed_timed(cfg: &PipelineConfig, seed: u64, dir: &RunDir) -> Result<(SeedReport, StageTimings)> {
    cfg.validate()?;
    let t = std::time::Instant::now();
    let mut timings = StageTimings::default();
    let mut lap = |name: &str| {
        let s = t.elapsed().as_secs_f64();
        log::info!("seed {seed}: {name} done at {s:.1}s");
        timings.laps.push((name.to_string(), s));
    };
    gen_corpus(cfg, seed, dir)?;
    lap("corpus");
    train_annotator(cfg, seed, dir)?;
    lap("annotator tuning");
    align_annotator(cfg, seed, dir)?;
    lap("alignment");
    distill(cfg, seed, dir, StudentVariant::Base)?;
    lap("base student");
    mine(cfg, seed, dir)?;
    distill(cfg, seed, dir, StudentVariant::Rd)?;
    lap("mining");
    run_synthesis(cfg, seed, dir)?;
    lap("synthesis");
    train_teachers(cfg, seed, dir)?;
    lap("teachers");
    distill(cfg, seed, dir, StudentVariant::Kd)?;
    lap("distillation");
    let report = evaluate_run(cfg, seed, dir)?;
    lap("evaluation");
    Ok((report, timings))
}
