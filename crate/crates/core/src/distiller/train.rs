//! Teacher training and student distillation loops.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::inputs::{student_input, teacher_input};
use super::keyattr::{rewrite_cot, KeyAttrString};
use super::loss::distill_loss;
use crate::annotator::CotAnnotator;
use crate::classifier::PairClassifier;
use crate::corpus::{Label, LabeledPair, Product, Query};
use crate::error::{Error, Result};
use crate::evalkit::Metrics;
use crate::neural::{ce_loss, one_hot, Adam, AdamConfig, EncoderInput, EncoderModel};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Final learning rate as a fraction of the initial one (linear decay).
    pub final_lr_fraction: f64,
}

impl Default for EncoderTrainConfig {
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
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub alpha: f64,
    pub hidden_dim: usize,
}

impl DistillConfig {
    /// Checked constructor: both models must share `hidden_dim`.
    pub fn new(alpha: f64, teacher: &EncoderModel, student: &EncoderModel) -> Result<Self> {
        let cfg = Self {
            alpha,
            hidden_dim: teacher.hidden_dim(),
        };
        cfg.validate(teacher, student)?;
        Ok(cfg)
    }

    pub fn validate(&self, teacher: &EncoderModel, student: &EncoderModel) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if teacher.hidden_dim() != self.hidden_dim || student.hidden_dim() != self.hidden_dim {
            return Err(Error::Config(format!(
                "hidden_dim mismatch: config {}, teacher {}, student {}",
                self.hidden_dim,
                teacher.hidden_dim(),
                student.hidden_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub ce: f64,
    /// Mean squared [CLS] distance to the teacher (0 without a teacher).
    pub mse: f64,
    pub validation: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept: the best validation F1 (earliest on
    /// ties), or the last epoch without validation data. `None` means no
    /// epoch beat the starting weights, which were returned unchanged.
    pub kept_epoch: Option<usize>,
}

fn validate_model(model: &EncoderModel, val: Option<(&[EncoderInput], &[Label])>) -> Result<Option<Metrics>> {
    let Some((inputs, labels)) = val else {
        return Ok(None);
    };
    let preds = inputs
        .iter()
        .zip(labels)
        .map(|(x, &y)| Ok((model.predict(x)?, y)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(Metrics::from_predictions(preds)))
}

/// Shared loop: CE on `labels`, plus the [CLS] alignment term when teacher
/// vectors are supplied and `alpha < 1`. With validation data the weights of
/// the best validation epoch are returned; the starting weights compete too,
/// so fine-tuning a trained model never loses validation F1.
fn train_encoder(
    model: &EncoderModel,
    inputs: &[EncoderInput],
    labels: &[Label],
    teacher_cls: Option<&[Vec<f64>]>,
    alpha: f64,
    hyper: &EncoderTrainConfig,
    seed: u64,
    val: Option<(&[EncoderInput], &[Label])>,
) -> Result<(EncoderModel, TrainReport)> {
    if inputs.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut model = model.clone();
    let mut adam = Adam::new(hyper.adam.clone(), model.net.params.len());
    let mut rng = stream_rng(seed, "encoder-train");
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let batches_per_epoch = inputs.len().div_ceil(hyper.batch_size);
    let total_steps = (hyper.epochs * batches_per_epoch) as f64;
    let mut grads = model.net.zero_grads();
    let mut epochs = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, Option<usize>, Vec<f64>)> =
        validate_model(&model, val)?.map(|m| (m.f1, None, model.net.params.clone()));
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let (mut sum_loss, mut sum_ce, mut sum_mse) = (0.0, 0.0, 0.0);
        for (b, batch) in order.chunks(hyper.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let out = model.encode(&inputs[i])?;
                let y = one_hot(labels[i].class_index(), 2);
                match teacher_cls {
                    Some(h) if alpha < 1.0 => {
                        let l = distill_loss(&y, &out.probs, &h[i], &out.cls, alpha)?;
                        sum_loss += l.loss;
                        sum_ce += l.ce;
                        sum_mse += l.mse;
                        let dp: Vec<f64> = l.d_probs.iter().map(|g| g * scale).collect();
                        let dc: Vec<f64> = l.d_cls.iter().map(|g| g * scale).collect();
                        model.backward(&out, &dp, Some(&dc), &mut grads)?;
                    }
                    _ => {
                        let (ce, d) = ce_loss(&out.probs, &y)?;
                        sum_loss += ce;
                        sum_ce += ce;
                        let dp: Vec<f64> = d.iter().map(|g| g * scale).collect();
                        model.backward(&out, &dp, None, &mut grads)?;
                    }
                }
            }
            let progress = (epoch * batches_per_epoch + b) as f64 / total_steps;
            let lr = hyper.adam.lr * (1.0 - (1.0 - hyper.final_lr_fraction) * progress);
            adam.step_with_lr(&mut model.net.params, &grads, lr)?;
        }
        let n = inputs.len() as f64;
        let stats = EpochStats {
            loss: sum_loss / n,
            ce: sum_ce / n,
            mse: sum_mse / n,
            validation: validate_model(&model, val)?,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} ce {:.4} mse {:.4} val f1 {:?}",
            stats.loss,
            stats.ce,
            stats.mse,
            stats.validation.map(|m| m.f1)
        );
        if let Some(m) = &stats.validation {
            if best.as_ref().map_or(true, |b| m.f1 > b.0) {
                best = Some((m.f1, Some(epoch), model.net.params.clone()));
            }
        }
        epochs.push(stats);
    }
    let kept_epoch = match best {
        Some((_, epoch, params)) => {
            model.net.params = params;
            epoch
        }
        None => hyper.epochs.checked_sub(1),
    };
    Ok((
        model,
        TrainReport {
            steps: adam.steps,
            epochs,
            kept_epoch,
        },
    ))
}

/// Pairs with optional key-attribute strings; `attrs = None` is the plain
/// (attribute-free) teacher view.
#[derive(Debug, Clone, Copy)]
pub struct TeacherData<'a> {
    pub pairs: &'a [LabeledPair],
    pub attrs: Option<&'a [KeyAttrString]>,
}

impl TeacherData<'_> {
    fn inputs(&self, max_len: usize) -> Result<Vec<EncoderInput>> {
        match self.attrs {
            Some(a) if a.len() != self.pairs.len() => Err(Error::Input(format!(
                "key attributes missing: {} strings for {} pairs",
                a.len(),
                self.pairs.len()
            ))),
            Some(a) => Ok(self
                .pairs
                .iter()
                .zip(a)
                .map(|(p, k)| teacher_input(&p.query, &p.product, k, max_len))
                .collect()),
            None => Ok(self
                .pairs
                .iter()
                .map(|p| student_input(&p.query, &p.product, max_len))
                .collect()),
        }
    }

    fn labels(&self) -> Vec<Label> {
        self.pairs.iter().map(|p| p.label).collect()
    }
}

pub fn train_teacher(
    teacher: &EncoderModel,
    train: TeacherData<'_>,
    val: Option<TeacherData<'_>>,
    hyper: &EncoderTrainConfig,
    seed: u64,
) -> Result<(EncoderModel, TrainReport)> {
    let max_len = teacher.config().max_len;
    let inputs = train.inputs(max_len)?;
    let val_inputs = val.map(|v| Ok::<_, Error>((v.inputs(max_len)?, v.labels()))).transpose()?;
    train_encoder(
        teacher,
        &inputs,
        &train.labels(),
        None,
        1.0,
        hyper,
        seed,
        val_inputs.as_ref().map(|(x, y)| (x.as_slice(), y.as_slice())),
    )
}

/// Train the student on `pairs`; with a teacher, its [CLS] vectors on the
/// teacher view of the same pairs are computed once and held fixed.
pub fn train_student(
    student: &EncoderModel,
    teacher: Option<(&EncoderModel, &[KeyAttrString])>,
    pairs: &[LabeledPair],
    cfg: &DistillConfig,
    hyper: &EncoderTrainConfig,
    seed: u64,
    val: Option<&[LabeledPair]>,
) -> Result<(EncoderModel, TrainReport)> {
    let max_len = student.config().max_len;
    let inputs: Vec<EncoderInput> = pairs
        .iter()
        .map(|p| student_input(&p.query, &p.product, max_len))
        .collect();
    let labels: Vec<Label> = pairs.iter().map(|p| p.label).collect();
    let teacher_cls = match teacher {
        Some((t, attrs)) => {
            cfg.validate(t, student)?;
            let view = TeacherData {
                pairs,
                attrs: Some(attrs),
            };
            let t_inputs = view.inputs(t.config().max_len)?;
            Some(
                t_inputs
                    .iter()
                    .map(|x| Ok(t.encode(x)?.cls))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        None => None,
    };
    let val_data = val.map(|v| {
        (
            v.iter()
                .map(|p| student_input(&p.query, &p.product, max_len))
                .collect::<Vec<_>>(),
            v.iter().map(|p| p.label).collect::<Vec<_>>(),
        )
    });
    train_encoder(
        student,
        &inputs,
        &labels,
        teacher_cls.as_deref(),
        cfg.alpha,
        hyper,
        seed,
        val_data.as_ref().map(|(x, y)| (x.as_slice(), y.as_slice())),
    )
}

/// Online student: reads only query and title tokens.
pub struct StudentClassifier<'a> {
    pub model: &'a EncoderModel,
}

impl PairClassifier for StudentClassifier<'_> {
    fn classify(&self, q: &Query, p: &Product) -> Result<Label> {
        self.model
            .predict(&student_input(q, p, self.model.config().max_len))
    }
}

/// Teacher scored on its own view; attributes come from the annotator's CoT
/// for the pair (an unusable annotation yields an empty attribute string).
pub struct TeacherClassifier<'a> {
    pub model: &'a EncoderModel,
    pub annotator: Option<&'a dyn CotAnnotator>,
}

impl PairClassifier for TeacherClassifier<'_> {
    fn classify(&self, q: &Query, p: &Product) -> Result<Label> {
        let max_len = self.model.config().max_len;
        let Some(annotator) = self.annotator else {
            return self.model.predict(&student_input(q, p, max_len));
        };
        let attrs = match annotator.annotate_pair(q, p) {
            Ok(a) => rewrite_cot(&a.record).unwrap_or_default(),
            Err(Error::Decode(_)) => KeyAttrString::default(),
            Err(e) => return Err(e),
        };
        self.model.predict(&teacher_input(q, p, &attrs, max_len))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::pairs::id_base;
    use crate::corpus::{gen_pairs, gen_world, WorldConfig};
    use crate::neural::ModelConfig;

    #[test]
    fn fine_tuning_never_loses_validation_f1() {
        let world = gen_world(&WorldConfig::default(), 5).unwrap();
        let train = gen_pairs(&world, 200, 5, id_base::TRAIN).unwrap();
        let valid = gen_pairs(&world, 100, 5, id_base::VALID).unwrap();
        let mut mc = ModelConfig::encoder(world.vocab.len(), 24, 1);
        mc.hidden_dim = 16;
        mc.ffn_dim = 32;
        mc.n_heads = 2;
        let init = EncoderModel::init(mc, 5).unwrap();
        let dc = DistillConfig { alpha: 1.0, hidden_dim: 16 };
        let hyper = EncoderTrainConfig { epochs: 3, ..Default::default() };
        let (start, _) = train_student(&init, None, &train, &dc, &hyper, 1, Some(&valid)).unwrap();
        let f1 = |m: &EncoderModel| evaluate_pairs(m, &valid);
        // A step size this large wrecks the model, so selection must fall
        // back to the starting weights.
        let mut wreck = hyper.clone();
        wreck.adam.lr = 5.0;
        let (tuned, report) = train_student(&start, None, &train, &dc, &wreck, 2, Some(&valid)).unwrap();
        assert!(f1(&tuned) >= f1(&start));
        if report.kept_epoch.is_none() {
            assert_eq!(tuned.net.params, start.net.params);
        }
        assert!(report.epochs.iter().all(|e| e.validation.unwrap().f1 <= f1(&tuned)));
    }

    fn evaluate_pairs(m: &EncoderModel, pairs: &[LabeledPair]) -> f64 {
        let c = StudentClassifier { model: m };
        Metrics::from_predictions(pairs.iter().map(|p| (c.classify(&p.query, &p.product).unwrap(), p.label))).f1
    }
}
