//! Error-type-aware adversarial synthesis: profile the student's mistakes,
//! perturb seed pairs along those patterns, keep what confuses the student,
//! and let the annotator veto what it disagrees with.

pub mod perturb;
pub mod types;

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng as _;

pub use perturb::{perturb, Rejection};
pub use types::{ErrorKind, ErrorProfile, ErrorType, ProfileEntry, SynthPair};

use crate::annotator::CotAnnotator;
use crate::classifier::PairClassifier;
use crate::corpus::{judge, Comparison, Kind, Label, LabeledPair, Outcome, World};
use crate::error::{Error, Result};
use crate::rng::entry_rng;

/// Perturbation attempts per output slot before the slot is given up.
pub const MAX_ATTEMPTS_PER_SLOT: usize = 256;

/// Error types a misclassification with these oracle reasons would be
/// reproduced by. Empty when no perturbation explains it.
pub fn attribute_error(label: Label, reasons: &[Comparison]) -> Vec<ErrorType> {
    let mut out = Vec::new();
    let push = |out: &mut Vec<ErrorType>, kind: ErrorKind, target_label: Label| {
        let t = ErrorType { kind, target_label };
        if !out.contains(&t) {
            out.push(t);
        }
    };
    match label {
        // Student said Relevant: blame every essential gap.
        Label::Irrelevant => {
            for r in reasons {
                match r.outcome {
                    Outcome::Mismatch => push(&mut out, ErrorKind::for_swap(r.kind), Label::Irrelevant),
                    Outcome::AbsentEssential => push(&mut out, ErrorKind::EssentialDrop, Label::Irrelevant),
                    _ => {}
                }
            }
        }
        // Student said Irrelevant: blame tolerated gaps, else the matched
        // non-category attributes it failed to credit.
        Label::Relevant => {
            for r in reasons {
                match r.outcome {
                    Outcome::AbsentNonEssential => push(&mut out, ErrorKind::NonEssentialDrop, Label::Relevant),
                    Outcome::Mismatch => push(&mut out, ErrorKind::for_swap(r.kind), Label::Relevant),
                    _ => {}
                }
            }
            if out.is_empty() {
                for r in reasons {
                    if r.outcome == Outcome::Match && r.kind != Kind::Category {
                        push(&mut out, ErrorKind::for_swap(r.kind), Label::Relevant);
                    }
                }
            }
        }
    }
    out
}

/// Profile the student's misclassifications on `eval_pairs`. Each mistake
/// spreads one unit of weight evenly over the error types it is attributed
/// to. Falls back to the uniform profile when nothing is attributable.
pub fn mine_error_types(student: &dyn PairClassifier, eval_pairs: &[LabeledPair]) -> Result<ErrorProfile> {
    let mut counts: BTreeMap<ErrorType, f64> = BTreeMap::new();
    let mut mistakes = 0usize;
    let mut unattributed = 0usize;
    for pair in eval_pairs {
        if student.classify(&pair.query, &pair.product)? == pair.label {
            continue;
        }
        mistakes += 1;
        let (_, reasons) = judge(&pair.query, &pair.product);
        let types = attribute_error(pair.label, &reasons);
        if types.is_empty() {
            unattributed += 1;
            continue;
        }
        let share = 1.0 / types.len() as f64;
        for t in types {
            *counts.entry(t).or_default() += share;
        }
    }
    if counts.is_empty() {
        log::info!(
            "no attributable student errors ({mistakes} mistakes, {unattributed} unattributed); using the uniform profile"
        );
        return Ok(ErrorProfile::uniform());
    }
    log::info!("error profile from {mistakes} mistakes ({unattributed} unattributed)");
    ErrorProfile::from_weights(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub pairs: Vec<SynthPair>,
    /// Slots abandoned after exhausting their attempts.
    pub empty_slots: usize,
    /// Rejected perturbation attempts, by error type.
    pub rejections: BTreeMap<ErrorType, usize>,
}

impl Synthesis {
    pub fn rejected(&self) -> usize {
        self.rejections.values().sum()
    }
}

/// Generate up to `n` labelled variants. Slot `i` draws its error type from
/// the profile, then tries random seed pairs until a perturbation is
/// accepted; every draw comes from the slot's own generator.
pub fn synthesize(
    world: &World,
    seed_pairs: &[LabeledPair],
    profile: &ErrorProfile,
    n: usize,
    seed: u64,
) -> Result<Synthesis> {
    if seed_pairs.is_empty() {
        return Err(Error::Config("synthesis needs at least one seed pair".into()));
    }
    if n == 0 {
        return Err(Error::Config("synthesis count must be positive".into()));
    }
    profile.validate()?;
    let dist = WeightedIndex::new(profile.weights.iter().map(|e| e.weight))
        .map_err(|e| Error::Config(format!("profile weights: {e}")))?;
    let mut pairs = Vec::with_capacity(n);
    let mut rejections: BTreeMap<ErrorType, usize> = BTreeMap::new();
    let mut empty_slots = 0;
    for slot in 0..n {
        let mut rng = entry_rng(seed, "synthesize", slot as u64);
        let etype = profile.weights[dist.sample(&mut rng)].error_type;
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS_PER_SLOT {
            let base = seed_pairs.choose(&mut rng).expect("nonempty");
            match perturb(world, base, etype, rng.gen())? {
                Ok(sp) => {
                    accepted = Some(sp);
                    break;
                }
                Err(_) => *rejections.entry(etype).or_default() += 1,
            }
        }
        match accepted {
            Some(sp) => pairs.push(sp),
            None => empty_slots += 1,
        }
    }
    let out = Synthesis {
        pairs,
        empty_slots,
        rejections,
    };
    log::info!(
        "synthesized {} of {n} pairs ({} rejected attempts, {} empty slots)",
        out.pairs.len(),
        out.rejected(),
        out.empty_slots
    );
    Ok(out)
}

/// Candidates the student gets wrong, in input order.
pub fn select_confusing(student: &dyn PairClassifier, candidates: &[SynthPair]) -> Result<Vec<SynthPair>> {
    let mut out = Vec::new();
    for c in candidates {
        if student.classify(&c.pair.query, &c.pair.product)? != c.pair.label {
            out.push(c.clone());
        }
    }
    Ok(out)
}

/// Candidates whose annotator verdict equals the constructed label.
/// Malformed annotations never pass.
pub fn filter_candidates(annotator: &dyn CotAnnotator, candidates: &[SynthPair]) -> Result<Vec<SynthPair>> {
    let mut out = Vec::new();
    for c in candidates {
        let (verdict, malformed) = annotator.verdict(&c.pair.query, &c.pair.product)?;
        if !malformed && verdict == c.pair.label {
            out.push(c.clone());
        }
    }
    Ok(out)
}
