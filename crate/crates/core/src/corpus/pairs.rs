//! Pair, exposure and purchase generators. Entry `i` of every generator is a
//! pure function of `(world, seed, i)`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{has_nonessential_absence, judge, oracle_label, Comparison};
use super::types::{
    Assertion, Attribute, ExposureEntry, ExposureLog, Kind, Label, LabeledPair, Outcome, Product,
    PurchaseEntry, PurchaseLog, Query, Source,
};
use super::world::World;
use crate::error::{Error, Result};
use crate::rng;

/// Query-id ranges. Splits never share a query id.
pub mod id_base {
    pub const TRAIN: u64 = 0;
    pub const VALID: u64 = 1_000_000;
    pub const TEST: u64 = 2_000_000;
    pub const EXPOSURE: u64 = 3_000_000;
    pub const HELDOUT_EXPOSURE: u64 = 4_000_000;
    pub const COT: u64 = 5_000_000;
    pub const SYNTH_PRODUCT: u64 = 1 << 32;
}

const MAX_ATTEMPTS: usize = 256;

fn sample_query(world: &World, anchor: &Product, r: &mut impl Rng, id: u64) -> Query {
    let cfg = &world.config;
    let category = anchor.values_of(Kind::Category).next().unwrap_or(0);
    let mut assertions = vec![Assertion {
        attribute: Attribute::new(Kind::Category, category),
        essential: true,
    }];
    let n_extra = r.gen_range(0..=cfg.max_query_extras);
    let mut kinds = [Kind::Brand, Kind::Model, Kind::Audience, Kind::Spec];
    kinds.shuffle(r);
    for &kind in &kinds[..n_extra] {
        let essential = r.gen_bool(cfg.essentiality.get(kind));
        let own: Vec<u32> = anchor.values_of(kind).collect();
        let off = kind.multi_valued() && r.gen_bool(cfg.off_product_rate);
        let value = if own.is_empty() || off {
            r.gen_range(0..world.value_count(kind))
        } else {
            own[r.gen_range(0..own.len())]
        };
        assertions.push(Assertion {
            attribute: Attribute::new(kind, value),
            essential,
        });
    }
    world.render_query(id, assertions)
}

fn matches(reasons: &[Comparison]) -> usize {
    reasons.iter().filter(|c| c.outcome == Outcome::Match).count()
}

fn pick_product<'w>(
    world: &'w World,
    q: &Query,
    target: Label,
    r: &mut impl Rng,
) -> Option<&'w Product> {
    let category = q.assertions[0].attribute.value;
    let judged = world.catalog.iter().map(|p| (p, judge(q, p)));
    match target {
        Label::Relevant => {
            let cands: Vec<&Product> = judged
                .filter(|(_, (l, _))| *l == Label::Relevant)
                .map(|(p, _)| p)
                .collect();
            cands.choose(r).copied()
        }
        Label::Irrelevant => {
            let hard = r.gen_bool(world.config.hard_negative_rate);
            let near_miss = r.gen_bool(0.5);
            let cands: Vec<(&Product, usize)> = judged
                .filter(|(p, (l, _))| {
                    *l == Label::Irrelevant
                        && (!hard || p.values_of(Kind::Category).any(|c| c == category))
                })
                .map(|(p, (_, reasons))| (p, matches(&reasons)))
                .collect();
            if hard && near_miss {
                let best = cands.iter().map(|c| c.1).max()?;
                let near: Vec<&Product> = cands
                    .iter()
                    .filter(|c| c.1 == best)
                    .map(|c| c.0)
                    .collect();
                near.choose(r).copied()
            } else {
                cands.choose(r).map(|c| c.0)
            }
        }
    }
}

/// Sample a query/product pair whose oracle label equals `target`.
pub fn sample_pair(
    world: &World,
    target: Label,
    r: &mut impl Rng,
    query_id: u64,
) -> Result<(Query, Product)> {
    for _ in 0..MAX_ATTEMPTS {
        let anchor = &world.catalog[r.gen_range(0..world.catalog.len())];
        let q = sample_query(world, anchor, r, query_id);
        if let Some(p) = pick_product(world, &q, target, r) {
            debug_assert_eq!(judge(&q, p).0, target);
            return Ok((q, p.clone()));
        }
    }
    Err(Error::Config(format!(
        "could not sample a {target:?} pair in {MAX_ATTEMPTS} attempts; the catalog is too small"
    )))
}

/// Exact stratification: entry `i` is Relevant iff `floor((i+1)f) > floor(i f)`.
fn stratified_target(i: usize, fraction: f64) -> Label {
    let hi = ((i + 1) as f64 * fraction).floor();
    let lo = (i as f64 * fraction).floor();
    if hi > lo {
        Label::Relevant
    } else {
        Label::Irrelevant
    }
}

/// Oracle-labeled pairs with query ids `query_id_base..query_id_base + n`.
pub fn gen_pairs(world: &World, n: usize, seed: u64, query_id_base: u64) -> Result<Vec<LabeledPair>> {
    if n == 0 {
        return Err(Error::Config("pair count must be positive".into()));
    }
    (0..n)
        .map(|i| {
            let mut r = rng::entry_rng(seed, "pairs", query_id_base + i as u64);
            let target = stratified_target(i, world.config.relevant_fraction);
            let (query, product) = sample_pair(world, target, &mut r, query_id_base + i as u64)?;
            Ok(LabeledPair {
                query,
                product,
                label: target,
                source: Source::Oracle,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<LabeledPair>,
    pub valid: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
}

pub fn gen_splits(world: &World, sizes: SplitSizes, seed: u64) -> Result<Splits> {
    Ok(Splits {
        train: gen_pairs(world, sizes.train, seed, id_base::TRAIN)?,
        valid: gen_pairs(world, sizes.valid, seed, id_base::VALID)?,
        test: gen_pairs(world, sizes.test, seed, id_base::TEST)?,
    })
}

fn exposures_with_base(
    world: &World,
    n: usize,
    irrelevant_rate: f64,
    seed: u64,
    base: u64,
) -> Result<ExposureLog> {
    if !(0.0..=1.0).contains(&irrelevant_rate) {
        return Err(Error::Config(format!(
            "irrelevant_rate must lie in [0, 1], got {irrelevant_rate}"
        )));
    }
    let entries = (0..n)
        .map(|i| {
            let id = base + i as u64;
            let mut r = rng::entry_rng(seed, "exposure", id);
            let target = if r.gen_bool(irrelevant_rate) {
                Label::Irrelevant
            } else {
                Label::Relevant
            };
            let (query, product) = sample_pair(world, target, &mut r, id)?;
            Ok(ExposureEntry { query, product })
        })
        .collect::<Result<_>>()?;
    Ok(ExposureLog { entries })
}

/// Simulated search exposures: each entry is oracle-Irrelevant with
/// probability `irrelevant_rate`.
pub fn simulate_exposures(
    world: &World,
    n: usize,
    irrelevant_rate: f64,
    seed: u64,
) -> Result<ExposureLog> {
    exposures_with_base(world, n, irrelevant_rate, seed, id_base::EXPOSURE)
}

/// Second exposure stream with its own query ids, used for held-out
/// measurements on purchase behaviour.
pub fn simulate_heldout_exposures(
    world: &World,
    n: usize,
    irrelevant_rate: f64,
    seed: u64,
) -> Result<ExposureLog> {
    exposures_with_base(world, n, irrelevant_rate, seed, id_base::HELDOUT_EXPOSURE)
}

/// Base purchase probability for a relevant exposure before gap reweighting.
pub const BASE_PURCHASE_RATE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PurchaseSimulation {
    pub log: PurchaseLog,
    /// Set when the gap-rate target could not be met or no purchase was possible.
    pub warning: Option<String>,
}

/// Purchases are drawn only from oracle-Relevant exposures. Exposures whose
/// query has an unmet non-essential assertion (absent from the product) are
/// reweighted so they make up `nonessential_gap_rate` of purchases.
pub fn simulate_purchases(
    world: &World,
    exposures: &ExposureLog,
    nonessential_gap_rate: f64,
    seed: u64,
) -> Result<PurchaseSimulation> {
    if exposures.entries.is_empty() {
        return Err(Error::Input("exposure log is empty".into()));
    }
    if !(0.0..=1.0).contains(&nonessential_gap_rate) {
        return Err(Error::Config(format!(
            "nonessential_gap_rate must lie in [0, 1], got {nonessential_gap_rate}"
        )));
    }
    let class: Vec<Option<bool>> = exposures
        .entries
        .iter()
        .map(|e| {
            let (label, reasons) = oracle_label(world, &e.query, &e.product)?;
            Ok(label
                .is_relevant()
                .then(|| has_nonessential_absence(&reasons)))
        })
        .collect::<Result<_>>()?;
    let n_gap = class.iter().filter(|c| **c == Some(true)).count() as f64;
    let n_clean = class.iter().filter(|c| **c == Some(false)).count() as f64;
    let mut warning = None;
    let rate = nonessential_gap_rate;
    let (p_gap, p_clean) = if n_gap + n_clean == 0.0 {
        warning = Some("no oracle-Relevant exposures; purchase log is empty".to_string());
        (0.0, 0.0)
    } else if n_gap == 0.0 {
        if rate > 0.0 {
            warning = Some("no gap-eligible exposures; gap-rate target unmet".to_string());
        }
        (0.0, BASE_PURCHASE_RATE)
    } else if n_clean == 0.0 {
        if rate < 1.0 {
            warning = Some("no gap-free exposures; gap-rate target unmet".to_string());
        }
        (BASE_PURCHASE_RATE, 0.0)
    } else {
        let total = match (rate > 0.0, rate < 1.0) {
            (true, true) => (n_gap / rate).min(n_clean / (1.0 - rate)),
            (true, false) => n_gap,
            (false, _) => n_clean,
        } * BASE_PURCHASE_RATE;
        (rate * total / n_gap, (1.0 - rate) * total / n_clean)
    };
    let entries = exposures
        .entries
        .iter()
        .zip(&class)
        .enumerate()
        .map(|(i, (e, c))| {
            let mut r = rng::entry_rng(seed, "purchase", i as u64);
            let p = match c {
                Some(true) => p_gap,
                Some(false) => p_clean,
                None => 0.0,
            };
            PurchaseEntry {
                query: e.query.clone(),
                product: e.product.clone(),
                purchased: r.gen_bool(p.clamp(0.0, 1.0)),
            }
        })
        .collect();
    Ok(PurchaseSimulation {
        log: PurchaseLog { entries },
        warning,
    })
}
