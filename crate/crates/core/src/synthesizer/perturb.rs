//! Structural perturbations: mutate product attributes, re-render, and
//! accept only when the oracle agrees with the intended label.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::types::{ErrorKind, ErrorType, SynthPair};
use crate::corpus::oracle::oracle_label;
use crate::corpus::{id_base, Attribute, Kind, LabeledPair, Source, World};
use crate::error::Result;
use crate::rng::{entry_rng, Rng};

/// Why a perturbation produced nothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection(pub String);

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn other_value(world: &World, kind: Kind, avoid: &[u32], rng: &mut Rng) -> Option<u32> {
    let n = world.value_count(kind);
    let free: Vec<u32> = (0..n).filter(|v| !avoid.contains(v)).collect();
    free.choose(rng).copied()
}

fn set_kind(attrs: &mut Vec<Attribute>, kind: Kind, values: &[u32]) {
    attrs.retain(|a| a.kind != kind);
    attrs.extend(values.iter().map(|&v| Attribute::new(kind, v)));
}

/// Apply `etype` to the product of `pair`. The query is never altered, so
/// the output stays tied to a real query.
pub fn perturb(
    world: &World,
    pair: &LabeledPair,
    etype: ErrorType,
    seed: u64,
) -> Result<std::result::Result<SynthPair, Rejection>> {
    let reject = |msg: &str| Ok(Err(Rejection(format!("{:?}: {msg}", etype.kind))));
    if !etype.is_valid() {
        return reject("incompatible target label");
    }
    let mut rng = entry_rng(seed, "perturb", 0);
    let q = &pair.query;
    let mut attrs = pair.product.attributes.clone();
    let asserted = |kind: Kind| q.assertions.iter().find(|a| a.attribute.kind == kind);
    let relevant = etype.target_label.is_relevant();
    match etype.kind {
        ErrorKind::EssentialDrop => {
            let droppable: Vec<Attribute> = q
                .assertions
                .iter()
                .filter(|a| a.essential && !matches!(a.attribute.kind, Kind::Category | Kind::Brand))
                .map(|a| a.attribute)
                .filter(|a| attrs.contains(a))
                .collect();
            let Some(&target) = droppable.choose(&mut rng) else {
                return reject("no essential droppable attribute");
            };
            attrs.retain(|a| a.kind != target.kind);
        }
        ErrorKind::NonEssentialDrop => {
            let droppable: Vec<Attribute> = q
                .assertions
                .iter()
                .filter(|a| !a.essential)
                .map(|a| a.attribute)
                .filter(|a| attrs.contains(a))
                .collect();
            let Some(&target) = droppable.choose(&mut rng) else {
                return reject("no non-essential attribute present on the product");
            };
            attrs.retain(|a| a.kind != target.kind);
        }
        kind => {
            let k = kind.swap_kind().expect("swap-style kind");
            let current: Vec<u32> = attrs.iter().filter(|a| a.kind == k).map(|a| a.value).collect();
            let wanted = asserted(k).map(|a| a.attribute.value);
            let new_value = match (relevant, wanted) {
                (true, Some(v)) if !current.contains(&v) => Some(v),
                (false, Some(v)) => other_value(world, k, &[v], &mut rng),
                _ => other_value(world, k, &current, &mut rng),
            };
            let Some(v) = new_value else {
                return reject("no alternative value");
            };
            if k.multi_valued() && relevant && rng.gen_bool(0.5) {
                let mut vals = current;
                vals.push(v);
                set_kind(&mut attrs, k, &vals);
            } else {
                set_kind(&mut attrs, k, &[v]);
            }
        }
    }
    let product = world.render_product(id_base::SYNTH_PRODUCT + (seed & 0xFFFF_FFFF), attrs);
    if product.attributes == pair.product.attributes {
        return reject("perturbation left the product unchanged");
    }
    let (label, _) = oracle_label(world, q, &product)?;
    if label != etype.target_label {
        return reject("oracle label differs from the target");
    }
    Ok(Ok(SynthPair {
        pair: LabeledPair {
            query: q.clone(),
            product,
            label,
            source: Source::DSSynth,
        },
        error_type: etype,
    }))
}
