use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::types::{Assertion, Attribute, Kind, Product, Query};
use super::vocab::{tok, Vocab};
use crate::error::{Error, Result};
use crate::rng;

/// Probability that a query assertion of each kind is essential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EssentialityPolicy {
    pub category: f64,
    pub brand: f64,
    pub model: f64,
    pub audience: f64,
    pub spec: f64,
}

impl Default for EssentialityPolicy {
    fn default() -> Self {
        Self {
            category: 1.0,
            brand: 1.0,
            model: 1.0,
            audience: 0.5,
            spec: 0.3,
        }
    }
}

impl EssentialityPolicy {
    pub fn get(&self, kind: Kind) -> f64 {
        match kind {
            Kind::Category => self.category,
            Kind::Brand => self.brand,
            Kind::Model => self.model,
            Kind::Audience => self.audience,
            Kind::Spec => self.spec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub catalog_size: usize,
    pub categories: u32,
    pub brands: u32,
    pub models: u32,
    pub audiences: u32,
    pub specs: u32,
    pub essentiality: EssentialityPolicy,
    /// Probability a product carries a model number.
    pub model_rate: f64,
    /// Probability a product targets an audience.
    pub audience_rate: f64,
    /// Products carry between 0 and `max_specs` specs, uniformly.
    pub max_specs: u32,
    /// Queries carry a category plus up to this many other assertions (at most 3).
    pub max_query_extras: usize,
    /// Probability an audience/spec assertion's value is drawn independently
    /// of the product the query was derived from.
    pub off_product_rate: f64,
    /// Fraction of generated negatives drawn from the query's own category.
    pub hard_negative_rate: f64,
    pub relevant_fraction: f64,
    pub balance_tolerance: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            catalog_size: 1500,
            categories: 20,
            brands: 50,
            models: 30,
            audiences: 5,
            specs: 40,
            essentiality: EssentialityPolicy::default(),
            model_rate: 0.6,
            audience_rate: 0.4,
            max_specs: 2,
            max_query_extras: 3,
            off_product_rate: 0.5,
            hard_negative_rate: 0.8,
            relevant_fraction: 0.5,
            balance_tolerance: 0.05,
        }
    }
}

fn check_fraction(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {x}")))
    }
}

impl WorldConfig {
    pub fn sizes(&self) -> [u32; 5] {
        [
            self.categories,
            self.brands,
            self.models,
            self.audiences,
            self.specs,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.catalog_size == 0 {
            return Err(Error::Config("catalog_size must be positive".into()));
        }
        for kind in Kind::ALL {
            if self.sizes()[kind.index()] == 0 {
                return Err(Error::Config(format!(
                    "value table for {} is empty",
                    kind.name()
                )));
            }
            check_fraction(
                &format!("essentiality.{}", kind.name()),
                self.essentiality.get(kind),
            )?;
            if !kind.multi_valued() && self.essentiality.get(kind) != 1.0 {
                return Err(Error::Config(format!(
                    "essentiality.{} must be 1: only audience and spec assertions may be non-essential",
                    kind.name()
                )));
            }
        }
        if self.categories < 2 {
            return Err(Error::Config("at least two categories are required".into()));
        }
        if self.max_specs > self.specs {
            return Err(Error::Config("max_specs exceeds the spec table".into()));
        }
        if self.max_query_extras > 3 {
            return Err(Error::Config("max_query_extras must be at most 3".into()));
        }
        check_fraction("model_rate", self.model_rate)?;
        check_fraction("audience_rate", self.audience_rate)?;
        check_fraction("off_product_rate", self.off_product_rate)?;
        check_fraction("hard_negative_rate", self.hard_negative_rate)?;
        check_fraction("relevant_fraction", self.relevant_fraction)?;
        check_fraction("balance_tolerance", self.balance_tolerance)?;
        Ok(())
    }
}

/// Reproduction record for a world: the config and seed are sufficient to
/// regenerate it bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldManifest {
    pub seed: u64,
    pub config: WorldConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub config: WorldConfig,
    pub vocab: Vocab,
    pub catalog: Vec<Product>,
}

/// Generate the synthetic catalog. Each product draws from its own
/// `(seed, index)` stream.
pub fn gen_world(config: &WorldConfig, seed: u64) -> Result<World> {
    config.validate()?;
    let vocab = Vocab::new(config.sizes());
    let catalog = (0..config.catalog_size)
        .map(|i| {
            let mut r = rng::entry_rng(seed, "product", i as u64);
            let attrs = sample_product_attributes(config, &mut r);
            render_product(&vocab, i as u64, attrs)
        })
        .collect();
    Ok(World {
        seed,
        config: config.clone(),
        vocab,
        catalog,
    })
}

fn sample_product_attributes(config: &WorldConfig, r: &mut impl Rng) -> Vec<Attribute> {
    let mut attrs = vec![
        Attribute::new(Kind::Category, r.gen_range(0..config.categories)),
        Attribute::new(Kind::Brand, r.gen_range(0..config.brands)),
    ];
    if r.gen_bool(config.model_rate) {
        attrs.push(Attribute::new(Kind::Model, r.gen_range(0..config.models)));
    }
    if r.gen_bool(config.audience_rate) {
        attrs.push(Attribute::new(
            Kind::Audience,
            r.gen_range(0..config.audiences),
        ));
    }
    let n_specs = r.gen_range(0..=config.max_specs) as usize;
    for v in sample(r, config.specs as usize, n_specs) {
        attrs.push(Attribute::new(Kind::Spec, v as u32));
    }
    attrs
}

const TITLE_ORDER: [Kind; 5] = [
    Kind::Brand,
    Kind::Model,
    Kind::Category,
    Kind::Audience,
    Kind::Spec,
];
const QUERY_ORDER: [Kind; 5] = [
    Kind::Brand,
    Kind::Model,
    Kind::Audience,
    Kind::Spec,
    Kind::Category,
];

/// Build a product from an attribute set, sorting it canonically and
/// rendering the title template.
pub fn render_product(vocab: &Vocab, id: u64, mut attributes: Vec<Attribute>) -> Product {
    attributes.sort();
    attributes.dedup();
    let title_tokens = TITLE_ORDER
        .iter()
        .flat_map(|&k| attributes.iter().filter(move |a| a.kind == k))
        .map(|&a| vocab.value_token(a))
        .collect();
    Product {
        id,
        title_tokens,
        attributes,
    }
}

/// Build a query from assertions; non-essential assertions are preceded by
/// the `opt` marker so their status is visible to token-level models.
pub fn render_query(vocab: &Vocab, id: u64, mut assertions: Vec<Assertion>) -> Query {
    assertions.sort_by_key(|a| a.attribute);
    let mut tokens = Vec::with_capacity(assertions.len() * 2);
    for kind in QUERY_ORDER {
        for a in assertions.iter().filter(|a| a.attribute.kind == kind) {
            if !a.essential {
                tokens.push(tok::OPT);
            }
            tokens.push(vocab.value_token(a.attribute));
        }
    }
    Query {
        id,
        tokens,
        assertions,
    }
}

impl World {
    pub fn manifest(&self) -> WorldManifest {
        WorldManifest {
            seed: self.seed,
            config: self.config.clone(),
        }
    }

    pub fn from_manifest(m: &WorldManifest) -> Result<World> {
        gen_world(&m.config, m.seed)
    }

    pub fn value_count(&self, kind: Kind) -> u32 {
        self.vocab.size_of(kind)
    }

    pub fn value_names(&self, kind: Kind) -> Vec<String> {
        (0..self.value_count(kind))
            .map(|v| format!("{}_{}", kind.prefix(), v))
            .collect()
    }

    pub fn is_valid_attribute(&self, a: Attribute) -> bool {
        a.value < self.value_count(a.kind)
    }

    pub fn render_product(&self, id: u64, attributes: Vec<Attribute>) -> Product {
        render_product(&self.vocab, id, attributes)
    }

    pub fn render_query(&self, id: u64, assertions: Vec<Assertion>) -> Query {
        render_query(&self.vocab, id, assertions)
    }
}
