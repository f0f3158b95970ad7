use serde::{Deserialize, Serialize};

/// Attribute kinds. The set is closed; its order is the canonical order
/// used when sorting attribute sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Kind {
    Category,
    Brand,
    Model,
    Audience,
    Spec,
}

impl Kind {
    pub const ALL: [Kind; 5] = [
        Kind::Category,
        Kind::Brand,
        Kind::Model,
        Kind::Audience,
        Kind::Spec,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Category => "category",
            Kind::Brand => "brand",
            Kind::Model => "model",
            Kind::Audience => "audience",
            Kind::Spec => "spec",
        }
    }

    /// Token prefix for values of this kind (`cat_3`, `brand_5`, ...).
    pub fn prefix(self) -> &'static str {
        match self {
            Kind::Category => "cat",
            Kind::Brand => "brand",
            Kind::Model => "model",
            Kind::Audience => "aud",
            Kind::Spec => "spec",
        }
    }

    /// Kinds a product may carry more than once.
    pub fn multi_valued(self) -> bool {
        matches!(self, Kind::Audience | Kind::Spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Attribute {
    pub kind: Kind,
    pub value: u32,
}

impl Attribute {
    pub fn new(kind: Kind, value: u32) -> Self {
        Self { kind, value }
    }
}

/// One attribute a query asks for, and whether the user's intent hinges on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assertion {
    pub attribute: Attribute,
    pub essential: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Product {
    pub id: u64,
    pub title_tokens: Vec<u32>,
    /// Sorted in canonical `(kind, value)` order.
    pub attributes: Vec<Attribute>,
}

impl Product {
    pub fn values_of(&self, kind: Kind) -> impl Iterator<Item = u32> + '_ {
        self.attributes
            .iter()
            .filter(move |a| a.kind == kind)
            .map(|a| a.value)
    }

    pub fn has_kind(&self, kind: Kind) -> bool {
        self.attributes.iter().any(|a| a.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub id: u64,
    pub tokens: Vec<u32>,
    /// Sorted in canonical kind order; at most one assertion per kind.
    pub assertions: Vec<Assertion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Relevant,
    Irrelevant,
}

impl Label {
    pub fn is_relevant(self) -> bool {
        self == Label::Relevant
    }

    /// Class index used by classifier heads: 0 = Irrelevant, 1 = Relevant.
    pub fn class_index(self) -> usize {
        match self {
            Label::Irrelevant => 0,
            Label::Relevant => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Self {
        if i == 1 {
            Label::Relevant
        } else {
            Label::Irrelevant
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Oracle,
    RDMined,
    DSSynth,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub query: Query,
    pub product: Product,
    pub label: Label,
    pub source: Source,
}

/// Per-assertion result of matching a query against a product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Match,
    Mismatch,
    AbsentEssential,
    AbsentNonEssential,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureEntry {
    pub query: Query,
    pub product: Product,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureLog {
    pub entries: Vec<ExposureEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurchaseEntry {
    pub query: Query,
    pub product: Product,
    pub purchased: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurchaseLog {
    pub entries: Vec<PurchaseEntry>,
}

impl PurchaseLog {
    pub fn purchased(&self) -> impl Iterator<Item = &PurchaseEntry> {
        self.entries.iter().filter(|e| e.purchased)
    }
}
