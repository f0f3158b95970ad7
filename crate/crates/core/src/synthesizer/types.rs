use serde::{Deserialize, Serialize};

use crate::corpus::{Kind, Label, LabeledPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorKind {
    BrandSwap,
    ModelEdit,
    AudienceFlip,
    SpecChange,
    EssentialDrop,
    NonEssentialDrop,
    CategorySwap,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 7] = [
        ErrorKind::BrandSwap,
        ErrorKind::ModelEdit,
        ErrorKind::AudienceFlip,
        ErrorKind::SpecChange,
        ErrorKind::EssentialDrop,
        ErrorKind::NonEssentialDrop,
        ErrorKind::CategorySwap,
    ];

    /// Labels this kind of perturbation may target.
    pub fn targets(self) -> &'static [Label] {
        match self {
            ErrorKind::EssentialDrop | ErrorKind::CategorySwap => &[Label::Irrelevant],
            ErrorKind::NonEssentialDrop => &[Label::Relevant],
            _ => &[Label::Relevant, Label::Irrelevant],
        }
    }

    /// Attribute kind a swap-style perturbation rewrites.
    pub fn swap_kind(self) -> Option<Kind> {
        match self {
            ErrorKind::BrandSwap => Some(Kind::Brand),
            ErrorKind::ModelEdit => Some(Kind::Model),
            ErrorKind::AudienceFlip => Some(Kind::Audience),
            ErrorKind::SpecChange => Some(Kind::Spec),
            ErrorKind::CategorySwap => Some(Kind::Category),
            _ => None,
        }
    }

    pub fn for_swap(kind: Kind) -> ErrorKind {
        match kind {
            Kind::Category => ErrorKind::CategorySwap,
            Kind::Brand => ErrorKind::BrandSwap,
            Kind::Model => ErrorKind::ModelEdit,
            Kind::Audience => ErrorKind::AudienceFlip,
            Kind::Spec => ErrorKind::SpecChange,
        }
    }
}

/// A perturbation kind paired with the label it must produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ErrorType {
    pub kind: ErrorKind,
    pub target_label: Label,
}

impl ErrorType {
    pub fn new(kind: ErrorKind, target_label: Label) -> Result<Self> {
        if !kind.targets().contains(&target_label) {
            return Err(Error::Config(format!("{kind:?} cannot target {target_label:?}")));
        }
        Ok(Self { kind, target_label })
    }

    /// Every compatible (kind, target) combination, in canonical order.
    pub fn all() -> Vec<ErrorType> {
        ErrorKind::ALL
            .iter()
            .flat_map(|&kind| {
                kind.targets().iter().map(move |&target_label| ErrorType { kind, target_label })
            })
            .collect()
    }

    pub fn is_valid(&self) -> bool {
        self.kind.targets().contains(&self.target_label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub error_type: ErrorType,
    pub weight: f64,
}

/// Sampling weights over error types; stored in canonical type order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile {
    pub weights: Vec<ProfileEntry>,
}

impl ErrorProfile {
    pub fn uniform() -> Self {
        let all = ErrorType::all();
        let w = 1.0 / all.len() as f64;
        Self {
            weights: all
                .into_iter()
                .map(|error_type| ProfileEntry { error_type, weight: w })
                .collect(),
        }
    }

    /// Normalize raw non-negative weights.
    pub fn from_weights(raw: impl IntoIterator<Item = (ErrorType, f64)>) -> Result<Self> {
        let mut weights: Vec<ProfileEntry> = raw
            .into_iter()
            .map(|(error_type, weight)| ProfileEntry { error_type, weight })
            .collect();
        weights.sort_by_key(|e| e.error_type);
        let mut profile = Self { weights };
        profile.validate()?;
        let total: f64 = profile.weights.iter().map(|e| e.weight).sum();
        for e in &mut profile.weights {
            e.weight /= total;
        }
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|e| !e.error_type.is_valid()) {
            return Err(Error::Config("profile holds an incompatible error type".into()));
        }
        if self.weights.iter().any(|e| !(e.weight >= 0.0 && e.weight.is_finite())) {
            return Err(Error::Config("profile weights must be finite and non-negative".into()));
        }
        if !self.weights.iter().any(|e| e.weight > 0.0) {
            return Err(Error::Config("profile needs at least one positive weight".into()));
        }
        Ok(())
    }

    pub fn weight(&self, t: ErrorType) -> f64 {
        self.weights
            .iter()
            .find(|e| e.error_type == t)
            .map_or(0.0, |e| e.weight)
    }
}

/// A synthesized pair with the perturbation that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthPair {
    #[serde(flatten)]
    pub pair: LabeledPair,
    pub error_type: ErrorType,
}
