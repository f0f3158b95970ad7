//! Synthetic e-commerce world: catalog, queries, logs and the ground-truth
//! relevance oracle.

pub mod io;
pub mod oracle;
pub mod pairs;
pub mod types;
pub mod vocab;
pub mod world;

pub use oracle::{judge, judge_label, oracle_label, Comparison};
pub use pairs::{
    gen_pairs, gen_splits, id_base, sample_pair, simulate_exposures, simulate_heldout_exposures,
    simulate_purchases, PurchaseSimulation, SplitSizes, Splits,
};
pub use types::*;
pub use vocab::{tok, Vocab};
pub use world::{gen_world, EssentialityPolicy, World, WorldConfig, WorldManifest};
