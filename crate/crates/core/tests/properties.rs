use std::sync::OnceLock;

use proptest::prelude::*;
use relevance_core::annotator::{parse_cot, render_cot, SimulatedAnnotator};
use relevance_core::classifier::FnClassifier;
use relevance_core::corpus::pairs::id_base;
use relevance_core::corpus::vocab::is_verdict_token;
use relevance_core::corpus::{
    gen_pairs, gen_world, judge_label, Assertion, Attribute, Kind, Label, LabeledPair, Product, Query, World,
    WorldConfig,
};
use relevance_core::distiller::{distill_loss, rewrite_cot, KEY_ATTR_CAP};
use relevance_core::evalkit::Metrics;
use relevance_core::synthesizer::{filter_candidates, select_confusing, synthesize, ErrorProfile};

fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| gen_world(&WorldConfig::default(), 11).unwrap())
}

fn pairs(seed: u64, n: usize) -> Vec<LabeledPair> {
    gen_pairs(world(), n, seed, id_base::TRAIN).unwrap()
}

fn attribute() -> impl Strategy<Value = Attribute> {
    (0..Kind::ALL.len(), 0u32..6).prop_map(|(k, v)| Attribute::new(Kind::ALL[k], v))
}

/// Independent restatement of the relevance rule.
fn brute_force(q: &Query, p: &Product) -> Label {
    for a in q.assertions.iter().filter(|a| a.essential) {
        if !p.attributes.iter().any(|b| *b == a.attribute) {
            return Label::Irrelevant;
        }
    }
    Label::Relevant
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_matches_brute_force(
        asserted in proptest::collection::vec((attribute(), any::<bool>()), 1..6),
        attrs in proptest::collection::vec(attribute(), 0..8),
    ) {
        let q = Query {
            id: 0,
            tokens: vec![],
            assertions: asserted.into_iter().map(|(attribute, essential)| Assertion { attribute, essential }).collect(),
        };
        let p = Product { id: 0, title_tokens: vec![], attributes: attrs };
        prop_assert_eq!(judge_label(&q, &p), brute_force(&q, &p));
    }

    #[test]
    fn cot_round_trips_through_tokens(seed in any::<u64>(), strictness in 0.0f64..=1.0) {
        for p in pairs(seed, 8) {
            let rec = render_cot(world(), &p.query, &p.product, strictness, seed).unwrap();
            prop_assert_eq!(parse_cot(&world().vocab, &rec.tokens).unwrap(), rec);
        }
    }

    #[test]
    fn rewrite_is_verdict_free_and_deterministic(seed in any::<u64>(), strictness in 0.0f64..=1.0) {
        for p in pairs(seed, 8) {
            let rec = render_cot(world(), &p.query, &p.product, strictness, seed).unwrap();
            let a = rewrite_cot(&rec).unwrap();
            prop_assert!(a.tokens.iter().all(|&t| !is_verdict_token(t)));
            prop_assert!(a.tokens.len() <= KEY_ATTR_CAP);
            prop_assert_eq!(a.tokens.len(), 2 * rec.comparisons.len());
            prop_assert_eq!(rewrite_cot(&rec).unwrap(), a);
        }
    }

    #[test]
    fn synthesized_pairs_are_sound_and_selection_is_idempotent(seed in any::<u64>(), mask in any::<u64>()) {
        let base = pairs(seed, 20);
        let synth = synthesize(world(), &base, &ErrorProfile::uniform(), 40, seed).unwrap();
        for s in &synth.pairs {
            prop_assert_eq!(judge_label(&s.pair.query, &s.pair.product), s.pair.label);
        }
        // Arbitrary but deterministic student.
        let student = FnClassifier(move |q: &Query, p: &Product| {
            Label::from_class_index((((q.id ^ p.id ^ mask) >> 3) & 1) as usize)
        });
        let once = select_confusing(&student, &synth.pairs).unwrap();
        prop_assert_eq!(select_confusing(&student, &once).unwrap(), once.clone());

        let annotator = SimulatedAnnotator { world: world(), strictness: 0.7, seed };
        let kept = filter_candidates(&annotator, &synth.pairs).unwrap();
        prop_assert_eq!(filter_candidates(&annotator, &kept).unwrap(), kept);
    }

    #[test]
    fn distill_loss_is_permutation_symmetric(
        hs in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..16),
        p in 0.01f64..0.99,
        relevant in any::<bool>(),
        alpha in 0.0f64..=1.0,
        rot in 0usize..16,
    ) {
        let (h, h_hat): (Vec<f64>, Vec<f64>) = hs.iter().copied().unzip();
        let y = if relevant { [0.0, 1.0] } else { [1.0, 0.0] };
        let y_hat = [1.0 - p, p];
        let a = distill_loss(&y, &y_hat, &h, &h_hat, alpha).unwrap();
        let mut h2 = h.clone();
        let mut h_hat2 = h_hat.clone();
        h2.rotate_left(rot % h.len());
        h_hat2.rotate_left(rot % h.len());
        h2.reverse();
        h_hat2.reverse();
        let b = distill_loss(&y, &y_hat, &h2, &h_hat2, alpha).unwrap();
        prop_assert!((a.loss - b.loss).abs() < 1e-12);
        prop_assert!(a.loss >= 0.0);
    }

    #[test]
    fn metrics_recount(outcomes in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..200)) {
        let lab = |r: bool| if r { Label::Relevant } else { Label::Irrelevant };
        let m = Metrics::from_predictions(outcomes.iter().map(|&(t, p)| (lab(p), lab(t))));
        let count = |t: bool, p: bool| outcomes.iter().filter(|&&o| o == (t, p)).count() as u64;
        prop_assert_eq!((m.tp, m.fp, m.fn_, m.tn), (count(true, true), count(false, true), count(true, false), count(false, false)));
        prop_assert_eq!(m.total(), outcomes.len() as u64);
        if m.tp + m.fp > 0 {
            prop_assert!((m.precision - m.tp as f64 / (m.tp + m.fp) as f64).abs() < 1e-12);
        }
        prop_assert!((0.0..=1.0).contains(&m.f1));
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
    }
}
