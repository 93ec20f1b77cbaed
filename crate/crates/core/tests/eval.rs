mod common;

use common::oracle_rank;
use kgrefine::encoder::{EncoderConfig, EncoderParams};
use kgrefine::eval::{self, Aggregated, ColdStartPolicy, ClassifierConfig, Embedder, RelationPredictorConfig, Strategy};
use kgrefine::index::{IndexMode, IvfParams, Payload};
use kgrefine::sampler::{self, SamplerConfig};
use kgrefine::store::{EntityId, KgStore, Label, RelationId, Split, StoreBuilder, Triple};
use kgrefine::text::{PfKind, TextOptions, TokenVocab};
use proptest::prelude::*;

fn store_30() -> KgStore {
    let mut b = StoreBuilder::new();
    let rows = [
        ("a", "p", "b"),
        ("a", "q", "b"),
        ("a", "p", "c"),
        ("b", "r", "c"),
        ("b", "p", "d"),
        ("c", "q", "d"),
        ("c", "s", "a"),
        ("d", "r", "a"),
        ("d", "s", "b"),
        ("e", "p", "a"),
        ("e", "q", "c"),
        ("e", "r", "d"),
        ("f", "s", "e"),
        ("f", "p", "e"),
        ("f", "q", "a"),
        ("a", "r", "e"),
        ("b", "s", "f"),
        ("c", "p", "f"),
        ("d", "q", "f"),
        ("e", "s", "f"),
        ("f", "r", "b"),
        ("a", "s", "d"),
        ("b", "q", "e"),
        ("c", "r", "b"),
    ];
    for (h, r, t) in rows {
        b.push(Split::Train, h, r, t, None);
    }
    for (h, r, t) in [("a", "r", "b"), ("b", "q", "c"), ("d", "p", "e"), ("e", "q", "b"), ("f", "s", "c"), ("c", "s", "d")] {
        b.push(Split::Test, h, r, t, Some(Label::Positive));
    }
    b.build().unwrap()
}

fn known_by_scan(store: &KgStore, t: Triple) -> bool {
    store.train().contains(&t)
        || [store.valid(), store.test()]
            .into_iter()
            .flatten()
            .any(|lt| lt.triple == t && lt.label != Some(Label::Negative))
}

#[test]
fn synthetic_run_matches_oracle_metrics() {
    let store = store_30();
    let text = TextOptions::default();
    let vocab = TokenVocab::from_train(&store, &text);
    let params = EncoderParams::init(EncoderConfig {
        init_seed: 3,
        ..EncoderConfig::bag(vocab.size(), 6)
    })
    .unwrap();
    let emb = Embedder {
        params: &params,
        vocab: &vocab,
        text: &text,
        store: &store,
    };
    let examples = sampler::sample(&store, &SamplerConfig::default(), None, 2).unwrap();
    let index = eval::build_reference_index(&emb, &examples, IndexMode::Exact, IvfParams::default(), 0).unwrap();
    let vectors: Vec<Vec<f32>> = (0..index.len()).map(|i| index.vector(i).to_vec()).collect();
    for strategy in [Strategy::Min, Strategy::KMode] {
        let cfg = RelationPredictorConfig {
            strategy,
            k: 5,
            filtered: true,
        };
        let got = eval::evaluate_relation_prediction(store.test(), &emb, &index, &cfg).unwrap();
        let ranks: Vec<usize> = store
            .test()
            .iter()
            .map(|lt| {
                let t = lt.triple;
                let q = emb.embed(t, PfKind::Ht).unwrap();
                let nb: Vec<u32> = common::brute_knn(&vectors, &q, 5, |_| true)
                    .iter()
                    .map(|&(i, _)| index.payload(i).relation.0)
                    .collect();
                oracle_rank(&nb, store.num_relations() as u32, t.relation.0, strategy == Strategy::KMode, |r| {
                    known_by_scan(&store, Triple::new(t.head, RelationId(r), t.tail))
                })
            })
            .collect();
        let mr = ranks.iter().sum::<usize>() as f64 / ranks.len() as f64;
        let hits = ranks.iter().filter(|&&r| r == 1).count() as f64 / ranks.len() as f64;
        assert_eq!(got.examples.iter().map(|e| e.rank).collect::<Vec<_>>(), ranks);
        assert_eq!((got.mean_rank, got.hits_at_1), (mr, hits));
    }
}

#[test]
fn min_with_full_k_is_global_argmin() {
    let store = store_30();
    let text = TextOptions::default();
    let vocab = TokenVocab::from_train(&store, &text);
    let params = EncoderParams::init(EncoderConfig::bag(vocab.size(), 4)).unwrap();
    let emb = Embedder {
        params: &params,
        vocab: &vocab,
        text: &text,
        store: &store,
    };
    let examples = sampler::sample(&store, &SamplerConfig::default(), None, 2).unwrap();
    let index = eval::build_reference_index(&emb, &examples, IndexMode::Exact, IvfParams::default(), 0).unwrap();
    let cfg = RelationPredictorConfig {
        strategy: Strategy::Min,
        k: index.len(),
        filtered: false,
    };
    for lt in store.test() {
        let t = lt.triple;
        let q = emb.embed(t, PfKind::Ht).unwrap();
        let nearest = (0..index.len())
            .map(|i| (kgrefine::index::squared_l2(index.vector(i), &q), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .unwrap()
            .1;
        let ranking = eval::predict_relation(t.head, t.tail, None, &emb, &index, &cfg).unwrap();
        assert_eq!(ranking.ranked[0], index.payload(nearest).relation);
    }
}

#[test]
fn cold_start_policies() {
    let mut b = StoreBuilder::new();
    b.push(Split::Train, "a", "p", "b", None);
    b.push(Split::Train, "a", "q", "c", None);
    b.push(Split::Train, "b", "p", "c", None);
    b.push(Split::Test, "z", "p", "b", Some(Label::Positive));
    let store = b.build().unwrap();
    let text = TextOptions::default();
    let vocab = TokenVocab::from_train(&store, &text);
    let params = EncoderParams::init(EncoderConfig::bag(vocab.size(), 4)).unwrap();
    let emb = Embedder {
        params: &params,
        vocab: &vocab,
        text: &text,
        store: &store,
    };
    let cfg = SamplerConfig {
        regime: sampler::Regime::Entity,
        ..SamplerConfig::default()
    };
    let examples = sampler::sample(&store, &cfg, None, 1).unwrap();
    let index = eval::build_reference_index(&emb, &examples, IndexMode::Exact, IvfParams::default(), 0).unwrap();
    let z = store.test()[0].triple;
    assert!(index.payloads().iter().all(|p| p.head != z.head));

    let mut counters = Default::default();
    let neg = ClassifierConfig {
        sigma: Some(1e9),
        cold_start: ColdStartPolicy::PredictNegative,
        ..ClassifierConfig::default()
    };
    assert_eq!(eval::classify(z, &emb, &index, &neg, &mut counters).unwrap(), Label::Negative);
    assert_eq!(counters.cold_start, 1);
    let global = ClassifierConfig {
        cold_start: ColdStartPolicy::GlobalFallback,
        ..neg
    };
    assert_eq!(eval::classify(z, &emb, &index, &global, &mut counters).unwrap(), Label::Positive);
    assert_eq!(counters.cold_start, 2);

    let untuned = ClassifierConfig::default();
    assert!(eval::classify(z, &emb, &index, &untuned, &mut counters).is_err());
}

#[test]
fn few_shot_full_threshold_equals_overall() {
    let store = store_30();
    let ex: Vec<eval::RankedExample> = store
        .test()
        .iter()
        .enumerate()
        .map(|(i, lt)| eval::RankedExample {
            triple: lt.triple,
            rank: 1 + i % 3,
        })
        .collect();
    let overall = eval::summarize_ranks(&ex).unwrap();
    let rep = eval::few_shot_report(&ex, &store, &[0, 1000]);
    assert_eq!(rep[0].hits_at_1, None);
    assert_eq!(rep[1].hits_at_1, Some(overall.1));
    assert_eq!(rep[1].test_examples, ex.len());
}

fn payloads(rels: &[u32]) -> Vec<Payload> {
    rels.iter()
        .map(|&r| Payload {
            relation: RelationId(r),
            head: EntityId(0),
            source_fact: 0,
        })
        .collect()
}

proptest! {
    #[test]
    fn sigma_matches_sweep(scored in prop::collection::vec((0u32..40, any::<bool>()), 50)) {
        let data: Vec<(Option<f64>, Label)> = scored
            .iter()
            .map(|&(d, pos)| (Some(d as f64 * 0.25), if pos { Label::Positive } else { Label::Negative }))
            .collect();
        prop_assume!(data.iter().any(|d| d.1 == Label::Positive) && data.iter().any(|d| d.1 == Label::Negative));
        let fit = eval::tune_sigma(&data).unwrap();
        let acc = |sigma: f64| {
            data.iter()
                .filter(|(d, l)| (d.unwrap() < sigma) == (*l == Label::Positive))
                .count() as f64 / data.len() as f64
        };
        // thresholds just above each value, plus one below everything
        let mut best = acc(-1.0);
        for (d, _) in &data {
            best = best.max(acc(d.unwrap() + 1e-9));
        }
        prop_assert_eq!(fit.accuracy, best);
        prop_assert_eq!(acc(fit.sigma), best);
        prop_assert!(fit.sigma.is_finite() && fit.sigma >= 0.0);
    }

    #[test]
    fn min_classification_monotone_in_sigma(d in 0.0f64..10.0, s1 in 0.0f64..10.0, s2 in 0.0f64..10.0) {
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        let a = Aggregated { value: Some(d), cold_start: false };
        if eval::predict_label(&a, lo) == Label::Positive {
            prop_assert_eq!(eval::predict_label(&a, hi), Label::Positive);
        }
    }

    #[test]
    fn filtering_keeps_gold_and_never_hurts(
        nb in prop::collection::vec(0u32..4, 1..12),
        pair in 0usize..6,
        gold in 0u32..4,
        k_mode in any::<bool>(),
    ) {
        let store = store_30();
        let (h, t) = [("a", "b"), ("b", "c"), ("c", "d"), ("d", "a"), ("e", "f"), ("a", "d")][pair];
        let (h, t) = (store.entity_id(h).unwrap(), store.entity_id(t).unwrap());
        let strategy = if k_mode { Strategy::KMode } else { Strategy::Min };
        let p = payloads(&nb);
        let gold = RelationId(gold);
        let f = eval::rank_relations(&p, strategy, &store, h, t, Some(gold), true);
        let u = eval::rank_relations(&p, strategy, &store, h, t, Some(gold), false);
        prop_assert!(f.gold_rank.unwrap() <= u.gold_rank.unwrap());
        if nb.contains(&gold.0) {
            prop_assert!(f.ranked.contains(&gold));
        }
        let want = oracle_rank(&nb, store.num_relations() as u32, gold.0, k_mode, |r| {
            known_by_scan(&store, Triple::new(h, RelationId(r), t))
        });
        prop_assert_eq!(f.gold_rank.unwrap(), want);
    }

    #[test]
    fn k_mode_at_one_is_min_at_one(nb in prop::collection::vec(0u32..4, 1..8)) {
        let store = store_30();
        let p = payloads(&nb[..1]);
        let (h, t) = (EntityId(0), EntityId(1));
        let a = eval::rank_relations(&p, Strategy::KMode, &store, h, t, None, false);
        let b = eval::rank_relations(&p, Strategy::Min, &store, h, t, None, false);
        prop_assert_eq!(a, b);
    }
}
