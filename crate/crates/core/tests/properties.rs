mod common;

use common::brute_knn;
use kgrefine::index::{IndexMode, IvfParams, Payload, ReferenceIndex, ReferencePoint};
use kgrefine::sampler::compute_close_relations;
use kgrefine::store::{EntityId, KgStore, Label, RelationId, Split, StoreBuilder};
use proptest::prelude::*;

fn points_from(raw: &[(Vec<i8>, u8)]) -> Vec<ReferencePoint> {
    raw.iter()
        .enumerate()
        .map(|(i, (v, head))| ReferencePoint {
            vector: v.iter().map(|&x| x as f32 * 0.5).collect(),
            payload: Payload {
                relation: RelationId(u32::from(*head % 3)),
                head: EntityId(u32::from(*head)),
                source_fact: i as u32,
            },
        })
        .collect()
}

fn store_from(rows: &[(u8, u8, u8, u8)]) -> KgStore {
    let mut b = StoreBuilder::new();
    b.push(Split::Train, "e0", "r0", "e1", None);
    for &(h, r, t, s) in rows {
        let (h, r, t) = (format!("e{h}"), format!("r{r}"), format!("e{t}"));
        match s % 4 {
            0 | 1 => b.push(Split::Train, &h, &r, &t, None),
            2 => b.push(Split::Valid, &h, &r, &t, Some(Label::Positive)),
            _ => b.push(Split::Test, &h, &r, &t, Some(Label::Negative)),
        };
    }
    b.build().unwrap()
}

fn row() -> impl Strategy<Value = (u8, u8, u8, u8)> {
    (0u8..12, 0u8..5, 0u8..12, any::<u8>())
}

proptest! {
    #[test]
    fn exact_knn_is_brute_force(
        raw in prop::collection::vec((prop::collection::vec(-4i8..4, 3), 0u8..6), 1..80),
        q in prop::collection::vec(-4i8..4, 3),
        k in 1usize..20,
        head in prop::option::of(0u8..6),
    ) {
        let points = points_from(&raw);
        let vectors: Vec<Vec<f32>> = points.iter().map(|p| p.vector.clone()).collect();
        let heads: Vec<EntityId> = points.iter().map(|p| p.payload.head).collect();
        let index = ReferenceIndex::build(points, IndexMode::Exact, IvfParams::default(), 0).unwrap();
        let q: Vec<f32> = q.iter().map(|&x| x as f32 * 0.5).collect();
        let got = match head {
            Some(h) => index.knn(&q, k, Some(&|p: &Payload| p.head == EntityId(u32::from(h)))).unwrap(),
            None => index.knn(&q, k, None).unwrap(),
        };
        let want = brute_knn(&vectors, &q, k, |i| head.is_none_or(|h| heads[i] == EntityId(u32::from(h))));
        prop_assert_eq!(got.iter().map(|n| n.index).collect::<Vec<_>>(), want.iter().map(|w| w.0).collect::<Vec<_>>());
        // square roots preserve the order of squared distances
        prop_assert!(got.windows(2).all(|w| w[0].distance <= w[1].distance));
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g.distance - w.1.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn ivf_lists_partition_points(
        raw in prop::collection::vec((prop::collection::vec(-4i8..4, 2), 0u8..6), 8..120),
        n_lists in 1usize..8,
        seed in any::<u64>(),
    ) {
        let n = raw.len();
        let ivf = IvfParams { n_lists, n_probe: n_lists, ..IvfParams::default() };
        let index = ReferenceIndex::build(points_from(&raw), IndexMode::Ivf, ivf, seed).unwrap();
        let mut seen: Vec<u32> = index.lists().iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n as u32).collect::<Vec<_>>());
        prop_assert_eq!(index.lists().len(), n_lists);
    }

    #[test]
    fn store_round_trip(rows in prop::collection::vec(row(), 0..60), hash in any::<u64>()) {
        let store = store_from(&rows);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.bin");
        store.save(&path, hash).unwrap();
        let (back, h) = KgStore::load(&path).unwrap();
        prop_assert_eq!(h, hash);
        prop_assert_eq!(back.counts(), store.counts());
        prop_assert_eq!(back.train(), store.train());
        prop_assert_eq!(back.valid(), store.valid());
        prop_assert_eq!(back.test(), store.test());
        prop_assert_eq!(back.relations().labels(), store.relations().labels());
    }

    #[test]
    fn close_table_shrinks_with_threshold(rows in prop::collection::vec(row(), 1..60), lo in 0.0f64..100.0, hi in 0.0f64..100.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let store = store_from(&rows);
        let a = compute_close_relations(&store, lo).unwrap();
        let b = compute_close_relations(&store, hi).unwrap();
        for r in 0..store.num_relations() as u32 {
            let r = RelationId(r);
            for m in b.close(r) {
                prop_assert!(a.is_close(r, m.relation));
                prop_assert!(m.relation != r);
            }
        }
    }

    #[test]
    fn few_shot_slices_grow_with_threshold(rows in prop::collection::vec(row(), 1..60), n in 0usize..20) {
        let store = store_from(&rows);
        let a = store.few_shot_relations(n);
        let b = store.few_shot_relations(n + 1);
        prop_assert!(a.relations.iter().all(|r| b.relations.contains(r)));
        prop_assert!(a.instance_fraction <= b.instance_fraction);
        prop_assert!(a.relation_fraction <= b.relation_fraction);
    }
}
