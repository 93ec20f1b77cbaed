//! Triplet generation for the two clustering regimes.
//!
//! * Relation regime: anchor and positive are head+tail partial facts of two
//!   facts sharing a relation `r`; the negative comes from a relation in
//!   `close_r`, the relations whose head or tail entities overlap most with
//!   those of `r`.
//! * Entity regime: anchor and positive are facts sharing a head `h`; the
//!   negative is a fact `(h_j, r, t_j)` of the anchor's relation such that
//!   `(h, r, t_j)` is not a known fact, i.e. an entity of plausibly the same
//!   type as `h` that differs from it on that relation.
//!
//! Every anchor draws from its own RNG, seeded from the root seed and the
//! anchor index, so generation is parallel and independent of worker count.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::store::{KgStore, RelationId, Triple};
use crate::text::{make_partial_fact, PfKind, TextOptions};

pub const DEFAULT_THRESHOLD_PCT: f64 = 30.0;
pub const DEFAULT_HRT_PROB: f64 = 0.3;
pub const DEFAULT_N_PER_ANCHOR: usize = 5;

/// Rejection attempts before the entity-regime negative falls back to an
/// exhaustive scan of `F_r`.
const REJECTION_TRIES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Regime {
    Relation,
    Entity,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Relation => "relation",
            Regime::Entity => "entity",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relation" => Ok(Regime::Relation),
            "entity" => Ok(Regime::Entity),
            _ => Err(Error::InvalidConfig(format!("unknown regime `{s}`"))),
        }
    }
}

/// A training fact rendered as a partial fact of the given kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FactRef {
    /// Index into the store's train split.
    pub fact: u32,
    pub triple: Triple,
    pub kind: PfKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletExample {
    pub anchor: FactRef,
    pub positive: FactRef,
    pub negative: FactRef,
    pub regime: Regime,
    /// Positive reuses the anchor fact because it had no sibling.
    pub singleton_positive: bool,
    /// Negative came from the fallback pool.
    pub fallback_negative: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SampleStats {
    pub examples: usize,
    pub singleton_positive: usize,
    pub fallback_negative: usize,
}

impl SampleStats {
    pub fn of(examples: &[TripletExample]) -> Self {
        Self {
            examples: examples.len(),
            singleton_positive: examples.iter().filter(|e| e.singleton_positive).count(),
            fallback_negative: examples.iter().filter(|e| e.fallback_negative).count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CloseMember {
    pub relation: RelationId,
    pub head_overlap_pct: f64,
    pub tail_overlap_pct: f64,
}

/// `close_r` for every relation `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct CloseRelationTable {
    pub threshold_pct: f64,
    members: Vec<Vec<CloseMember>>,
}

impl CloseRelationTable {
    pub fn close(&self, r: RelationId) -> &[CloseMember] {
        self.members.get(r.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_close(&self, r: RelationId, other: RelationId) -> bool {
        self.close(r).iter().any(|m| m.relation == other)
    }

    pub fn num_relations(&self) -> usize {
        self.members.len()
    }
}

/// Head/tail overlap percentages between every ordered pair of relations,
/// thresholded on the larger of the two.
pub fn compute_close_relations(store: &KgStore, threshold_pct: f64) -> Result<CloseRelationTable> {
    if !(0.0..=100.0).contains(&threshold_pct) {
        return Err(Error::InvalidConfig(format!(
            "threshold_pct must be within [0, 100], got {threshold_pct}"
        )));
    }
    let n_rel = store.num_relations();
    let n_ent = store.num_entities();
    // relations in which each entity occurs as head / as tail, deduplicated
    let mut as_head: Vec<Vec<u32>> = vec![Vec::new(); n_ent];
    let mut as_tail: Vec<Vec<u32>> = vec![Vec::new(); n_ent];
    for t in store.train() {
        as_head[t.head.index()].push(t.relation.0);
        as_tail[t.tail.index()].push(t.relation.0);
    }
    let mut head_count = vec![0u32; n_rel];
    let mut tail_count = vec![0u32; n_rel];
    let mut head_shared = vec![0u32; n_rel * n_rel];
    let mut tail_shared = vec![0u32; n_rel * n_rel];
    for (lists, count, shared) in [
        (&mut as_head, &mut head_count, &mut head_shared),
        (&mut as_tail, &mut tail_count, &mut tail_shared),
    ] {
        for rels in lists.iter_mut() {
            rels.sort_unstable();
            rels.dedup();
            for &a in rels.iter() {
                count[a as usize] += 1;
                for &b in rels.iter() {
                    shared[a as usize * n_rel + b as usize] += 1;
                }
            }
        }
    }
    let pct = |shared: u32, total: u32| {
        if total == 0 {
            0.0
        } else {
            100.0 * shared as f64 / total as f64
        }
    };
    let members = (0..n_rel)
        .map(|r| {
            (0..n_rel)
                .filter(|&o| o != r)
                .filter_map(|o| {
                    let head_overlap_pct = pct(head_shared[r * n_rel + o], head_count[r]);
                    let tail_overlap_pct = pct(tail_shared[r * n_rel + o], tail_count[r]);
                    (head_overlap_pct.max(tail_overlap_pct) >= threshold_pct).then_some(
                        CloseMember {
                            relation: RelationId(o as u32),
                            head_overlap_pct,
                            tail_overlap_pct,
                        },
                    )
                })
                .collect()
        })
        .collect();
    Ok(CloseRelationTable { threshold_pct, members })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for `(root, stream, index)`.
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ stream) ^ index)
}

fn anchor_rng(seed: u64, anchor: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5a4d, anchor as u64))
}

/// Uniform draw from a sorted list excluding `skip`, which must be present.
fn draw_excluding(rng: &mut ChaCha8Rng, list: &[u32], skip: u32) -> u32 {
    let pos = list.binary_search(&skip).expect("anchor fact missing from its own index");
    let mut k = rng.gen_range(0..list.len() - 1);
    if k >= pos {
        k += 1;
    }
    list[k]
}

fn fact_ref(store: &KgStore, fact: u32, kind: PfKind) -> FactRef {
    FactRef {
        fact,
        triple: store.train()[fact as usize],
        kind,
    }
}

/// Relation-regime examples: `n_per_anchor` per training fact.
pub fn sample_relation_triplets(
    store: &KgStore,
    table: &CloseRelationTable,
    n_per_anchor: usize,
    seed: u64,
) -> Result<Vec<TripletExample>> {
    let train = store.train();
    let n_rel = store.num_relations();
    // cumulative fact counts over close_r for weighted-by-size relation choice
    let pools: Vec<(Vec<u64>, Vec<RelationId>)> = (0..n_rel)
        .map(|r| {
            let mut cum = Vec::new();
            let mut rels = Vec::new();
            let mut acc = 0u64;
            for m in table.close(RelationId(r as u32)) {
                let n = store.facts_with_relation(m.relation).len() as u64;
                if n > 0 {
                    acc += n;
                    cum.push(acc);
                    rels.push(m.relation);
                }
            }
            (cum, rels)
        })
        .collect();

    for t in train {
        if store.facts_with_relation(t.relation).len() == train.len() {
            return Err(Error::NoNegativeCandidates(store.relation_label(t.relation).to_string()));
        }
    }

    let per_anchor: Vec<Vec<TripletExample>> = (0..train.len())
        .into_par_iter()
        .map(|i| {
            let anchor = train[i];
            let r = anchor.relation;
            let same = store.facts_with_relation(r);
            let (cum, rels) = &pools[r.index()];
            let mut rng = anchor_rng(seed, i);
            (0..n_per_anchor)
                .map(|_| {
                    let singleton = same.len() == 1;
                    let pos = if singleton {
                        i as u32
                    } else {
                        draw_excluding(&mut rng, same, i as u32)
                    };
                    let (neg, fallback) = if let Some(&total) = cum.last() {
                        let u = rng.gen_range(0..total);
                        let slot = cum.partition_point(|&c| c <= u);
                        let base = if slot == 0 { 0 } else { cum[slot - 1] };
                        let facts = store.facts_with_relation(rels[slot]);
                        (facts[(u - base) as usize], false)
                    } else {
                        loop {
                            let j = rng.gen_range(0..train.len());
                            if train[j].relation != r {
                                break (j as u32, true);
                            }
                        }
                    };
                    TripletExample {
                        anchor: fact_ref(store, i as u32, PfKind::Ht),
                        positive: fact_ref(store, pos, PfKind::Ht),
                        negative: fact_ref(store, neg, PfKind::Ht),
                        regime: Regime::Relation,
                        singleton_positive: singleton,
                        fallback_negative: fallback,
                    }
                })
                .collect()
        })
        .collect();
    Ok(per_anchor.into_iter().flatten().collect())
}

/// Entity-regime examples: `n_per_anchor` per training fact, with HRT
/// anchors drawn with probability `hrt_prob` and RT otherwise.
pub fn sample_entity_triplets(
    store: &KgStore,
    hrt_prob: f64,
    n_per_anchor: usize,
    seed: u64,
) -> Result<Vec<TripletExample>> {
    if !(0.0..=1.0).contains(&hrt_prob) {
        return Err(Error::InvalidConfig(format!("hrt_prob must be within [0, 1], got {hrt_prob}")));
    }
    let train = store.train();
    for t in train {
        if store.facts_with_head(t.head).len() == train.len() {
            return Err(Error::NoNegativeCandidates(store.relation_label(t.relation).to_string()));
        }
    }
    let qualifies = |h, cand: &Triple| {
        cand.head != h && !store.is_known(&Triple::new(h, cand.relation, cand.tail))
    };

    let per_anchor: Vec<Vec<TripletExample>> = (0..train.len())
        .into_par_iter()
        .map(|i| {
            let anchor = train[i];
            let h = anchor.head;
            let siblings = store.facts_with_head(h);
            let same_rel = store.facts_with_relation(anchor.relation);
            let mut rng = anchor_rng(seed, i);
            let mut exhaustive: Option<Vec<u32>> = None;
            (0..n_per_anchor)
                .map(|_| {
                    let kind = if rng.gen::<f64>() < hrt_prob { PfKind::Hrt } else { PfKind::Rt };
                    let singleton = siblings.len() == 1;
                    let pos = if singleton {
                        i as u32
                    } else {
                        draw_excluding(&mut rng, siblings, i as u32)
                    };
                    let mut neg = None;
                    if exhaustive.is_none() {
                        for _ in 0..REJECTION_TRIES {
                            let j = same_rel[rng.gen_range(0..same_rel.len())];
                            if qualifies(h, &train[j as usize]) {
                                neg = Some(j);
                                break;
                            }
                        }
                    }
                    if neg.is_none() {
                        let pool = exhaustive.get_or_insert_with(|| {
                            same_rel
                                .iter()
                                .copied()
                                .filter(|&j| qualifies(h, &train[j as usize]))
                                .collect()
                        });
                        if !pool.is_empty() {
                            neg = Some(pool[rng.gen_range(0..pool.len())]);
                        }
                    }
                    let (neg, fallback) = match neg {
                        Some(j) => (j, false),
                        None => loop {
                            let j = rng.gen_range(0..train.len());
                            if train[j].head != h {
                                break (j as u32, true);
                            }
                        },
                    };
                    TripletExample {
                        anchor: fact_ref(store, i as u32, kind),
                        positive: fact_ref(store, pos, kind),
                        negative: fact_ref(store, neg, kind),
                        regime: Regime::Entity,
                        singleton_positive: singleton,
                        fallback_negative: fallback,
                    }
                })
                .collect()
        })
        .collect();
    Ok(per_anchor.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub regime: Regime,
    pub n_per_anchor: usize,
    pub threshold_pct: f64,
    pub hrt_prob: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Relation,
            n_per_anchor: DEFAULT_N_PER_ANCHOR,
            threshold_pct: DEFAULT_THRESHOLD_PCT,
            hrt_prob: DEFAULT_HRT_PROB,
        }
    }
}

/// Samples according to `config.regime`. `table` is computed on demand for
/// the relation regime when not supplied.
pub fn sample(
    store: &KgStore,
    config: &SamplerConfig,
    table: Option<&CloseRelationTable>,
    seed: u64,
) -> Result<Vec<TripletExample>> {
    if config.n_per_anchor == 0 {
        return Err(Error::InvalidConfig("n_per_anchor must be at least 1".into()));
    }
    match config.regime {
        Regime::Relation => match table {
            Some(t) => sample_relation_triplets(store, t, config.n_per_anchor, seed),
            None => {
                let t = compute_close_relations(store, config.threshold_pct)?;
                sample_relation_triplets(store, &t, config.n_per_anchor, seed)
            }
        },
        Regime::Entity => sample_entity_triplets(store, config.hrt_prob, config.n_per_anchor, seed),
    }
}

/// Inspection dump: `anchor<TAB>positive<TAB>negative<TAB>regime`.
pub fn write_examples_tsv<W: Write>(
    w: &mut W,
    examples: &[TripletExample],
    store: &KgStore,
    opts: &TextOptions,
) -> Result<()> {
    for ex in examples {
        let text = |f: &FactRef| make_partial_fact(f.triple, f.kind, store, opts).text();
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            text(&ex.anchor),
            text(&ex.positive),
            text(&ex.negative),
            ex.regime
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Split, StoreBuilder};

    /// Hand-counted overlaps:
    /// heads(bornIn) = {a, b}, tails(bornIn) = {paris, rome}
    /// heads(diedIn) = {a, c}, tails(diedIn) = {berlin, madrid}
    /// heads(likes)  = {x, y}, tails(likes)  = {z, w}
    /// heads(wrote)  = {x, q}, tails(wrote)  = {book}
    ///
    /// bornIn→diedIn: head 1/2 = 50%, tail 0%      → close at 40
    /// diedIn→bornIn: head 1/2 = 50%, tail 0%      → close at 40
    /// likes→wrote:   head 1/2 = 50%, tail 0%      → close at 40
    /// wrote→likes:   head 1/2 = 50%, tail 0%      → close at 40
    /// every other pair shares nothing             → 0%
    fn eight() -> KgStore {
        let mut b = StoreBuilder::new();
        for (h, r, t) in [
            ("a", "bornIn", "paris"),
            ("b", "bornIn", "rome"),
            ("a", "diedIn", "berlin"),
            ("c", "diedIn", "madrid"),
            ("x", "likes", "z"),
            ("y", "likes", "w"),
            ("x", "wrote", "book"),
            ("x", "wrote", "book"),
        ] {
            b.push(Split::Train, h, r, t, None);
        }
        b.push(Split::Train, "q", "wrote", "book", None);
        b.build().unwrap()
    }

    #[test]
    fn close_relations_match_hand_count() {
        let s = eight();
        let r = |l: &str| s.relation_id(l).unwrap();
        let table = compute_close_relations(&s, 40.0).unwrap();
        let names = |rel: &str| -> Vec<&str> {
            table.close(r(rel)).iter().map(|m| s.relation_label(m.relation)).collect()
        };
        assert_eq!(names("bornIn"), vec!["diedIn"]);
        assert_eq!(names("diedIn"), vec!["bornIn"]);
        assert_eq!(names("likes"), vec!["wrote"]);
        assert_eq!(names("wrote"), vec!["likes"]);
        let m = table.close(r("bornIn"))[0];
        assert_eq!(m.head_overlap_pct, 50.0);
        assert_eq!(m.tail_overlap_pct, 0.0);
        let strict = compute_close_relations(&s, 60.0).unwrap();
        assert!(strict.close(r("bornIn")).is_empty());
    }

    #[test]
    fn single_relation_store_has_no_close() {
        let mut b = StoreBuilder::new();
        b.push(Split::Train, "a", "r", "b", None);
        b.push(Split::Train, "b", "r", "c", None);
        let s = b.build().unwrap();
        let t = compute_close_relations(&s, 0.0).unwrap();
        assert!(t.close(RelationId(0)).is_empty());
        assert!(matches!(
            sample_relation_triplets(&s, &t, 1, 0),
            Err(Error::NoNegativeCandidates(_))
        ));
    }

    #[test]
    fn relation_sampling_counts_and_determinism() {
        let s = eight();
        let t = compute_close_relations(&s, 40.0).unwrap();
        let a = sample_relation_triplets(&s, &t, 5, 7).unwrap();
        assert_eq!(a.len(), 5 * s.train().len());
        assert_eq!(a, sample_relation_triplets(&s, &t, 5, 7).unwrap());
        assert_ne!(a, sample_relation_triplets(&s, &t, 5, 8).unwrap());
        for ex in &a {
            let r = ex.anchor.triple.relation;
            assert_eq!(ex.positive.triple.relation, r);
            assert_ne!(ex.positive.fact, ex.anchor.fact);
            assert!(t.is_close(r, ex.negative.triple.relation));
            assert!(!ex.fallback_negative);
        }
    }

    #[test]
    fn relation_fallback_when_close_is_empty() {
        let mut b = StoreBuilder::new();
        b.push(Split::Train, "a", "r1", "b", None);
        b.push(Split::Train, "c", "r1", "d", None);
        b.push(Split::Train, "e", "r2", "f", None);
        b.push(Split::Train, "g", "r2", "h", None);
        let s = b.build().unwrap();
        let t = compute_close_relations(&s, 100.0).unwrap();
        let ex = sample_relation_triplets(&s, &t, 3, 1).unwrap();
        assert!(ex.iter().all(|e| e.fallback_negative));
        assert!(ex
            .iter()
            .all(|e| e.negative.triple.relation != e.anchor.triple.relation));
    }

    #[test]
    fn singleton_positive_reuses_anchor() {
        let mut b = StoreBuilder::new();
        b.push(Split::Train, "a", "r1", "b", None);
        b.push(Split::Train, "c", "r2", "d", None);
        b.push(Split::Train, "c", "r2", "e", None);
        let s = b.build().unwrap();
        let ex = sample_entity_triplets(&s, 0.3, 2, 3).unwrap();
        let first: Vec<_> = ex.iter().filter(|e| e.anchor.fact == 0).collect();
        assert!(first.iter().all(|e| e.singleton_positive && e.positive.fact == 0));
    }

    /// Every outcome on a 6-fact store is checked against the constraint.
    #[test]
    fn entity_negatives_respect_constraint_exhaustively() {
        let mut b = StoreBuilder::new();
        for (h, r, t) in [
            ("ann", "livesIn", "paris"),
            ("ann", "worksFor", "acme"),
            ("bob", "livesIn", "paris"),
            ("bob", "livesIn", "rome"),
            ("cid", "livesIn", "oslo"),
            ("cid", "worksFor", "acme"),
        ] {
            b.push(Split::Train, h, r, t, None);
        }
        let s = b.build().unwrap();
        for seed in 0..200 {
            for ex in sample_entity_triplets(&s, 0.5, 4, seed).unwrap() {
                let a = ex.anchor.triple;
                assert_eq!(ex.positive.triple.head, a.head);
                assert_eq!(ex.negative.kind, ex.anchor.kind);
                let n = ex.negative.triple;
                if ex.fallback_negative {
                    assert_ne!(n.head, a.head);
                } else {
                    assert_ne!(n.head, a.head);
                    assert_eq!(n.relation, a.relation);
                    assert!(!s.is_known(&Triple::new(a.head, a.relation, n.tail)));
                }
            }
        }
    }
}
