//! The two refinement tasks over a reference index.
//!
//! Triple classification embeds the full triple and aggregates its distances
//! to the anchors of its head entity; the triple is predicted true when the
//! aggregate falls below a threshold tuned on validation data.
//!
//! Relation prediction embeds the head+tail pair, retrieves the K nearest
//! anchors and ranks the relations they carry, either by nearest occurrence
//! (`Min`) or by frequency among the K (`KMode`).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::encoder::{self, EncoderParams};
use crate::error::{Error, Result};
use crate::index::{IndexMode, IvfParams, Payload, ReferenceIndex, ReferencePoint};
use crate::sampler::{FactRef, TripletExample};
use crate::store::{EntityId, KgStore, Label, LabeledTriple, RelationId, Triple};
use crate::text::{make_partial_fact, PfKind, TextOptions, TokenVocab};

pub const DEFAULT_K: usize = 10;
pub const FEW_SHOT_THRESHOLDS: [usize; 5] = [10, 15, 20, 25, 30];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Aggregation {
    Min,
    Max,
    Mean,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Ok(Aggregation::Min),
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            _ => Err(Error::InvalidConfig(format!("unknown aggregation `{s}`"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Min => "min",
            Aggregation::Max => "max",
            Aggregation::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ColdStartPolicy {
    /// Aggregate over the whole reference set instead.
    GlobalFallback,
    PredictNegative,
}

impl FromStr for ColdStartPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "global_fallback" | "global" => Ok(ColdStartPolicy::GlobalFallback),
            "predict_negative" | "negative" => Ok(ColdStartPolicy::PredictNegative),
            _ => Err(Error::InvalidConfig(format!("unknown cold-start policy `{s}`"))),
        }
    }
}

impl fmt::Display for ColdStartPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColdStartPolicy::GlobalFallback => "global_fallback",
            ColdStartPolicy::PredictNegative => "predict_negative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub aggregation: Aggregation,
    /// `None` until tuned.
    pub sigma: Option<f64>,
    pub cold_start: ColdStartPolicy,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::Min,
            sigma: None,
            cold_start: ColdStartPolicy::GlobalFallback,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Strategy {
    Min,
    KMode,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "min" => Ok(Strategy::Min),
            "k_mode" | "kmode" => Ok(Strategy::KMode),
            _ => Err(Error::InvalidConfig(format!("unknown strategy `{s}`"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Min => "min",
            Strategy::KMode => "k_mode",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationPredictorConfig {
    pub strategy: Strategy,
    pub k: usize,
    pub filtered: bool,
}

impl Default for RelationPredictorConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::KMode,
            k: DEFAULT_K,
            filtered: true,
        }
    }
}

/// Renders triples as partial facts and embeds them with a trained encoder.
pub struct Embedder<'a> {
    pub params: &'a EncoderParams,
    pub vocab: &'a TokenVocab,
    pub text: &'a TextOptions,
    pub store: &'a KgStore,
}

impl Embedder<'_> {
    pub fn embed(&self, triple: Triple, kind: PfKind) -> Result<Vec<f32>> {
        let pf = make_partial_fact(triple, kind, self.store, self.text);
        let ids = self.vocab.encode(&pf, self.text.max_seq_len)?;
        Ok(encoder::forward(self.params, &ids)?.into_iter().map(|v| v as f32).collect())
    }
}

/// One reference point per distinct anchor partial fact, in order of first
/// appearance among `examples`.
pub fn reference_points(embedder: &Embedder<'_>, examples: &[TripletExample]) -> Result<Vec<ReferencePoint>> {
    let mut seen: HashSet<FactRef> = HashSet::new();
    let anchors: Vec<FactRef> = examples.iter().map(|ex| ex.anchor).filter(|a| seen.insert(*a)).collect();
    anchors
        .par_iter()
        .map(|f| {
            Ok(ReferencePoint {
                vector: embedder.embed(f.triple, f.kind)?,
                payload: Payload {
                    relation: f.triple.relation,
                    head: f.triple.head,
                    source_fact: f.fact,
                },
            })
        })
        .collect()
}

pub fn build_reference_index(
    embedder: &Embedder<'_>,
    examples: &[TripletExample],
    mode: IndexMode,
    ivf: IvfParams,
    seed: u64,
) -> Result<ReferenceIndex> {
    ReferenceIndex::build(reference_points(embedder, examples)?, mode, ivf, seed)
}

// ---------------------------------------------------------------------------
// triple classification

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregated {
    /// `None` when the head has no anchors and the policy predicts negative.
    pub value: Option<f64>,
    pub cold_start: bool,
}

/// Aggregated distance from `query` to the anchors of `head`.
pub fn aggregate_distance(
    index: &ReferenceIndex,
    query: &[f32],
    head: EntityId,
    aggregation: Aggregation,
    cold_start: ColdStartPolicy,
) -> Result<Aggregated> {
    let of_head = move |p: &Payload| p.head == head;
    let run = |filter: Option<&dyn Fn(&Payload) -> bool>| -> Result<Option<f64>> {
        Ok(match aggregation {
            Aggregation::Min => index.knn(query, 1, filter)?.first().map(|n| n.distance),
            Aggregation::Max | Aggregation::Mean => {
                let d = index.distances(query, filter)?;
                if d.is_empty() {
                    None
                } else if aggregation == Aggregation::Max {
                    d.into_iter().reduce(f64::max)
                } else {
                    Some(d.iter().sum::<f64>() / d.len() as f64)
                }
            }
        })
    };
    if let Some(v) = run(Some(&of_head))? {
        return Ok(Aggregated {
            value: Some(v),
            cold_start: false,
        });
    }
    let value = match cold_start {
        ColdStartPolicy::GlobalFallback => run(None)?,
        ColdStartPolicy::PredictNegative => None,
    };
    Ok(Aggregated { value, cold_start: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaFit {
    pub sigma: f64,
    pub accuracy: f64,
}

/// Threshold maximizing accuracy of `value < σ ⇒ positive`.
///
/// Candidates are 0 (everything negative), midpoints between consecutive
/// distinct values, and the largest value plus one (everything positive).
/// Ties go to the smallest σ. Entries without a value always count as
/// predicted negative.
pub fn tune_sigma(scored: &[(Option<f64>, Label)]) -> Result<SigmaFit> {
    let has = |l| scored.iter().any(|(_, x)| *x == l);
    if !has(Label::Positive) || !has(Label::Negative) {
        return Err(Error::SingleLabelValidation);
    }
    let mut vals: Vec<(f64, Label)> = scored.iter().filter_map(|(v, l)| v.map(|v| (v, *l))).collect();
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let fixed_correct = scored
        .iter()
        .filter(|(v, l)| v.is_none() && *l == Label::Negative)
        .count();
    let total = scored.len() as f64;
    // with σ below every value all valued entries are predicted negative
    let mut correct = fixed_correct + vals.iter().filter(|(_, l)| *l == Label::Negative).count();
    let mut best = SigmaFit {
        sigma: 0.0,
        accuracy: correct as f64 / total,
    };
    let mut i = 0;
    while i < vals.len() {
        let v = vals[i].0;
        // move every entry equal to v to the positive side
        while i < vals.len() && vals[i].0 == v {
            match vals[i].1 {
                Label::Positive => correct += 1,
                Label::Negative => correct -= 1,
            }
            i += 1;
        }
        let sigma = if i < vals.len() { 0.5 * (v + vals[i].0) } else { v + 1.0 };
        let accuracy = correct as f64 / total;
        if accuracy > best.accuracy {
            best = SigmaFit { sigma, accuracy };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassificationCounters {
    pub cold_start: usize,
    pub unlabeled_skipped: usize,
}

pub fn predict_label(aggregated: &Aggregated, sigma: f64) -> Label {
    match aggregated.value {
        Some(v) if v < sigma => Label::Positive,
        _ => Label::Negative,
    }
}

/// Scores a labeled split: aggregated distance of each labeled triple's
/// full (head, relation, tail) embedding to its head's anchors.
pub fn score_labeled(
    triples: &[LabeledTriple],
    embedder: &Embedder<'_>,
    index: &ReferenceIndex,
    config: &ClassifierConfig,
) -> Result<(Vec<(Aggregated, Label)>, ClassificationCounters)> {
    let labeled: Vec<(Triple, Label)> = triples.iter().filter_map(|lt| lt.label.map(|l| (lt.triple, l))).collect();
    let scored: Vec<(Aggregated, Label)> = labeled
        .par_iter()
        .map(|&(t, l)| {
            let q = embedder.embed(t, PfKind::Hrt)?;
            Ok((aggregate_distance(index, &q, t.head, config.aggregation, config.cold_start)?, l))
        })
        .collect::<Result<_>>()?;
    let counters = ClassificationCounters {
        cold_start: scored.iter().filter(|(a, _)| a.cold_start).count(),
        unlabeled_skipped: triples.len() - labeled.len(),
    };
    Ok((scored, counters))
}

/// Tunes σ on a labeled validation split.
pub fn tune_sigma_on(
    validation: &[LabeledTriple],
    embedder: &Embedder<'_>,
    index: &ReferenceIndex,
    config: &ClassifierConfig,
) -> Result<SigmaFit> {
    let (scored, _) = score_labeled(validation, embedder, index, config)?;
    let pairs: Vec<(Option<f64>, Label)> = scored.iter().map(|(a, l)| (a.value, *l)).collect();
    tune_sigma(&pairs)
}

/// Predicts the label of one triple; bumps `counters.cold_start` when the
/// head has no anchors.
pub fn classify(
    triple: Triple,
    embedder: &Embedder<'_>,
    index: &ReferenceIndex,
    config: &ClassifierConfig,
    counters: &mut ClassificationCounters,
) -> Result<Label> {
    let sigma = config.sigma.ok_or(Error::SigmaNotTuned)?;
    let q = embedder.embed(triple, PfKind::Hrt)?;
    let agg = aggregate_distance(index, &q, triple.head, config.aggregation, config.cold_start)?;
    if agg.cold_start {
        counters.cold_start += 1;
    }
    Ok(predict_label(&agg, sigma))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationResult {
    pub accuracy: f64,
    pub examples: usize,
    pub counters: ClassificationCounters,
}

pub fn evaluate_classification(
    test: &[LabeledTriple],
    embedder: &Embedder<'_>,
    index: &ReferenceIndex,
    config: &ClassifierConfig,
) -> Result<ClassificationResult> {
    let sigma = config.sigma.ok_or(Error::SigmaNotTuned)?;
    let (scored, counters) = score_labeled(test, embedder, index, config)?;
    if scored.is_empty() {
        return Err(Error::EmptyTestSplit);
    }
    let correct = scored.iter().filter(|(a, l)| predict_label(a, sigma) == *l).count();
    Ok(ClassificationResult {
        accuracy: correct as f64 / scored.len() as f64,
        examples: scored.len(),
        counters,
    })
}

// ---------------------------------------------------------------------------
// relation prediction

#[derive(Debug, Clone, PartialEq)]
pub struct RelationRanking {
    /// Relations seen among the K neighbors, best first, after filtering.
    pub ranked: Vec<RelationId>,
    /// Size of the candidate set: every relation except filtered ones.
    pub candidates: usize,
    /// Filtered rank of the gold relation (1-based); worst rank when it is
    /// not among the neighbors.
    pub gold_rank: Option<usize>,
}

/// Ranks the relations carried by `neighbors` (ascending distance).
///
/// `Min` orders by nearest occurrence; `KMode` by frequency, ties broken by
/// nearest occurrence. With `filter_known`, every relation `r ≠ gold` with
/// `(head, r, tail)` known in some split is removed before ranking.
pub fn rank_relations(
    neighbors: &[Payload],
    strategy: Strategy,
    store: &KgStore,
    head: EntityId,
    tail: EntityId,
    gold: Option<RelationId>,
    filter_known: bool,
) -> RelationRanking {
    // (first position, count) per relation
    let mut seen: Vec<(RelationId, usize, usize)> = Vec::new();
    for (pos, p) in neighbors.iter().enumerate() {
        match seen.iter_mut().find(|(r, _, _)| *r == p.relation) {
            Some(e) => e.2 += 1,
            None => seen.push((p.relation, pos, 1)),
        }
    }
    let known = |r: RelationId| filter_known && Some(r) != gold && store.is_known(&Triple::new(head, r, tail));
    seen.retain(|(r, _, _)| !known(*r));
    match strategy {
        Strategy::Min => seen.sort_by_key(|&(_, first, _)| first),
        Strategy::KMode => seen.sort_by_key(|&(_, first, count)| (std::cmp::Reverse(count), first)),
    }
    let ranked: Vec<RelationId> = seen.into_iter().map(|(r, _, _)| r).collect();
    let mut candidates = (0..store.num_relations() as u32)
        .map(RelationId)
        .filter(|&r| !known(r))
        .count();
    if gold.is_some_and(|g| g.index() >= store.num_relations()) {
        candidates += 1;
    }
    let gold_rank = gold.map(|g| ranked.iter().position(|&r| r == g).map_or(candidates, |p| p + 1));
    RelationRanking {
        ranked,
        candidates,
        gold_rank,
    }
}

pub fn predict_relation(
    head: EntityId,
    tail: EntityId,
    gold: Option<RelationId>,
    embedder: &Embedder<'_>,
    index: &ReferenceIndex,
    config: &RelationPredictorConfig,
) -> Result<RelationRanking> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    // the relation slot is ignored by the HT partial fact
    let q = embedder.embed(Triple::new(head, RelationId(0), tail), PfKind::Ht)?;
    let neighbors: Vec<Payload> = index.knn(&q, config.k, None)?.into_iter().map(|n| n.payload).collect();
    Ok(rank_relations(
        &neighbors,
        config.strategy,
        embedder.store,
        head,
        tail,
        gold,
        config.filtered,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedExample {
    pub triple: Triple,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationResult {
    pub mean_rank: f64,
    pub hits_at_1: f64,
    pub examples: Vec<RankedExample>,
    pub skipped_negative: usize,
}

pub fn summarize_ranks(examples: &[RankedExample]) -> Option<(f64, f64)> {
    if examples.is_empty() {
        return None;
    }
    let n = examples.len() as f64;
    let mr = examples.iter().map(|e| e.rank as f64).sum::<f64>() / n;
    let hits = examples.iter().filter(|e| e.rank == 1).count() as f64 / n;
    Some((mr, hits))
}

/// Filtered MR and Hits@1 over the true facts of `test`.
pub fn evaluate_relation_prediction(
    test: &[LabeledTriple],
    embedder: &Embedder<'_>,
    index: &ReferenceIndex,
    config: &RelationPredictorConfig,
) -> Result<RelationResult> {
    let facts: Vec<Triple> = test.iter().filter(|lt| lt.is_true_fact()).map(|lt| lt.triple).collect();
    if facts.is_empty() {
        return Err(Error::EmptyTestSplit);
    }
    let examples: Vec<RankedExample> = facts
        .par_iter()
        .map(|&t| {
            let ranking = predict_relation(t.head, t.tail, Some(t.relation), embedder, index, config)?;
            Ok(RankedExample {
                triple: t,
                rank: ranking.gold_rank.expect("gold supplied"),
            })
        })
        .collect::<Result<_>>()?;
    let (mean_rank, hits_at_1) = summarize_ranks(&examples).expect("non-empty");
    Ok(RelationResult {
        mean_rank,
        hits_at_1,
        examples,
        skipped_negative: test.len() - facts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceReport {
    pub max_facts: usize,
    pub relations: usize,
    pub relation_fraction: f64,
    /// Same slice counted only over relations that occur in train.
    pub relations_in_train: usize,
    pub train_relation_fraction: f64,
    pub instance_fraction: f64,
    pub test_examples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hits_at_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_rank: Option<f64>,
}

/// Hits@1 restricted to test facts whose gold relation has fewer than `N`
/// training facts, for each `N` in `thresholds`.
pub fn few_shot_report(examples: &[RankedExample], store: &KgStore, thresholds: &[usize]) -> Vec<SliceReport> {
    let freq = store.relation_frequencies();
    thresholds
        .iter()
        .map(|&n| {
            let census = store.few_shot_relations(n);
            let slice: Vec<RankedExample> = examples
                .iter()
                .filter(|e| freq.get(e.triple.relation.index()).copied().unwrap_or(0) < n)
                .copied()
                .collect();
            let summary = summarize_ranks(&slice);
            SliceReport {
                max_facts: n,
                relations: census.relations.len(),
                relation_fraction: census.relation_fraction,
                relations_in_train: census.relations_in_train,
                train_relation_fraction: census.train_relation_fraction,
                instance_fraction: census.instance_fraction,
                test_examples: slice.len(),
                hits_at_1: summary.map(|s| s.1),
                mean_rank: summary.map(|s| s.0),
            }
        })
        .collect()
}

/// Structured evaluation record written as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: String,
    pub examples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_rank: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hits_at_1: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub slices: Vec<SliceReport>,
    pub counters: BTreeMap<String, usize>,
    pub config: BTreeMap<String, String>,
}
