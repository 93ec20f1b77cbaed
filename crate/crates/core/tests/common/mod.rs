//! Independent oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

use kgrefine::encoder::{self, EncoderParams};

/// Central finite differences of the triplet loss, recomputed from
/// `forward` alone.
pub fn fd_triplet_gradient(params: &EncoderParams, ids: [&[u32]; 3], margin: f64, h: f64) -> Vec<f64> {
    let loss = |p: &EncoderParams| {
        let ea = encoder::forward(p, ids[0]).unwrap();
        let ep = encoder::forward(p, ids[1]).unwrap();
        let en = encoder::forward(p, ids[2]).unwrap();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        (dist(&ea, &ep) - dist(&ea, &en) + margin).max(0.0)
    };
    let mut p = params.clone();
    (0..params.len())
        .map(|i| {
            let orig = p.values()[i];
            p.values_mut()[i] = orig + h;
            let up = loss(&p);
            p.values_mut()[i] = orig - h;
            let down = loss(&p);
            p.values_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let den = norm(a).max(norm(b));
    if den == 0.0 {
        0.0
    } else {
        norm(&diff) / den
    }
}

/// Squared-L2 k-NN by sorting every distance; ties by insertion order.
pub fn brute_knn(points: &[Vec<f32>], query: &[f32], k: usize, keep: impl Fn(usize) -> bool) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(i, p)| {
            let d: f64 = p
                .iter()
                .zip(query)
                .map(|(a, b)| {
                    let t = *a as f64 - *b as f64;
                    t * t
                })
                .sum();
            (i, d)
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Filtered rank of `gold` recomputed from scratch: every relation id is a
/// candidate unless it differs from `gold` and `known(r)` holds; candidates
/// are scored from the neighbor relation list (ascending distance).
pub fn oracle_rank(
    neighbor_relations: &[u32],
    num_relations: u32,
    gold: u32,
    k_mode: bool,
    known: impl Fn(u32) -> bool,
) -> usize {
    let candidates: Vec<u32> = (0..num_relations).filter(|&r| r == gold || !known(r)).collect();
    let first = |r: u32| neighbor_relations.iter().position(|&x| x == r);
    let count = |r: u32| neighbor_relations.iter().filter(|&&x| x == r).count();
    let Some(gold_first) = first(gold) else {
        return candidates.len();
    };
    let better = candidates
        .iter()
        .filter(|&&r| r != gold)
        .filter(|&&r| match first(r) {
            None => false,
            Some(f) if k_mode => count(r) > count(gold) || (count(r) == count(gold) && f < gold_first),
            Some(f) => f < gold_first,
        })
        .count();
    better + 1
}
