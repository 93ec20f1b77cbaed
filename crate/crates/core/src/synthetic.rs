//! Seeded block-structured knowledge graphs for learnability checks.
//!
//! Relations come in pairs that share a head block; every relation owns its
//! own tail block, so the relation of a pair is recoverable from (h, t) while
//! the close-relation table is non-trivial. Each block is cut into
//! `communities` equal chunks and heads only link to tails of the same chunk,
//! which gives every head a learnable neighborhood. Valid and test splits hold
//! unseen (h, t) pairs from the same blocks, each followed by a corrupted-tail
//! negative whose tail is drawn from an unrelated relation's tail block.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::store::{KgStore, Label, Split, StoreBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    /// Must be even.
    pub relations: usize,
    pub train_facts: usize,
    pub head_block: usize,
    pub tail_block: usize,
    /// Must divide both block sizes.
    pub communities: usize,
    pub valid_per_relation: usize,
    pub test_per_relation: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            relations: 20,
            train_facts: 5000,
            head_block: 50,
            tail_block: 50,
            communities: 5,
            valid_per_relation: 10,
            test_per_relation: 20,
            seed: 42,
        }
    }
}

pub fn entity_label(i: usize) -> String {
    format!("e{i:05}")
}

pub fn relation_label(r: usize) -> String {
    format!("rel{r:03}")
}

/// Entity ids of relation `r`'s head and tail blocks.
fn blocks(cfg: &SyntheticConfig, r: usize) -> (Vec<usize>, Vec<usize>) {
    let pairs = cfg.relations / 2;
    let head0 = (r / 2) * cfg.head_block;
    let tail0 = pairs * cfg.head_block + r * cfg.tail_block;
    ((head0..head0 + cfg.head_block).collect(), (tail0..tail0 + cfg.tail_block).collect())
}

pub fn block_kg(cfg: &SyntheticConfig) -> Result<KgStore> {
    if cfg.relations < 4 || !cfg.relations.is_multiple_of(2) {
        return Err(Error::InvalidConfig("synthetic relations must be even and at least 4".into()));
    }
    let c = cfg.communities;
    if c == 0 || !cfg.head_block.is_multiple_of(c) || !cfg.tail_block.is_multiple_of(c) {
        return Err(Error::InvalidConfig(format!(
            "{c} communities do not divide blocks of {}x{}",
            cfg.head_block, cfg.tail_block
        )));
    }
    let per_rel = cfg.train_facts / cfg.relations;
    let needed = per_rel + 1 + cfg.valid_per_relation + cfg.test_per_relation;
    let capacity = cfg.head_block * cfg.tail_block / c;
    if per_rel == 0 || needed > capacity {
        return Err(Error::InvalidConfig(format!(
            "{capacity} pairs per relation cannot hold {needed} facts"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = StoreBuilder::new();
    let mut held: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for r in 0..cfg.relations {
        let (heads, tails) = blocks(cfg, r);
        let (hc, tc) = (cfg.head_block / c, cfg.tail_block / c);
        let mut pairs: Vec<(usize, usize)> = (0..c)
            .flat_map(|k| {
                let tails = &tails[k * tc..(k + 1) * tc];
                heads[k * hc..(k + 1) * hc].iter().flat_map(move |&h| tails.iter().map(move |&t| (h, t)))
            })
            .collect();
        pairs.shuffle(&mut rng);
        let extra = cfg.train_facts % cfg.relations;
        let n = per_rel + usize::from(r < extra);
        for &(h, t) in &pairs[..n] {
            b.push(Split::Train, &entity_label(h), &relation_label(r), &entity_label(t), None);
        }
        held.push((r, pairs[n..n + cfg.valid_per_relation + cfg.test_per_relation].to_vec()));
    }
    for (r, pairs) in held {
        for (i, &(h, t)) in pairs.iter().enumerate() {
            let split = if i < cfg.valid_per_relation { Split::Valid } else { Split::Test };
            let rel = relation_label(r);
            b.push(split, &entity_label(h), &rel, &entity_label(t), Some(Label::Positive));
            // corrupt with a tail from a relation outside r's pair
            let other = loop {
                let s = rng.gen_range(0..cfg.relations);
                if s / 2 != r / 2 {
                    break s;
                }
            };
            let tails = blocks(cfg, other).1;
            let t2 = tails[rng.gen_range(0..tails.len())];
            b.push(split, &entity_label(h), &rel, &entity_label(t2), Some(Label::Negative));
        }
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape() {
        let s = block_kg(&SyntheticConfig::default()).unwrap();
        let c = s.counts();
        assert_eq!(c.relations, 20);
        assert_eq!(c.train, 5000);
        assert_eq!(s.valid().iter().filter(|lt| lt.is_true_fact()).count(), 200);
        assert_eq!(s.test().iter().filter(|lt| lt.is_true_fact()).count(), 400);
        assert!(c.test <= 800);
        for lt in s.test() {
            if lt.is_true_fact() {
                assert!(!s.train().contains(&lt.triple));
            }
        }
    }

    #[test]
    fn seeded() {
        let cfg = SyntheticConfig {
            train_facts: 400,
            ..Default::default()
        };
        let a = block_kg(&cfg).unwrap();
        let b = block_kg(&cfg).unwrap();
        assert_eq!(a.train(), b.train());
        assert_eq!(a.test(), b.test());
    }

    #[test]
    fn rejects_overfull_blocks() {
        let cfg = SyntheticConfig {
            head_block: 5,
            tail_block: 5,
            ..Default::default()
        };
        assert!(block_kg(&cfg).is_err());
    }
}
