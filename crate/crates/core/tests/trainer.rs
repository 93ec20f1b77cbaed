use kgrefine::encoder::{EncoderConfig, EncoderParams};
use kgrefine::sampler::{Regime, SamplerConfig};
use kgrefine::store::{KgStore, Split, StoreBuilder};
use kgrefine::text::{TextOptions, TokenVocab};
use kgrefine::trainer::{self, TrainConfig, TrainInputs, TrainOutcome};

/// Three relations over disjoint entity sets.
fn separable_store() -> KgStore {
    let mut b = StoreBuilder::new();
    for (r, rel) in ["alpha", "beta", "gamma"].iter().enumerate() {
        for i in 0..6 {
            for j in 0..5 {
                b.push(Split::Train, &format!("h{r}_{i}"), rel, &format!("t{r}_{j}"), None);
            }
        }
    }
    b.build().unwrap()
}

fn run(store: &KgStore, regime: Regime, encoder: EncoderConfig, config: &TrainConfig) -> TrainOutcome {
    let text = TextOptions::default();
    let vocab = TokenVocab::from_train(store, &text);
    let sampler = SamplerConfig {
        regime,
        ..SamplerConfig::default()
    };
    let inputs = TrainInputs {
        store,
        vocab: &vocab,
        text: &text,
        sampler: &sampler,
        close: None,
    };
    trainer::train(&inputs, &encoder, config, |_, p| {
        assert!(p.is_finite());
        Ok(())
    })
    .unwrap()
}

#[test]
fn separable_relations_halve_the_loss() {
    let store = separable_store();
    let cfg = TrainConfig {
        batch_size: 16,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let out = run(&store, Regime::Relation, EncoderConfig::bag(1, 32), &cfg);
    assert_eq!(out.history.len(), 4);
    assert!(
        out.final_loss() < 0.5 * out.initial_loss,
        "{} -> {}",
        out.initial_loss,
        out.final_loss()
    );
}

#[test]
fn zero_learning_rate_leaves_params_unchanged() {
    let store = separable_store();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let enc = EncoderConfig::bag(1, 8);
    let out = run(&store, Regime::Entity, enc.clone(), &cfg);
    let init = EncoderParams::init(EncoderConfig {
        vocab_size: out.params.config().vocab_size,
        max_seq_len: out.params.config().max_seq_len,
        ..enc
    })
    .unwrap();
    assert_eq!(out.params.values(), init.values());
    // first epoch sees the same examples as the initial measurement
    assert_eq!(out.history[0].mean_loss, out.initial_loss);
    for e in &out.history {
        assert!((e.mean_loss - out.initial_loss).abs() < 0.05 * out.initial_loss);
    }
}

#[test]
fn one_epoch_with_a_huge_batch_is_one_step() {
    let store = separable_store();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 10_000,
        ..TrainConfig::default()
    };
    let out = run(&store, Regime::Relation, EncoderConfig::bag(1, 4), &cfg);
    assert_eq!(out.steps, 1);
    assert_eq!(out.history[0].steps, 1);
}

#[test]
fn seeded_runs_are_bit_identical() {
    let store = separable_store();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut enc = EncoderConfig::transformer(1, 8, 1, 2);
    enc.max_seq_len = 8;
    let a = run(&store, Regime::Entity, enc.clone(), &cfg);
    let b = run(&store, Regime::Entity, enc, &cfg);
    let bits = |o: &TrainOutcome| o.history.iter().map(|e| e.mean_loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.params.values(), b.params.values());
    for e in &a.history {
        assert!(e.mean_loss >= 0.0);
        assert_eq!(e.sampling.examples, store.train().len() * 5);
    }
}
