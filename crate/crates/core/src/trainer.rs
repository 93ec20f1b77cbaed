//! Triplet-loss training with Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::encoder::{self, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::sampler::{self, derive_seed, CloseRelationTable, Regime, SampleStats, SamplerConfig, TripletExample};
use crate::store::KgStore;
use crate::text::{make_partial_fact, PfKind, TextOptions, TokenVocab};

pub const DEFAULT_MARGIN: f64 = 5.0;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_EPOCHS: usize = 4;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
/// Fine-tuning rate used for a pre-trained language model; far too small
/// for an encoder trained from scratch.
pub const FINETUNE_LEARNING_RATE: f64 = 2e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub margin: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: DEFAULT_EPOCHS,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 42,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin.is_nan() || self.margin <= 0.0 {
            return Err(Error::InvalidConfig(format!("margin must be positive, got {}", self.margin)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// `max(0, d_ap − d_an + margin)`.
pub fn triplet_loss(d_ap: f64, d_an: f64, margin: f64) -> Result<f64> {
    for d in [d_ap, d_an] {
        if d < 0.0 || d.is_nan() {
            return Err(Error::NegativeDistance(d));
        }
    }
    Ok(encoder::triplet_loss_value(d_ap, d_an, margin))
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Token ids of every training fact for the partial-fact kinds a regime uses.
pub struct FactEncodings {
    ht: Vec<Vec<u32>>,
    rt: Vec<Vec<u32>>,
    hrt: Vec<Vec<u32>>,
}

impl FactEncodings {
    pub fn new(store: &KgStore, vocab: &TokenVocab, opts: &TextOptions, regime: Regime) -> Result<Self> {
        let encode = |kind| -> Result<Vec<Vec<u32>>> {
            store
                .train()
                .par_iter()
                .map(|t| vocab.encode(&make_partial_fact(*t, kind, store, opts), opts.max_seq_len))
                .collect()
        };
        Ok(match regime {
            Regime::Relation => Self {
                ht: encode(PfKind::Ht)?,
                rt: Vec::new(),
                hrt: Vec::new(),
            },
            Regime::Entity => Self {
                ht: Vec::new(),
                rt: encode(PfKind::Rt)?,
                hrt: encode(PfKind::Hrt)?,
            },
        })
    }

    pub fn get(&self, fact: u32, kind: PfKind) -> &[u32] {
        let table = match kind {
            PfKind::Ht => &self.ht,
            PfKind::Rt => &self.rt,
            PfKind::Hrt => &self.hrt,
        };
        &table[fact as usize]
    }

    pub fn triplet(&self, ex: &TripletExample) -> [&[u32]; 3] {
        [
            self.get(ex.anchor.fact, ex.anchor.kind),
            self.get(ex.positive.fact, ex.positive.kind),
            self.get(ex.negative.fact, ex.negative.kind),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of examples with non-zero loss.
    pub active_fraction: f64,
    pub steps: usize,
    pub sampling: SampleStats,
}

impl EpochStats {
    /// `epoch<TAB>mean_loss<TAB>active_fraction`
    pub fn log_line(&self) -> String {
        format!("{}\t{:.6}\t{:.4}", self.epoch, self.mean_loss, self.active_fraction)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub history: Vec<EpochStats>,
    /// Mean loss of the first epoch's examples before any update.
    pub initial_loss: f64,
    pub steps: usize,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.history.last().map(|e| e.mean_loss).unwrap_or(self.initial_loss)
    }
}

/// Mean triplet loss of `examples` under `params`.
pub fn mean_loss(params: &EncoderParams, enc: &FactEncodings, examples: &[TripletExample], margin: f64) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| encoder::triplet_eval(params, enc.triplet(ex), margin).map(|e| e.loss))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / examples.len() as f64)
}

pub struct TrainInputs<'a> {
    pub store: &'a KgStore,
    pub vocab: &'a TokenVocab,
    pub text: &'a TextOptions,
    pub sampler: &'a SamplerConfig,
    /// Precomputed `close_r` for the relation regime.
    pub close: Option<&'a CloseRelationTable>,
}

/// Runs `epochs` passes over freshly sampled examples, one Adam step per
/// mini-batch. `on_epoch` sees the stats and parameters after each epoch.
pub fn train(
    inputs: &TrainInputs<'_>,
    encoder_config: &EncoderConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &EncoderParams) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut encoder_config = encoder_config.clone();
    encoder_config.vocab_size = inputs.vocab.size();
    encoder_config.max_seq_len = encoder_config.max_seq_len.max(inputs.text.max_seq_len);
    let mut params = EncoderParams::init(encoder_config)?;
    let enc = FactEncodings::new(inputs.store, inputs.vocab, inputs.text, inputs.sampler.regime)?;
    let owned_table;
    let close = match (inputs.sampler.regime, inputs.close) {
        (Regime::Relation, None) => {
            owned_table = sampler::compute_close_relations(inputs.store, inputs.sampler.threshold_pct)?;
            Some(&owned_table)
        }
        (_, t) => t,
    };
    let mut adam = Adam::new(params.len(), config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut grad = params.zeros_like();
    let mut history = Vec::with_capacity(config.epochs);
    let mut initial_loss = 0.0;
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut examples = sampler::sample(inputs.store, inputs.sampler, close, derive_seed(config.seed, 1, epoch as u64))?;
        let sampling = SampleStats::of(&examples);
        examples.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2, epoch as u64)));
        if epoch == 0 {
            initial_loss = mean_loss(&params, &enc, &examples, config.margin)?;
        }
        let mut loss_sum = 0.0;
        let mut active = 0usize;
        let mut epoch_steps = 0usize;
        for (b, batch) in examples.chunks(config.batch_size).enumerate() {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for (j, ex) in batch.iter().enumerate() {
                let eval = encoder::accumulate_triplet_gradient(&params, enc.triplet(ex), config.margin, scale, &mut grad)?;
                if !eval.loss.is_finite() {
                    return Err(Error::NonFinite {
                        what: "loss",
                        step,
                        examples: vec![b * config.batch_size + j],
                    });
                }
                loss_sum += eval.loss;
                active += usize::from(eval.active());
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    what: "gradient",
                    step,
                    examples: (b * config.batch_size..b * config.batch_size + batch.len()).collect(),
                });
            }
            adam.step(params.values_mut(), &grad);
            if !params.is_finite() {
                return Err(Error::NonFinite {
                    what: "parameters",
                    step,
                    examples: (b * config.batch_size..b * config.batch_size + batch.len()).collect(),
                });
            }
            step += 1;
            epoch_steps += 1;
        }
        let n = examples.len().max(1) as f64;
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: loss_sum / n,
            active_fraction: active as f64 / n,
            steps: epoch_steps,
            sampling,
        };
        on_epoch(&stats, &params)?;
        history.push(stats);
    }
    Ok(TrainOutcome {
        params,
        history,
        initial_loss,
        steps: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_values() {
        assert_eq!(triplet_loss(2.0, 4.0, 5.0).unwrap(), 3.0);
        assert_eq!(triplet_loss(0.0, 10.0, 5.0).unwrap(), 0.0);
        assert_eq!(triplet_loss(1.5, 1.5, 5.0).unwrap(), 5.0);
        assert!(matches!(triplet_loss(-1.0, 1.0, 5.0), Err(Error::NegativeDistance(_))));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(2, 0.1, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, 1.0];
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            margin: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
