//! Run configuration: a flat `key = value` file plus overrides.
//!
//! ```text
//! # comments start with '#'
//! train = data/toy/train.txt
//! epochs = 4
//! mode = ivf
//! ```
//!
//! Keys accept `-` or `_`. Relative paths in a file resolve against the
//! file's directory; overrides resolve against the working directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::encoder::{Architecture, EncoderConfig};
use crate::eval::{
    Aggregation, ClassifierConfig, ColdStartPolicy, RelationPredictorConfig, Strategy, DEFAULT_K, FEW_SHOT_THRESHOLDS,
};
use crate::error::{Error, Result};
use crate::index::{IndexMode, IvfParams, KMEANS_ITERATIONS};
use crate::sampler::{Regime, SamplerConfig, DEFAULT_HRT_PROB, DEFAULT_N_PER_ANCHOR, DEFAULT_THRESHOLD_PCT};
use crate::text::{TextOptions, DEFAULT_MAX_DESC_TOKENS, DEFAULT_MAX_SEQ_LEN, DEFAULT_MAX_SEQ_LEN_WITH_DESCRIPTIONS};
use crate::trainer::{self, TrainConfig};

/// Which regimes `train` and `index` process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeSelection {
    Relation,
    Entity,
    Both,
}

impl RegimeSelection {
    pub fn regimes(self) -> &'static [Regime] {
        match self {
            RegimeSelection::Relation => &[Regime::Relation],
            RegimeSelection::Entity => &[Regime::Entity],
            RegimeSelection::Both => &[Regime::Relation, Regime::Entity],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub descriptions: Option<PathBuf>,
    pub reverse_relations: bool,
    pub max_seq_len: Option<usize>,
    pub max_desc_tokens: usize,

    pub regime: RegimeSelection,
    pub n_per_anchor: usize,
    pub threshold_pct: f64,
    pub hrt_prob: f64,

    pub architecture: Architecture,
    pub embedding_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feedforward_dim: Option<usize>,
    pub init_scale: Option<f64>,

    pub margin: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub checkpoint_every: usize,
    pub seed: u64,

    pub mode: IndexMode,
    pub n_lists: usize,
    pub n_probe: usize,
    pub kmeans_iterations: usize,

    pub aggregation: Aggregation,
    pub cold_start: ColdStartPolicy,
    pub strategy: Strategy,
    pub k: usize,
    pub filtered: bool,
    pub fewshot_thresholds: Vec<usize>,
    pub dump_examples: bool,

    pub out: PathBuf,
    pub workers: Option<usize>,
    pub force: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ivf = IvfParams::default();
        Self {
            train: None,
            valid: None,
            test: None,
            descriptions: None,
            reverse_relations: false,
            max_seq_len: None,
            max_desc_tokens: DEFAULT_MAX_DESC_TOKENS,
            regime: RegimeSelection::Both,
            n_per_anchor: DEFAULT_N_PER_ANCHOR,
            threshold_pct: DEFAULT_THRESHOLD_PCT,
            hrt_prob: DEFAULT_HRT_PROB,
            architecture: Architecture::Transformer,
            embedding_dim: 64,
            num_layers: 2,
            num_heads: 4,
            feedforward_dim: None,
            init_scale: None,
            margin: trainer::DEFAULT_MARGIN,
            batch_size: trainer::DEFAULT_BATCH_SIZE,
            learning_rate: trainer::DEFAULT_LEARNING_RATE,
            epochs: trainer::DEFAULT_EPOCHS,
            checkpoint_every: 0,
            seed: 42,
            mode: IndexMode::Exact,
            n_lists: ivf.n_lists,
            n_probe: ivf.n_probe,
            kmeans_iterations: KMEANS_ITERATIONS,
            aggregation: Aggregation::Min,
            cold_start: ColdStartPolicy::GlobalFallback,
            strategy: Strategy::KMode,
            k: DEFAULT_K,
            filtered: true,
            fewshot_thresholds: FEW_SHOT_THRESHOLDS.to_vec(),
            dump_examples: false,
            out: PathBuf::from("out"),
            workers: None,
            force: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn resolve(base: &Path, value: &str) -> Option<PathBuf> {
    if value.is_empty() || value.eq_ignore_ascii_case("none") {
        return None;
    }
    let p = PathBuf::from(value);
    Some(if p.is_absolute() { p } else { base.join(p) })
}

impl RunConfig {
    /// Reads a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                message: "expected `key = value`".into(),
            })?;
            self.set(key.trim(), value.trim(), &base).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Sets one key; relative paths resolve against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let key = key.replace('-', "_");
        let k = key.as_str();
        match k {
            "train" => self.train = resolve(base, value),
            "valid" => self.valid = resolve(base, value),
            "test" => self.test = resolve(base, value),
            "descriptions" => self.descriptions = resolve(base, value),
            "reverse_relations" => self.reverse_relations = parse_bool(k, value)?,
            "max_seq_len" => self.max_seq_len = optional(k, value)?,
            "max_desc_tokens" => self.max_desc_tokens = parse(k, value)?,
            "regime" => {
                self.regime = match value.to_ascii_lowercase().as_str() {
                    "both" => RegimeSelection::Both,
                    other => match other.parse::<Regime>()? {
                        Regime::Relation => RegimeSelection::Relation,
                        Regime::Entity => RegimeSelection::Entity,
                    },
                }
            }
            "n_per_anchor" => self.n_per_anchor = parse(k, value)?,
            "threshold_pct" => self.threshold_pct = parse(k, value)?,
            "hrt_prob" => self.hrt_prob = parse(k, value)?,
            "architecture" => self.architecture = value.parse()?,
            "embedding_dim" => self.embedding_dim = parse(k, value)?,
            "num_layers" => self.num_layers = parse(k, value)?,
            "num_heads" => self.num_heads = parse(k, value)?,
            "feedforward_dim" => self.feedforward_dim = optional(k, value)?,
            "init_scale" => self.init_scale = optional(k, value)?,
            "margin" => self.margin = parse(k, value)?,
            "batch_size" => self.batch_size = parse(k, value)?,
            "learning_rate" => self.learning_rate = parse(k, value)?,
            "epochs" => self.epochs = parse(k, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(k, value)?,
            "seed" => self.seed = parse(k, value)?,
            "mode" => self.mode = value.parse()?,
            "n_lists" => self.n_lists = parse(k, value)?,
            "n_probe" => self.n_probe = parse(k, value)?,
            "kmeans_iterations" => self.kmeans_iterations = parse(k, value)?,
            "aggregation" => self.aggregation = value.parse()?,
            "cold_start" => self.cold_start = value.parse()?,
            "strategy" => self.strategy = value.parse()?,
            "k" => self.k = parse(k, value)?,
            "filtered" => self.filtered = parse_bool(k, value)?,
            "fewshot_thresholds" => {
                self.fewshot_thresholds = value
                    .split(',')
                    .map(|v| parse(k, v.trim()))
                    .collect::<Result<_>>()?
            }
            "dump_examples" => self.dump_examples = parse_bool(k, value)?,
            "out" => self.out = resolve(base, value).unwrap_or_else(|| PathBuf::from("out")),
            "workers" => self.workers = optional(k, value)?,
            "force" => self.force = parse_bool(k, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_anchor == 0 {
            return Err(Error::InvalidConfig("n_per_anchor must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.hrt_prob) {
            return Err(Error::InvalidConfig(format!("hrt_prob must lie in [0, 1], got {}", self.hrt_prob)));
        }
        if !(0.0..=100.0).contains(&self.threshold_pct) {
            return Err(Error::InvalidConfig(format!(
                "threshold_pct must lie in [0, 100], got {}",
                self.threshold_pct
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.mode == IndexMode::Ivf && (self.n_lists == 0 || self.n_probe == 0) {
            return Err(Error::InvalidConfig("n_lists and n_probe must be at least 1".into()));
        }
        self.train_config().validate()?;
        self.encoder_config().validate()
    }

    pub fn text_options(&self) -> TextOptions {
        let use_descriptions = self.descriptions.is_some();
        let default_len = if use_descriptions {
            DEFAULT_MAX_SEQ_LEN_WITH_DESCRIPTIONS
        } else {
            DEFAULT_MAX_SEQ_LEN
        };
        TextOptions {
            use_descriptions,
            max_desc_tokens: self.max_desc_tokens,
            max_seq_len: self.max_seq_len.unwrap_or(default_len),
        }
    }

    pub fn sampler_config(&self, regime: Regime) -> SamplerConfig {
        SamplerConfig {
            regime,
            n_per_anchor: self.n_per_anchor,
            threshold_pct: self.threshold_pct,
            hrt_prob: self.hrt_prob,
        }
    }

    /// Vocabulary size is filled in by the trainer.
    pub fn encoder_config(&self) -> EncoderConfig {
        let mut c = match self.architecture {
            Architecture::Bag => EncoderConfig::bag(1, self.embedding_dim),
            Architecture::Transformer => {
                EncoderConfig::transformer(1, self.embedding_dim, self.num_layers, self.num_heads)
            }
        };
        if let Some(ff) = self.feedforward_dim {
            c.feedforward_dim = ff;
        }
        c.max_seq_len = self.text_options().max_seq_len;
        c.init_seed = self.seed;
        c.init_scale = self.init_scale;
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            margin: self.margin,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            ..TrainConfig::default()
        }
    }

    pub fn ivf_params(&self) -> IvfParams {
        IvfParams {
            n_lists: self.n_lists,
            n_probe: self.n_probe,
            iterations: self.kmeans_iterations,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            aggregation: self.aggregation,
            sigma: None,
            cold_start: self.cold_start,
        }
    }

    pub fn relation_config(&self) -> RelationPredictorConfig {
        RelationPredictorConfig {
            strategy: self.strategy,
            k: self.k,
            filtered: self.filtered,
        }
    }

    fn path_str(p: &Option<PathBuf>) -> String {
        p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
    }

    /// Keys the stored graph depends on.
    fn store_entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("train", Self::path_str(&self.train)),
            ("valid", Self::path_str(&self.valid)),
            ("test", Self::path_str(&self.test)),
            ("descriptions", Self::path_str(&self.descriptions)),
            ("reverse_relations", self.reverse_relations.to_string()),
        ]
    }

    /// Keys a trained checkpoint depends on, store keys included.
    fn train_entries(&self) -> Vec<(&'static str, String)> {
        let text = self.text_options();
        let mut e = self.store_entries();
        e.extend([
            ("max_seq_len", text.max_seq_len.to_string()),
            ("max_desc_tokens", self.max_desc_tokens.to_string()),
            ("n_per_anchor", self.n_per_anchor.to_string()),
            ("threshold_pct", self.threshold_pct.to_string()),
            ("hrt_prob", self.hrt_prob.to_string()),
            ("architecture", self.architecture.to_string()),
            ("embedding_dim", self.embedding_dim.to_string()),
            ("num_layers", self.num_layers.to_string()),
            ("num_heads", self.num_heads.to_string()),
            ("feedforward_dim", opt_str(self.feedforward_dim)),
            ("init_scale", opt_str(self.init_scale)),
            ("margin", self.margin.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
        ]);
        e
    }

    fn index_entries(&self) -> Vec<(&'static str, String)> {
        let mut e = self.train_entries();
        e.push(("mode", self.mode.to_string()));
        if self.mode == IndexMode::Ivf {
            e.extend([
                ("n_lists", self.n_lists.to_string()),
                ("n_probe", self.n_probe.to_string()),
                ("kmeans_iterations", self.kmeans_iterations.to_string()),
            ]);
        }
        e
    }

    pub fn store_hash(&self) -> u64 {
        hash_entries(&self.store_entries())
    }

    pub fn train_hash(&self) -> u64 {
        hash_entries(&self.train_entries())
    }

    pub fn index_hash(&self) -> u64 {
        hash_entries(&self.index_entries())
    }

    /// Every key with its effective value, for report echoes.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = self.index_entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        e.extend([
            ("aggregation".to_string(), self.aggregation.to_string()),
            ("cold_start".to_string(), self.cold_start.to_string()),
            ("strategy".to_string(), self.strategy.to_string()),
            ("k".to_string(), self.k.to_string()),
            ("filtered".to_string(), self.filtered.to_string()),
        ]);
        e
    }
}

fn opt_str<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "auto".to_string(), |v| v.to_string())
}

fn hash_entries(entries: &[(&str, String)]) -> u64 {
    let mut s = String::new();
    for (k, v) in entries {
        let _ = writeln!(s, "{k}={v}");
    }
    let digest = Sha256::digest(s.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        fs::write(
            &p,
            "# toy\ntrain = data/train.txt\nbatch-size = 8  # small\nmode = ivf\nstrategy = min\nfewshot_thresholds = 5, 10\n",
        )
        .unwrap();
        let c = RunConfig::from_file(&p).unwrap();
        assert_eq!(c.train, Some(dir.path().join("data/train.txt")));
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.mode, IndexMode::Ivf);
        assert_eq!(c.strategy, Strategy::Min);
        assert_eq!(c.fewshot_thresholds, vec![5, 10]);
        assert_eq!(c.seed, 42);
    }

    #[test]
    fn rejects_unknown_key_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.conf");
        fs::write(&p, "epochs = 2\nbogus = 1\n").unwrap();
        match RunConfig::from_file(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stage_hashes() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.k = 3;
        b.strategy = Strategy::Min;
        assert_eq!(a.index_hash(), b.index_hash());
        b.mode = IndexMode::Ivf;
        assert_eq!(a.train_hash(), b.train_hash());
        assert_ne!(a.index_hash(), b.index_hash());
        b.epochs = 9;
        assert_eq!(a.store_hash(), b.store_hash());
        assert_ne!(a.train_hash(), b.train_hash());
    }
}
