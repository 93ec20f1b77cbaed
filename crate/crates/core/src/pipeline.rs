//! End-to-end commands over an output directory of artifacts.
//!
//! | file                      | written by      |
//! |---------------------------|-----------------|
//! | `store.bin`               | ingest          |
//! | `vocab.txt`               | train           |
//! | `checkpoint_<regime>.bin` | train           |
//! | `index_<regime>.bin`      | index           |
//! | `report.json`             | eval-*, fewshot |
//!
//! Binary artifacts carry the hash of the config keys they depend on and
//! later commands refuse a mismatch unless `force` is set.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::config::RunConfig;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::eval::{self, Embedder, EvalReport, RankedExample};
use crate::index::ReferenceIndex;
use crate::sampler::{self, derive_seed, Regime};
use crate::store::{IngestOptions, KgStore, Split, StoreCounts};
use crate::text::{TextOptions, TokenVocab};
use crate::trainer::{self, EpochStats, TrainInputs};

/// Stream id for the seed that draws the reference anchors.
const INDEX_STREAM: u64 = 3;

pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn store(&self) -> PathBuf {
        self.dir.join("store.bin")
    }

    pub fn vocab(&self) -> PathBuf {
        self.dir.join("vocab.txt")
    }

    pub fn checkpoint(&self, regime: Regime) -> PathBuf {
        self.dir.join(format!("checkpoint_{regime}.bin"))
    }

    pub fn epoch_checkpoint(&self, regime: Regime, epoch: usize) -> PathBuf {
        self.dir.join(format!("checkpoint_{regime}_epoch{epoch}.bin"))
    }

    pub fn index(&self, regime: Regime) -> PathBuf {
        self.dir.join(format!("index_{regime}.bin"))
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }

    pub fn relation_ranks(&self) -> PathBuf {
        self.dir.join("relation_ranks.tsv")
    }

    pub fn classification_predictions(&self) -> PathBuf {
        self.dir.join("classification.tsv")
    }
}

/// Caps rayon's global pool. Only the first call in a process takes effect.
pub fn configure_workers(workers: Option<usize>) {
    if let Some(n) = workers {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn check_hash(path: &Path, expected: u64, found: u64, force: bool) -> Result<()> {
    if expected == found || force {
        Ok(())
    } else {
        Err(Error::ConfigHashMismatch {
            artifact: path.display().to_string(),
            expected,
            found,
        })
    }
}

pub fn load_store(cfg: &RunConfig) -> Result<KgStore> {
    let path = Artifacts::new(&cfg.out).store();
    require(&path)?;
    let (store, hash) = KgStore::load(&path)?;
    check_hash(&path, cfg.store_hash(), hash, cfg.force)?;
    Ok(store)
}

pub fn load_vocab(cfg: &RunConfig) -> Result<TokenVocab> {
    let path = Artifacts::new(&cfg.out).vocab();
    require(&path)?;
    TokenVocab::load(&path)
}

pub fn load_checkpoint(cfg: &RunConfig, regime: Regime, vocab: &TokenVocab) -> Result<EncoderParams> {
    let path = Artifacts::new(&cfg.out).checkpoint(regime);
    require(&path)?;
    let (params, hash) = EncoderParams::load(&path)?;
    check_hash(&path, cfg.train_hash(), hash, cfg.force)?;
    if params.config().vocab_size != vocab.size() {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!(
                "checkpoint vocabulary has {} entries, vocab file has {}",
                params.config().vocab_size,
                vocab.size()
            ),
        });
    }
    Ok(params)
}

pub fn load_index(cfg: &RunConfig, regime: Regime) -> Result<ReferenceIndex> {
    let path = Artifacts::new(&cfg.out).index(regime);
    require(&path)?;
    let (index, hash) = ReferenceIndex::load(&path)?;
    check_hash(&path, cfg.index_hash(), hash, cfg.force)?;
    Ok(index)
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<StoreCounts> {
    let train = cfg
        .train
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("`train` path is not set".into()))?;
    for p in [Some(train), cfg.valid.as_deref(), cfg.test.as_deref(), cfg.descriptions.as_deref()]
        .into_iter()
        .flatten()
    {
        if !p.exists() {
            return Err(Error::InvalidConfig(format!("{} does not exist", p.display())));
        }
    }
    let opts = IngestOptions {
        descriptions: cfg.descriptions.as_deref(),
    };
    let mut store = KgStore::ingest(train, cfg.valid.as_deref(), cfg.test.as_deref(), &opts)?;
    if cfg.reverse_relations {
        store = store.add_reverse_relations()?;
    }
    fs::create_dir_all(&cfg.out)?;
    store.save(&Artifacts::new(&cfg.out).store(), cfg.store_hash())?;
    Ok(store.counts())
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub regime: Regime,
    pub initial_loss: f64,
    pub history: Vec<EpochStats>,
    pub steps: usize,
}

/// Trains one encoder per selected regime. `log` gets a `# <regime>` line
/// and then one `epoch<TAB>mean_loss<TAB>active_fraction` line per epoch.
pub fn cmd_train(cfg: &RunConfig, log: &mut dyn Write) -> Result<Vec<TrainSummary>> {
    cfg.validate()?;
    let store = load_store(cfg)?;
    let text = cfg.text_options();
    let vocab = TokenVocab::from_train(&store, &text);
    let art = Artifacts::new(&cfg.out);
    vocab.save(&art.vocab())?;
    let mut out = Vec::new();
    for &regime in cfg.regime.regimes() {
        let sampler_cfg = cfg.sampler_config(regime);
        let inputs = TrainInputs {
            store: &store,
            vocab: &vocab,
            text: &text,
            sampler: &sampler_cfg,
            close: None,
        };
        let hash = cfg.train_hash();
        let every = cfg.checkpoint_every;
        writeln!(log, "# {regime}")?;
        let outcome = trainer::train(&inputs, &cfg.encoder_config(), &cfg.train_config(), |stats, params| {
            writeln!(log, "{}", stats.log_line())?;
            if every > 0 && stats.epoch % every == 0 {
                params.save(&art.epoch_checkpoint(regime, stats.epoch), hash)?;
            }
            Ok(())
        })?;
        outcome.params.save(&art.checkpoint(regime), hash)?;
        out.push(TrainSummary {
            regime,
            initial_loss: outcome.initial_loss,
            history: outcome.history,
            steps: outcome.steps,
        });
    }
    Ok(out)
}

fn build_index(
    cfg: &RunConfig,
    store: &KgStore,
    vocab: &TokenVocab,
    text: &TextOptions,
    regime: Regime,
) -> Result<ReferenceIndex> {
    let params = load_checkpoint(cfg, regime, vocab)?;
    let examples = sampler::sample(store, &cfg.sampler_config(regime), None, derive_seed(cfg.seed, INDEX_STREAM, 0))?;
    let embedder = Embedder {
        params: &params,
        vocab,
        text,
        store,
    };
    eval::build_reference_index(&embedder, &examples, cfg.mode, cfg.ivf_params(), cfg.seed)
}

/// Builds the reference index of each selected regime; returns point counts.
pub fn cmd_index(cfg: &RunConfig) -> Result<Vec<(Regime, usize)>> {
    cfg.validate()?;
    let store = load_store(cfg)?;
    let art = Artifacts::new(&cfg.out);
    for &regime in cfg.regime.regimes() {
        require(&art.checkpoint(regime))?;
    }
    let vocab = load_vocab(cfg)?;
    let text = cfg.text_options();
    let mut out = Vec::new();
    for &regime in cfg.regime.regimes() {
        let index = build_index(cfg, &store, &vocab, &text, regime)?;
        index.save(&art.index(regime), cfg.index_hash())?;
        out.push((regime, index.len()));
    }
    Ok(out)
}

/// Everything evaluation needs for one regime.
pub struct Loaded {
    pub store: KgStore,
    pub vocab: TokenVocab,
    pub text: TextOptions,
    pub params: EncoderParams,
    pub index: ReferenceIndex,
}

impl Loaded {
    pub fn load(cfg: &RunConfig, regime: Regime) -> Result<Self> {
        let store = load_store(cfg)?;
        require(&Artifacts::new(&cfg.out).checkpoint(regime))?;
        let vocab = load_vocab(cfg)?;
        let params = load_checkpoint(cfg, regime, &vocab)?;
        let index = load_index(cfg, regime)?;
        Ok(Self {
            store,
            vocab,
            text: cfg.text_options(),
            params,
            index,
        })
    }

    pub fn embedder(&self) -> Embedder<'_> {
        Embedder {
            params: &self.params,
            vocab: &self.vocab,
            text: &self.text,
            store: &self.store,
        }
    }
}

fn config_echo(cfg: &RunConfig) -> BTreeMap<String, String> {
    cfg.echo().into_iter().collect()
}

/// Replaces `section` of `report.json`, keeping the other sections.
pub fn write_report_section(path: &Path, section: &str, report: &EvalReport) -> Result<()> {
    let mut root = match fs::read_to_string(path) {
        Ok(s) => match serde_json::from_str::<Value>(&s)? {
            Value::Object(m) => m,
            _ => Map::new(),
        },
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Map::new(),
        Err(e) => return Err(e.into()),
    };
    root.insert(section.to_string(), serde_json::to_value(report)?);
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &Value::Object(root))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_eval_classify(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let l = Loaded::load(cfg, Regime::Entity)?;
    let emb = l.embedder();
    let mut classifier = cfg.classifier_config();
    let fit = eval::tune_sigma_on(l.store.valid(), &emb, &l.index, &classifier)?;
    classifier.sigma = Some(fit.sigma);
    let test = l.store.test();
    let result = eval::evaluate_classification(test, &emb, &l.index, &classifier)?;
    if cfg.dump_examples {
        let (scored, _) = eval::score_labeled(test, &emb, &l.index, &classifier)?;
        let mut w = BufWriter::new(File::create(Artifacts::new(&cfg.out).classification_predictions())?);
        let labeled = test.iter().filter(|lt| lt.label.is_some());
        for (lt, (agg, label)) in labeled.zip(&scored) {
            let value = agg.value.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
            let predicted = eval::predict_label(agg, fit.sigma);
            writeln!(
                w,
                "{}\t{}\t{}\t{value}",
                l.store.format_triple(&lt.triple),
                label.sign(),
                predicted.sign()
            )?;
        }
        w.flush()?;
    }
    let mut counters = BTreeMap::new();
    counters.insert("cold_start".to_string(), result.counters.cold_start);
    counters.insert("unlabeled_skipped".to_string(), result.counters.unlabeled_skipped);
    counters.insert("reference_points".to_string(), l.index.len());
    let report = EvalReport {
        task: "triple_classification".into(),
        examples: result.examples,
        accuracy: Some(result.accuracy),
        sigma: Some(fit.sigma),
        validation_accuracy: Some(fit.accuracy),
        counters,
        config: config_echo(cfg),
        ..Default::default()
    };
    write_report_section(&Artifacts::new(&cfg.out).report(), "classification", &report)?;
    Ok(report)
}

fn relation_examples(cfg: &RunConfig, l: &Loaded) -> Result<(Vec<RankedExample>, usize)> {
    let r = eval::evaluate_relation_prediction(l.store.test(), &l.embedder(), &l.index, &cfg.relation_config())?;
    Ok((r.examples, r.skipped_negative))
}

pub fn cmd_eval_relation(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let l = Loaded::load(cfg, Regime::Relation)?;
    let (examples, skipped) = relation_examples(cfg, &l)?;
    let (mean_rank, hits) = eval::summarize_ranks(&examples).ok_or(Error::EmptyTestSplit)?;
    if cfg.dump_examples {
        let mut w = BufWriter::new(File::create(Artifacts::new(&cfg.out).relation_ranks())?);
        for e in &examples {
            writeln!(w, "{}\t{}", l.store.format_triple(&e.triple), e.rank)?;
        }
        w.flush()?;
    }
    let mut counters = BTreeMap::new();
    counters.insert("skipped_negative".to_string(), skipped);
    counters.insert("reference_points".to_string(), l.index.len());
    let report = EvalReport {
        task: "relation_prediction".into(),
        examples: examples.len(),
        mean_rank: Some(mean_rank),
        hits_at_1: Some(hits),
        counters,
        config: config_echo(cfg),
        ..Default::default()
    };
    write_report_section(&Artifacts::new(&cfg.out).report(), "relation_prediction", &report)?;
    Ok(report)
}

/// Relation prediction restricted to long-tail relations, one slice per
/// configured threshold.
pub fn cmd_fewshot(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let l = Loaded::load(cfg, Regime::Relation)?;
    let (examples, _) = relation_examples(cfg, &l)?;
    let slices = eval::few_shot_report(&examples, &l.store, &cfg.fewshot_thresholds);
    let mut counters = BTreeMap::new();
    counters.insert("relations".to_string(), l.store.num_relations());
    counters.insert("train_facts".to_string(), l.store.train().len());
    counters.insert(
        "test_facts".to_string(),
        l.store.split(Split::Test).iter().filter(|lt| lt.is_true_fact()).count(),
    );
    let report = EvalReport {
        task: "few_shot_relation_prediction".into(),
        examples: examples.len(),
        slices,
        counters,
        config: config_echo(cfg),
        ..Default::default()
    };
    write_report_section(&Artifacts::new(&cfg.out).report(), "fewshot", &report)?;
    Ok(report)
}
