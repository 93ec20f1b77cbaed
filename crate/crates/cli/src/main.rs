use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kgrefine::config::RunConfig;
use kgrefine::eval::EvalReport;
use kgrefine::pipeline;
use kgrefine::trainer::FINETUNE_LEARNING_RATE;

#[derive(Parser)]
#[command(name = "kgrefine", version, about = "Knowledge-graph refinement with triplet-trained embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Parse triple files into a store.
    Ingest,
    /// Train one encoder per regime.
    Train,
    /// Embed training anchors into reference indexes.
    Index,
    /// Tune the threshold on valid and classify test triples.
    EvalClassify,
    /// Rank relations for test (head, tail) pairs.
    EvalRelation,
    /// Relation prediction on long-tail relation slices.
    Fewshot,
}

/// Flags override the config file, which overrides the defaults.
#[derive(Args)]
struct Overrides {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts and the report.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    train: Option<PathBuf>,
    #[arg(long, global = true)]
    valid: Option<PathBuf>,
    #[arg(long, global = true)]
    test: Option<PathBuf>,
    /// `entity_label<TAB>text` descriptions appended to entity labels.
    #[arg(long, global = true)]
    descriptions: Option<PathBuf>,
    /// relation, entity or both.
    #[arg(long, global = true)]
    regime: Option<String>,
    /// bag or transformer.
    #[arg(long, global = true)]
    architecture: Option<String>,
    #[arg(long, global = true)]
    margin: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    /// Use the 2e-5 fine-tuning learning rate.
    #[arg(long, global = true, conflicts_with = "learning_rate")]
    finetune_lr: bool,
    /// Neighbors consulted by relation prediction.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// min or k_mode.
    #[arg(long, global = true)]
    strategy: Option<String>,
    /// min, max or mean.
    #[arg(long, global = true)]
    aggregation: Option<String>,
    #[arg(long, global = true)]
    threshold_pct: Option<f64>,
    #[arg(long, global = true)]
    hrt_prob: Option<f64>,
    #[arg(long, global = true)]
    n_per_anchor: Option<usize>,
    /// exact or ivf.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Accept artifacts built under a different config.
    #[arg(long, global = true)]
    force: bool,
    /// Write per-example TSV dumps next to the report.
    #[arg(long, global = true)]
    dump_examples: bool,
    /// Any other config key, as KEY=VALUE.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn pairs(&self) -> Result<Vec<(String, String)>> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("out", path(&self.out));
        put("train", path(&self.train));
        put("valid", path(&self.valid));
        put("test", path(&self.test));
        put("descriptions", path(&self.descriptions));
        put("regime", self.regime.clone());
        put("architecture", self.architecture.clone());
        put("margin", self.margin.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("learning_rate", self.learning_rate.map(|v| v.to_string()));
        put("learning_rate", self.finetune_lr.then(|| FINETUNE_LEARNING_RATE.to_string()));
        put("k", self.k.map(|v| v.to_string()));
        put("strategy", self.strategy.clone());
        put("aggregation", self.aggregation.clone());
        put("threshold_pct", self.threshold_pct.map(|v| v.to_string()));
        put("hrt_prob", self.hrt_prob.map(|v| v.to_string()));
        put("n_per_anchor", self.n_per_anchor.map(|v| v.to_string()));
        put("mode", self.mode.clone());
        put("seed", self.seed.map(|v| v.to_string()));
        put("workers", self.workers.map(|v| v.to_string()));
        put("force", self.force.then(|| "true".to_string()));
        put("dump_examples", self.dump_examples.then(|| "true".to_string()));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p).with_context(|| format!("reading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        for (k, v) in self.pairs()? {
            cfg.set(&k, &v, Path::new("")).with_context(|| format!("--{}", k.replace('_', "-")))?;
        }
        Ok(cfg)
    }
}

fn print_report(report: &EvalReport) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, report)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.overrides.resolve()?;
    pipeline::configure_workers(cfg.workers);
    match cli.command {
        Command::Ingest => {
            let c = pipeline::cmd_ingest(&cfg)?;
            println!("relations\t{}", c.relations);
            println!("entities\t{}", c.entities);
            println!("train\t{}", c.train);
            println!("valid\t{}", c.valid);
            println!("test\t{}", c.test);
        }
        Command::Train => {
            let mut out = io::stdout().lock();
            for s in pipeline::cmd_train(&cfg, &mut out)? {
                writeln!(out, "# {} initial_loss {:.6} steps {}", s.regime, s.initial_loss, s.steps)?;
            }
        }
        Command::Index => {
            for (regime, n) in pipeline::cmd_index(&cfg)? {
                println!("{regime}\t{n} reference points");
            }
        }
        Command::EvalClassify => print_report(&pipeline::cmd_eval_classify(&cfg)?)?,
        Command::EvalRelation => print_report(&pipeline::cmd_eval_relation(&cfg)?)?,
        Command::Fewshot => print_report(&pipeline::cmd_fewshot(&cfg)?)?,
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
