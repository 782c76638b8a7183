//! Command-line entry point: `ingest`, `audit`, `train`, `predict`,
//! `merge`, `evaluate`, `ablate`.
//!
//! Exit status is 0 on success, 2 on a usage error and 1 on any other
//! failure. Every command writes only below its `--out` directory and
//! records a `run_manifest.json` there.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::corpus::{attach_coref_annotations, load_multiwoz, read_corpus, split_of, write_corpus, Dialogue, Split, SplitSpec};
use crate::error::{CdstError, Result};
use crate::evaluation::{
    audit_dataset, evaluate, run_ablation, write_per_slot_csv, Ablation, EvalMode, EvalSettings,
};
use crate::model::{load_checkpoint, save_checkpoint, EncoderSpec};
use crate::ontology::SlotInventory;
use crate::tracker::{
    predict_records, track_corpus, write_merged, BasePredictions, MergePolicy, MergeRule, PredictionFile,
};
use crate::training::{tokenizer_for, train, TrainConfig};
use crate::util::{config_hash, write_json, write_jsonl};

/// Ingested corpus file inside a data directory.
pub const CORPUS_FILE: &str = "corpus.jsonl";
/// Default annotation file looked up next to `data.json`.
pub const ANNOTATION_FILE: &str = "coref.json";

#[derive(Debug, Parser)]
#[command(name = "cdst", version, about = "Coreference dialogue state tracker")]
pub struct Cli {
    /// Omit wall-clock timestamps so outputs are byte-reproducible.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Data-loading workers (recorded; loading is sequential).
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Slot inventory JSON; defaults to the built-in 30-slot MultiWOZ list.
    #[arg(long, global = true)]
    pub ontology: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load raw MultiWOZ plus coreference annotations into `corpus.jsonl`.
    Ingest(IngestArgs),
    /// Print corpus statistics and compare them with the reference figures.
    Audit(AuditArgs),
    /// Fine-tune a model and write a checkpoint.
    Train(TrainArgs),
    /// Write coreference predictions for one split.
    Predict(PredictArgs),
    /// Merge coreference predictions into base-tracker states.
    Merge(MergeArgs),
    /// Score predictions against gold states and annotations.
    Evaluate(EvaluateArgs),
    /// Train and score the input ablation matrix.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Raw MultiWOZ directory (`data.json`, split lists) or an ingested
    /// directory (`corpus.jsonl`).
    #[arg(long, env = "CDST_DATA_DIR")]
    pub data: PathBuf,
    /// Coreference annotation file for raw data; defaults to
    /// `<data>/coref.json` when present.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Also write `audit.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit 1 when a reference check fails.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct TrainOverrides {
    /// TOML file mirroring the training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_seq_length: Option<usize>,
    #[arg(long)]
    pub warmup_ratio: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub gradient_clip_norm: Option<f64>,
    /// Coref decision threshold stored with the trained model.
    #[arg(long)]
    pub coref_threshold: Option<f64>,
    /// Pretrained BERT directory (`config.json`, `vocab.txt`,
    /// `model.safetensors`).
    #[arg(long, conflicts_with = "tiny")]
    pub encoder_path: Option<PathBuf>,
    /// Use the small randomly initialized encoder.
    #[arg(long)]
    pub tiny: bool,
}

impl TrainOverrides {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        set!(learning_rate, epochs, batch_size, max_seq_length, warmup_ratio, beta, seed);
        if let Some(t) = self.coref_threshold {
            c.threshold = t;
        }
        if self.max_steps.is_some() {
            c.max_steps = self.max_steps;
        }
        if self.gradient_clip_norm.is_some() {
            c.gradient_clip_norm = self.gradient_clip_norm;
        }
        if let Some(path) = &self.encoder_path {
            c.encoder = EncoderSpec::Pretrained { path: path.clone() };
        }
        if self.tiny && !matches!(c.encoder, EncoderSpec::Tiny { .. }) {
            c.encoder = EncoderSpec::default();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Override the checkpoint's decision threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MergeRuleArgs {
    /// `coref-overrides-base` or `coref-fills-empty-only`.
    #[arg(long, default_value = "coref-overrides-base")]
    pub policy: MergePolicy,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

impl MergeRuleArgs {
    fn rule(&self) -> Result<MergeRule> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(CdstError::Config(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        Ok(MergeRule {
            policy: self.policy,
            threshold: self.threshold,
        })
    }
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Coreference prediction file (`predictions.jsonl`).
    #[arg(long)]
    pub pred: PathBuf,
    /// Base-tracker prediction file; omitted means all-"none" base states.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[command(flatten)]
    pub rule: MergeRuleArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Coreference prediction file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold data directory (raw or ingested).
    #[arg(long, env = "CDST_DATA_DIR")]
    pub gold: PathBuf,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Base-tracker prediction file; omitted scores the coreference model
    /// on its own (`cdst-standalone`).
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[command(flatten)]
    pub rule: MergeRuleArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// Variants besides the base configuration.
    #[arg(long, value_delimiter = ',', default_value = "-uttr,-uttr-slot", allow_hyphen_values = true)]
    pub ablations: Vec<Ablation>,
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[command(flatten)]
    pub rule: MergeRuleArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub resolved_config: serde_json::Value,
    pub config_hash: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub workers: usize,
    pub tool_version: String,
    pub started_at: Option<String>,
    pub finished_at: Option<String>,
}

struct Run {
    command: &'static str,
    deterministic: bool,
    workers: usize,
    started_at: Option<String>,
}

impl Run {
    fn new(command: &'static str, cli: &Cli) -> Self {
        Self {
            command,
            deterministic: cli.deterministic,
            workers: cli.workers,
            started_at: (!cli.deterministic).then(|| chrono::Utc::now().to_rfc3339()),
        }
    }

    /// Hash identifying this run's command, configuration and inputs.
    fn hash<C: Serialize>(&self, config: &C, inputs: &[PathBuf]) -> String {
        config_hash(&(self.command, config, inputs))
    }

    fn finish<C: Serialize>(self, out: &Path, config: &C, seed: Option<u64>, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> Result<String> {
        let hash = self.hash(config, &inputs);
        let manifest = RunManifest {
            command: self.command.into(),
            resolved_config: serde_json::to_value(config).map_err(|e| CdstError::json("run manifest", e))?,
            config_hash: hash.clone(),
            inputs,
            outputs,
            seed,
            workers: self.workers,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_at: self.started_at,
            finished_at: (!self.deterministic).then(|| chrono::Utc::now().to_rfc3339()),
        };
        write_json(&out.join("run_manifest.json"), &manifest)?;
        Ok(hash)
    }
}

fn inventory(cli: &Cli) -> Result<SlotInventory> {
    match &cli.ontology {
        Some(path) => SlotInventory::from_file(path),
        None => Ok(SlotInventory::multiwoz()),
    }
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CdstError::io(dir, e))
}

/// Loads an ingested directory, or raw MultiWOZ with annotations attached.
pub fn load_corpus_dir(dir: &Path, annotations: Option<&Path>, inventory: &SlotInventory) -> Result<Vec<Dialogue>> {
    let ingested = dir.join(CORPUS_FILE);
    if ingested.is_file() {
        let dialogues = read_corpus(&ingested)?;
        for d in &dialogues {
            d.validate(inventory)?;
        }
        return Ok(dialogues);
    }
    let (dialogues, report) = load_multiwoz(dir, &SplitSpec::in_dir(dir), inventory)?;
    info!("loaded {} dialogues, skipped {}", report.loaded, report.skipped.len());
    attach(dialogues, dir, annotations, inventory)
}

fn attach(dialogues: Vec<Dialogue>, dir: &Path, annotations: Option<&Path>, inventory: &SlotInventory) -> Result<Vec<Dialogue>> {
    let default = dir.join(ANNOTATION_FILE);
    let path = match annotations {
        Some(p) => p.to_path_buf(),
        None if default.is_file() => default,
        None => return Ok(dialogues),
    };
    let (dialogues, report) = attach_coref_annotations(dialogues, &path, inventory)?;
    info!(
        "attached {} of {} annotations ({} alignment failures)",
        report.attached, report.entries, report.alignment_failures
    );
    Ok(dialogues)
}

fn input_paths(data: &DataArgs) -> Vec<PathBuf> {
    std::iter::once(data.data.clone()).chain(data.annotations.clone()).collect()
}

fn cmd_ingest(cli: &Cli, args: &IngestArgs) -> Result<()> {
    let run = Run::new("ingest", cli);
    let inv = inventory(cli)?;
    create_out(&args.out)?;
    let (dialogues, load) = load_multiwoz(&args.data.data, &SplitSpec::in_dir(&args.data.data), &inv)?;
    let default = args.data.data.join(ANNOTATION_FILE);
    let path = args.data.annotations.clone().or_else(|| default.is_file().then_some(default));
    let (dialogues, annotations) = match &path {
        Some(p) => {
            let (d, r) = attach_coref_annotations(dialogues, p, &inv)?;
            (d, Some(r))
        }
        None => (dialogues, None),
    };
    let corpus = args.out.join(CORPUS_FILE);
    write_corpus(&corpus, &dialogues)?;
    let report = serde_json::json!({ "load": load, "annotations": annotations });
    let report_path = args.out.join("ingest_report.json");
    write_json(&report_path, &report)?;
    println!("{} dialogues written to {}", dialogues.len(), corpus.display());
    let inputs = input_paths(&args.data).into_iter().chain(path.clone()).collect();
    run.finish(&args.out, &serde_json::json!({ "slots": inv.len() }), None, inputs, vec![corpus, report_path])?;
    Ok(())
}

fn cmd_audit(cli: &Cli, args: &AuditArgs) -> Result<bool> {
    let inv = inventory(cli)?;
    let dialogues = load_corpus_dir(&args.data.data, args.data.annotations.as_deref(), &inv)?;
    let report = audit_dataset(&dialogues, &inv, None);
    print!("{}", report.to_table());
    let checks = report.reference_checks();
    println!("\nreference checks:");
    for c in &checks {
        println!("  [{}] {:<27} expected {:<16} observed {}", if c.pass { "ok" } else { "--" }, c.name, c.expected, c.observed);
    }
    if let Some(out) = &args.out {
        let run = Run::new("audit", cli);
        create_out(out)?;
        let path = out.join("audit.json");
        write_json(&path, &serde_json::json!({ "report": report, "reference_checks": checks }))?;
        run.finish(out, &serde_json::json!({ "strict": args.strict }), None, input_paths(&args.data), vec![path])?;
    }
    Ok(!args.strict || checks.iter().all(|c| c.pass))
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let run = Run::new("train", cli);
    let config = args.overrides.resolve()?;
    let inv = inventory(cli)?;
    let dialogues = load_corpus_dir(&args.data.data, args.data.annotations.as_deref(), &inv)?;
    let train_set = split_of(&dialogues, Split::Train);
    let dev_set = split_of(&dialogues, Split::Dev);
    let tokenizer = tokenizer_for(&config, &train_set, &inv)?;
    create_out(&args.out)?;
    let outcome = train(&train_set, &dev_set, tokenizer, inv, &config)?;
    let ckpt = args.out.join("checkpoint");
    save_checkpoint(&outcome.model, &ckpt, config.beta, Some(config.hash()))?;
    let report_path = args.out.join("train_report.json");
    write_json(&report_path, &outcome.report)?;
    let config_path = args.out.join("train_config.toml");
    std::fs::write(&config_path, config.to_toml()?).map_err(|e| CdstError::io(&config_path, e))?;
    let best = outcome.report.best();
    println!(
        "best epoch {} of {}: dev slot-type {:.4} span {:.4} joint {:.4}",
        outcome.report.best_epoch,
        outcome.report.epochs.len(),
        best.dev.slot_type_accuracy,
        best.dev.span_exact_match,
        best.dev.joint
    );
    let mut inputs = input_paths(&args.data);
    inputs.extend(args.overrides.config.clone());
    run.finish(&args.out, &config, Some(config.seed), inputs, vec![ckpt, report_path, config_path])?;
    Ok(())
}

fn cmd_predict(cli: &Cli, args: &PredictArgs) -> Result<()> {
    let run = Run::new("predict", cli);
    let (mut model, manifest) = load_checkpoint(&args.checkpoint)?;
    if let Some(t) = args.threshold {
        let mut decode = *model.decode_options();
        decode.threshold = t;
        model.set_decode_options(decode);
    }
    let inv = model.inventory().clone();
    let dialogues = split_of(&load_corpus_dir(&args.data.data, args.data.annotations.as_deref(), &inv)?, args.split);
    if dialogues.is_empty() {
        return Err(CdstError::MissingInput(format!("no {} dialogues", args.split)));
    }
    create_out(&args.out)?;
    let resolved = serde_json::json!({
        "split": args.split,
        "decode": model.decode_options(),
        "train_config_hash": manifest.train_config_hash,
    });
    let mut inputs = input_paths(&args.data);
    inputs.push(args.checkpoint.clone());
    let hash = run.hash(&resolved, &inputs);
    let mut records = predict_records(&model, &dialogues)?;
    for r in &mut records {
        r.manifest_hash = Some(hash.clone());
    }
    let path = args.out.join("predictions.jsonl");
    write_jsonl(&path, &records)?;
    println!("{} turn predictions written to {}", records.len(), path.display());
    run.finish(&args.out, &resolved, None, inputs, vec![path])?;
    Ok(())
}

fn base_predictions(path: Option<&Path>, dialogues: &[Dialogue], inv: &SlotInventory) -> Result<(BasePredictions, EvalMode)> {
    match path {
        Some(p) => Ok((BasePredictions::read(p, inv)?, EvalMode::Merged)),
        None => Ok((BasePredictions::empty(dialogues, inv), EvalMode::CdstStandalone)),
    }
}

fn cmd_merge(cli: &Cli, args: &MergeArgs) -> Result<()> {
    let run = Run::new("merge", cli);
    let inv = inventory(cli)?;
    let rule = args.rule.rule()?;
    let dialogues = split_of(&load_corpus_dir(&args.data.data, args.data.annotations.as_deref(), &inv)?, args.split);
    let predictions = PredictionFile::read(&args.pred)?;
    let (base, mode) = base_predictions(args.base.as_deref(), &dialogues, &inv)?;
    create_out(&args.out)?;
    let resolved = serde_json::json!({ "split": args.split, "rule": rule, "mode": mode });
    let mut inputs = input_paths(&args.data);
    inputs.push(args.pred.clone());
    inputs.extend(args.base.clone());
    let hash = run.hash(&resolved, &inputs);
    let mut merged = track_corpus(&dialogues, &base, &predictions, rule, &inv)?;
    for r in &mut merged {
        r.manifest_hash = Some(hash.clone());
    }
    let path = args.out.join("merged.jsonl");
    write_merged(&path, &merged)?;
    let edits: usize = merged
        .iter()
        .map(|r| r.provenance.values().filter(|p| **p == crate::tracker::Provenance::Coref).count())
        .sum();
    println!("{} merged states ({edits} coref edits) written to {}", merged.len(), path.display());
    run.finish(&args.out, &resolved, None, inputs, vec![path])?;
    Ok(())
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let run = Run::new("evaluate", cli);
    let inv = inventory(cli)?;
    let rule = args.rule.rule()?;
    let dialogues = split_of(&load_corpus_dir(&args.gold, args.annotations.as_deref(), &inv)?, args.split);
    let predictions = PredictionFile::read(&args.pred)?;
    let (base, mode) = base_predictions(args.base.as_deref(), &dialogues, &inv)?;
    create_out(&args.out)?;
    let resolved = serde_json::json!({ "split": args.split, "rule": rule, "mode": mode });
    let mut inputs = vec![args.pred.clone(), args.gold.clone()];
    inputs.extend(args.annotations.clone());
    inputs.extend(args.base.clone());
    let hash = run.hash(&resolved, &inputs);
    let merged = track_corpus(&dialogues, &base, &predictions, rule, &inv)?;
    let settings = EvalSettings {
        mode,
        policy: rule.policy,
        threshold: rule.threshold,
    };
    let report = evaluate(&merged, &predictions, &dialogues, &inv, settings, Some(hash))?;
    print!("{}", report.to_table());
    let report_path = args.out.join("eval_report.json");
    write_json(&report_path, &report)?;
    let csv_path = args.out.join("per_slot_coref_accuracy.csv");
    write_per_slot_csv(&csv_path, &report.per_slot_coref_accuracy)?;
    run.finish(&args.out, &resolved, None, inputs, vec![report_path, csv_path])?;
    Ok(())
}

fn cmd_ablate(cli: &Cli, args: &AblateArgs) -> Result<()> {
    let run = Run::new("ablate", cli);
    let config = args.overrides.resolve()?;
    let rule = args.rule.rule()?;
    let inv = inventory(cli)?;
    let dialogues = load_corpus_dir(&args.data.data, args.data.annotations.as_deref(), &inv)?;
    let train_set = split_of(&dialogues, Split::Train);
    let dev_set = split_of(&dialogues, Split::Dev);
    let test_set = split_of(&dialogues, Split::Test);
    let base = match &args.base {
        Some(p) => Some(BasePredictions::read(p, &inv)?),
        None => None,
    };
    let tokenizer = tokenizer_for(&config, &train_set, &inv)?;
    create_out(&args.out)?;
    let table = run_ablation(&train_set, &dev_set, &test_set, &tokenizer, &inv, &config, &args.ablations, base.as_ref(), rule)?;
    print!("{}", table.to_table());
    let path = args.out.join("ablation.json");
    write_json(&path, &table)?;
    let resolved = serde_json::json!({ "config": config, "ablations": args.ablations, "rule": rule });
    let mut inputs = input_paths(&args.data);
    inputs.extend(args.overrides.config.clone());
    inputs.extend(args.base.clone());
    run.finish(&args.out, &resolved, Some(config.seed), inputs, vec![path])?;
    Ok(())
}

/// Runs one command line and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(&cli, a).map(|_| true),
        Command::Audit(a) => cmd_audit(&cli, a),
        Command::Train(a) => cmd_train(&cli, a).map(|_| true),
        Command::Predict(a) => cmd_predict(&cli, a).map(|_| true),
        Command::Merge(a) => cmd_merge(&cli, a).map(|_| true),
        Command::Evaluate(a) => cmd_evaluate(&cli, a).map(|_| true),
        Command::Ablate(a) => cmd_ablate(&cli, a).map(|_| true),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            1
        }
    }
}
