//! The `masc` command line.

use crate::config::{parse_command, RunConfig, ABLATIONS};
use crate::data::{load_split, split_path, write_jsonl, Sample};
use crate::error::{Error, Result};
use crate::eval::{dataset_stats, evaluate_model, parse_lexicon, DEFAULT_AESTHETIC_LEXICON};
use crate::learning::build_input;
use crate::learning::train::{
    best_checkpoint, enabled_tasks, feature_provider, read_metrics, target_text, train, Checkpoint,
};
use crate::rationale::{
    attach_rationales, generate_rationales, CommandClient, GenerateOptions, LlmClient, MockClient, PromptPool,
    RationaleCache, RunStatus,
};
use crate::translation::{
    prepare_sample, AuxCache, Captioner, CommandProvider, FaceDescriber, FaceDetector, GridEmbedder, ImageDir,
    ImageSource, MockCaptioner, MockFaceDescriber, MockFaceDetector, Providers, SyntheticImages,
};
use crate::util::atomic_write;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Duration;

/// Exit code for errors outside a run's own status.
pub const EXIT_ERROR: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "masc", version, about = "Aspect sentiment over image-text pairs with rationale-aware training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Config file, then preset, then `--set` overrides, then ablations.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// TOML run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset preset: twitter2015, twitter2017 or political.
    #[arg(long)]
    pub preset: Option<String>,
    /// Ablation switch, repeatable: srg, irg, srg-irg, lsa, od, aes-cap, irg-ac.
    #[arg(long = "ablate")]
    pub ablate: Vec<String>,
    /// `key=value` override, repeatable; nested keys use dots (lsa.beta=0.3).
    #[arg(long = "set")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), self.preset.as_deref(), &self.ablate, &self.set)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate SR and IR rationales for a split.
    BuildRationales {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "train")]
        split: String,
        /// Output directory for `<split>.jsonl` with rationales attached and
        /// `<split>.rationales.jsonl`; defaults to `<out_dir>/data`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Resolve objects and fill caption and object-description texts.
    PrepareAux {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "train")]
        split: String,
        /// Output directory; defaults to `<out_dir>/data`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train on `train_split`, evaluating on `dev_split` each epoch.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from the latest checkpoint in `out_dir`.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on a split and write the JSON report.
    Evaluate {
        /// Checkpoint file, or a run directory to use its best checkpoint.
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Dataset directory; defaults to the checkpoint's own.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Report path; printed to stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write intensity histograms as `<output stem>.<source>.csv`.
        #[arg(long)]
        csv: bool,
        /// Aesthetic lexicon, one word per line.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Train one run per ablation row under `<out_dir>/<row>`.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Rows to run; `full` is the unablated model. Defaults to all.
        #[arg(long = "row")]
        rows: Vec<String>,
    },
    /// Dataset statistics table for one or more splits.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "split", default_values_t = vec!["train".to_string()])]
        splits: Vec<String>,
        #[arg(long)]
        json: bool,
    },
    /// Summarize a checkpoint, or show model inputs and targets for samples.
    Inspect {
        /// Checkpoint (.json) or split file (.jsonl).
        path: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Only this sample id.
        #[arg(long)]
        id: Option<String>,
        /// At most this many samples.
        #[arg(long, default_value_t = 3)]
        limit: usize,
    },
}

/// Prints a line; a closed stdout (e.g. piped into `head`) ends the
/// process quietly instead of panicking.
macro_rules! emit {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let mut out = std::io::stdout().lock();
        if let Err(e) = writeln!(out, $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            return Err(e.into());
        }
    }};
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    emit!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn data_dir(cfg: &RunConfig, output: Option<PathBuf>) -> PathBuf {
    output.unwrap_or_else(|| cfg.out_dir.join("data"))
}

fn write_run_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    atomic_write(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    Ok(())
}

fn image_source(cfg: &RunConfig) -> Box<dyn ImageSource> {
    match &cfg.providers.image_dir {
        Some(dir) => Box::new(ImageDir { dir: dir.clone() }),
        None => Box::new(SyntheticImages::new(cfg.providers.image_seed)),
    }
}

fn llm_client(cfg: &RunConfig) -> Result<Box<dyn LlmClient>> {
    Ok(match parse_command(&cfg.providers.llm)? {
        None => Box::new(MockClient::default()),
        Some((program, args)) => Box::new(CommandClient {
            program,
            args,
            model: cfg.providers.llm_model.clone(),
        }),
    })
}

#[derive(Debug, Serialize)]
struct RationaleSummary {
    split: String,
    records: usize,
    failures: Vec<crate::rationale::SampleFailure>,
    calls: usize,
    cache_hits: usize,
    status: RunStatus,
    output: PathBuf,
}

fn build_rationales(cfg: &RunConfig, split: &str, output: Option<PathBuf>) -> Result<i32> {
    let mut samples = load_split(&cfg.dataset, split)?;
    let pool = match &cfg.providers.prompt_pool {
        Some(p) => PromptPool::load(p)?,
        None => PromptPool::default_pool(),
    };
    let client = llm_client(cfg)?;
    let cache = RationaleCache::new(cfg.cache_dir().join("rationales"));
    let images = image_source(cfg);
    let opts = GenerateOptions {
        seed: cfg.seed,
        retries: cfg.providers.retries,
        backoff: Duration::from_millis(cfg.providers.backoff_ms),
        parallelism: cfg.providers.parallelism,
        budget: cfg.providers.budget,
    };
    let report = generate_rationales(&samples, &pool, client.as_ref(), &cache, Some(images.as_ref()), &opts);
    let out = data_dir(cfg, output);
    write_jsonl(&out.join(format!("{split}.rationales.jsonl")), &report.records)?;
    attach_rationales(&mut samples, &report.records);
    write_jsonl(&split_path(&out, split), &samples)?;
    write_run_config(cfg, &out)?;
    for f in &report.failures {
        log::warn!("sample {} failed: {}", f.sample_id, f.message);
    }
    print_json(&RationaleSummary {
        split: split.into(),
        records: report.records.len(),
        failures: report.failures.clone(),
        calls: report.calls,
        cache_hits: report.cache_hits,
        status: report.status,
        output: out,
    })?;
    Ok(report.status.exit_code())
}

fn prepare_aux(cfg: &RunConfig, split: &str, output: Option<PathBuf>) -> Result<i32> {
    let samples = load_split(&cfg.dataset, split)?;
    let images = image_source(cfg);
    let scorer = GridEmbedder::default();
    let (captioner, detector, describer): (Box<dyn Captioner>, Box<dyn FaceDetector>, Box<dyn FaceDescriber>) =
        match parse_command(&cfg.providers.vision)? {
            None => (
                Box::new(MockCaptioner::default()),
                Box::new(MockFaceDetector::default()),
                Box::new(MockFaceDescriber),
            ),
            Some((program, args)) => {
                let p = CommandProvider::new(&program, &args);
                (Box::new(p.clone()), Box::new(p.clone()), Box::new(p))
            }
        };
    let providers = Providers {
        images: images.as_ref(),
        scorer: &scorer,
        detector: detector.as_ref(),
        captioner: captioner.as_ref(),
        describer: describer.as_ref(),
    };
    let cache = AuxCache::new(cfg.cache_dir().join("aux"));
    let mut out_samples = Vec::with_capacity(samples.len());
    let mut failures = Vec::new();
    for s in &samples {
        match prepare_sample(s, &providers, Some(&cache)) {
            Ok(p) => out_samples.push(p),
            Err(e) => {
                log::warn!("sample {} failed: {e}", s.id);
                failures.push(crate::rationale::SampleFailure {
                    sample_id: s.id.clone(),
                    message: e.to_string(),
                });
                out_samples.push(s.clone());
            }
        }
    }
    let out = data_dir(cfg, output);
    write_jsonl(&split_path(&out, split), &out_samples)?;
    write_run_config(cfg, &out)?;
    let status = if failures.is_empty() {
        RunStatus::Complete
    } else if failures.len() == samples.len() {
        RunStatus::Failed
    } else {
        RunStatus::Partial
    };
    print_json(&serde_json::json!({
        "split": split,
        "samples": samples.len(),
        "failures": failures,
        "status": status,
        "output": out,
    }))?;
    Ok(status.exit_code())
}

fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.is_dir() {
        best_checkpoint(path)
    } else {
        Ok(path.to_path_buf())
    }
}

pub fn evaluate(
    checkpoint: &Path,
    split: &str,
    dataset: Option<&Path>,
    lexicon: Option<&Path>,
) -> Result<crate::eval::EvalReport> {
    let ck = Checkpoint::load(&resolve_checkpoint(checkpoint)?)?;
    let model = ck.model()?;
    let dir = dataset.unwrap_or(&model.config.dataset);
    let path = split_path(dir, split);
    if !path.exists() {
        return Err(Error::InvalidInput(format!("split `{split}` not found at {}", path.display())));
    }
    let samples = load_split(dir, split)?;
    let lex = match lexicon {
        Some(p) => parse_lexicon(&std::fs::read_to_string(p)?),
        None => parse_lexicon(DEFAULT_AESTHETIC_LEXICON),
    };
    let features = model.config.ablation.fuse_visual.then(|| feature_provider(&model.config));
    evaluate_model(&model, split, &samples, features.as_deref(), &lex)
}

#[derive(Debug, Serialize)]
struct AblationRow {
    row: String,
    out_dir: PathBuf,
    enable_srg: bool,
    enable_irg: bool,
    enable_lsa: bool,
    enable_od: bool,
    enable_aes_cap: bool,
    caption: crate::learning::CaptionSource,
    best_epoch: Option<usize>,
    dev_acc: Option<f64>,
    dev_f1: Option<f64>,
    loss_terms: Vec<&'static str>,
}

fn ablate(cfg: &RunConfig, rows: &[String]) -> Result<i32> {
    let rows: Vec<String> = if rows.is_empty() {
        std::iter::once("full".to_string())
            .chain(ABLATIONS.iter().map(|s| s.to_string()))
            .collect()
    } else {
        rows.to_vec()
    };
    let mut table = Vec::new();
    for row in &rows {
        let mut c = cfg.clone();
        if row != "full" {
            c.ablation.apply(row)?;
        }
        c.out_dir = cfg.out_dir.join(row);
        c.validate()?;
        log::info!("ablation row {row}");
        let report = train(&c, false)?;
        let best = report.best.as_ref();
        let dev = best.and_then(|b| report.rows.iter().find(|r| r.split == "dev" && r.epoch == b.epoch));
        let terms = report.rows.first().map(|r| r.loss.terms()).unwrap_or_default();
        table.push(AblationRow {
            row: row.clone(),
            out_dir: c.out_dir.clone(),
            enable_srg: c.ablation.enable_srg,
            enable_irg: c.ablation.enable_irg,
            enable_lsa: c.ablation.enable_lsa,
            enable_od: c.ablation.enable_od,
            enable_aes_cap: c.ablation.enable_aes_cap,
            caption: c.ablation.caption,
            best_epoch: best.map(|b| b.epoch),
            dev_acc: dev.and_then(|d| d.acc),
            dev_f1: dev.and_then(|d| d.f1),
            loss_terms: terms,
        });
    }
    write_jsonl(&cfg.out_dir.join("ablation.jsonl"), &table)?;
    print_json(&table)?;
    Ok(0)
}

fn stats(dataset: &Path, splits: &[String], json: bool) -> Result<i32> {
    let mut all = Vec::new();
    for split in splits {
        let s = dataset_stats(&load_split(dataset, split)?);
        for f in s.flags() {
            log::warn!("{split}: {f}");
        }
        if !json {
            emit!("{}", s.to_table(split));
        }
        all.push((split.clone(), s));
    }
    if json {
        let map: serde_json::Map<String, serde_json::Value> = all
            .into_iter()
            .map(|(k, v)| Ok((k, serde_json::to_value(v)?)))
            .collect::<Result<_>>()?;
        print_json(&map)?;
    }
    Ok(0)
}

#[derive(Debug, Serialize)]
struct CheckpointSummary {
    epoch: usize,
    step: u64,
    epoch_complete: bool,
    seed: u64,
    vocab: usize,
    parameters: usize,
    tasks: Vec<&'static str>,
    ablation: crate::config::Ablation,
    metrics: Vec<crate::learning::train::MetricsRow>,
}

fn inspect(path: &Path, cfg: &ConfigArgs, id: Option<&str>, limit: usize) -> Result<i32> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let run = cfg.resolve()?;
        let samples: Vec<Sample> = crate::data::read_jsonl(path)?;
        let chosen = samples.iter().filter(|s| id.is_none_or(|i| s.id == i)).take(limit);
        let opts = run.ablation.input_options();
        for s in chosen {
            emit!("# {} ({})", s.id, s.label.as_str());
            for t in enabled_tasks(&run) {
                let input = build_input(t, s, &opts).map(|i| i.text()).unwrap_or_else(|e| format!("<{e}>"));
                let target = target_text(t, s).unwrap_or_else(|e| format!("<{e}>"));
                emit!("{:>3} in : {input}", t.name());
                emit!("{:>3} out: {target}", t.name());
            }
        }
        return Ok(0);
    }
    let path = resolve_checkpoint(path)?;
    let ck = Checkpoint::load(&path)?;
    let metrics = path
        .parent()
        .and_then(Path::parent)
        .map(|run| read_metrics(&run.join("metrics.jsonl")))
        .transpose()?
        .unwrap_or_default();
    print_json(&CheckpointSummary {
        epoch: ck.epoch,
        step: ck.step,
        epoch_complete: ck.epoch_complete,
        seed: ck.seed,
        vocab: ck.vocab.len(),
        parameters: ck.params.num_scalars(),
        tasks: enabled_tasks(&ck.config).iter().map(|t| t.name()).collect(),
        ablation: ck.config.ablation.clone(),
        metrics,
    })?;
    Ok(0)
}

fn write_report(report: &crate::eval::EvalReport, output: Option<&Path>, csv: bool) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    match output {
        Some(p) => {
            atomic_write(p, format!("{json}\n").as_bytes())?;
            if csv {
                let stem = p.with_extension("");
                for (source, h) in &report.intensity {
                    let path = PathBuf::from(format!("{}.{source}.csv", stem.display()));
                    atomic_write(&path, h.to_csv().as_bytes())?;
                }
            }
        }
        None => emit!("{json}"),
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::BuildRationales { cfg, split, output } => build_rationales(&cfg.resolve()?, &split, output),
        Command::PrepareAux { cfg, split, output } => prepare_aux(&cfg.resolve()?, &split, output),
        Command::Train { cfg, resume } => {
            let c = cfg.resolve()?;
            let report = train(&c, resume)?;
            print_json(&serde_json::json!({
                "out_dir": c.out_dir,
                "steps": report.steps.last().map(|s| s.step).unwrap_or(0),
                "best": report.best,
                "last_checkpoint": report.last_checkpoint,
            }))?;
            Ok(0)
        }
        Command::Evaluate {
            checkpoint,
            split,
            dataset,
            output,
            csv,
            lexicon,
        } => {
            let report = evaluate(&checkpoint, &split, dataset.as_deref(), lexicon.as_deref())?;
            write_report(&report, output.as_deref(), csv)?;
            Ok(0)
        }
        Command::Ablate { cfg, rows } => ablate(&cfg.resolve()?, &rows),
        Command::Stats { dataset, splits, json } => stats(&dataset, &splits, json),
        Command::Inspect { path, cfg, id, limit } => inspect(&path, &cfg, id.as_deref(), limit),
    }
}

/// Parses arguments, runs, and maps errors to [`EXIT_ERROR`].
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
