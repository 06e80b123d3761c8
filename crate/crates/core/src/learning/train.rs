//! Joint training: every step runs the enabled generation tasks on one batch
//! plus the alignment loss over the batch's image-sentence pairs.

use super::input::build_input;
use super::markers::{format_target, parse_output, ParsedOutput, Prediction, Task};
use super::optim::{clip_grad_norm, AdamW};
use super::seq2seq::Seq2Seq;
use super::vocab::{Vocab, VocabBuilder};
use super::LossComponents;
use crate::autograd::{Graph, Tensor, Var};
use crate::config::RunConfig;
use crate::data::{load_split, split_path, Sample};
use crate::error::{Error, Result};
use crate::eval::{accuracy_f1, Averaging, MetricReport};
use crate::features::{CachedFeatures, FeatureProvider, PatchFeatures, SyntheticFeatures, TokenFeatures};
use crate::lsa::{GumbelNoise, LsaModel, SelectionMode};
use crate::params::{Bound, ParamStore};
use crate::util::{atomic_write, rng_for};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

pub fn enabled_tasks(config: &RunConfig) -> Vec<Task> {
    let a = &config.ablation;
    let mut tasks = vec![Task::SC];
    if a.enable_srg {
        tasks.push(Task::SRG);
    }
    if a.enable_irg {
        tasks.push(Task::IRG);
    }
    tasks
}

fn uses_features(config: &RunConfig) -> bool {
    config.ablation.enable_lsa || config.ablation.fuse_visual
}

pub fn target_text(task: Task, sample: &Sample) -> Result<String> {
    let rationale = match task {
        Task::SC => None,
        Task::SRG => Some(sample.sr.as_deref().ok_or_else(|| {
            Error::InvalidInput(format!("sample {} has no sr text; build rationales or ablate srg", sample.id))
        })?),
        Task::IRG => Some(sample.ir.as_deref().ok_or_else(|| {
            Error::InvalidInput(format!("sample {} has no ir text; build rationales or ablate irg", sample.id))
        })?),
    };
    format_target(task, sample.label, rationale)
}

/// Feature provider for a run. The cache directory is keyed by the
/// provider settings so a changed seed never reads stale rows.
pub fn feature_provider(config: &RunConfig) -> Box<dyn FeatureProvider> {
    let l = &config.lsa;
    let seed = config.providers.feature_seed;
    let dir = config
        .cache_dir()
        .join("features")
        .join(format!("synthetic-d{}-p{}-s{seed}", l.dim, l.num_patches));
    Box::new(CachedFeatures::new(SyntheticFeatures::new(l.dim, l.num_patches, seed), dir))
}

/// Backbone, alignment module and vocabulary with one shared parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub seq2seq: Seq2Seq,
    pub params: ParamStore,
}

impl Model {
    pub fn init(config: &RunConfig, vocab: Vocab) -> Self {
        let mut rng = rng_for(config.seed, &[b"init"]);
        let visual_dim = config.ablation.fuse_visual.then_some(config.lsa.dim);
        let (seq2seq, mut params) = Seq2Seq::new(config.model.clone(), vocab.len(), visual_dim, &mut rng);
        if uses_features(config) {
            params.extend(LsaModel::new(config.lsa.clone(), &mut rng).params);
        }
        Self {
            config: config.clone(),
            vocab,
            seq2seq,
            params,
        }
    }

    fn lsa(&self) -> LsaModel {
        LsaModel::from_store(self.config.lsa.clone(), &self.params)
    }

    /// Calibrated patch rows with zero noise, or `None` without visual fusion.
    pub fn visual_rows(&self, patches: &PatchFeatures, tokens: &TokenFeatures) -> Result<Option<Tensor>> {
        if !self.config.ablation.fuse_visual {
            return Ok(None);
        }
        let (_, _, cal) = self.lsa().calibrate_pair(patches, tokens, &GumbelNoise::zeros(patches.len()))?;
        Ok(Some(cal.rows()))
    }

    pub fn encode(&self, task: Task, sample: &Sample) -> Result<Vec<usize>> {
        let input = build_input(task, sample, &self.config.ablation.input_options())?;
        Ok(self.vocab.encode_input(&input))
    }

    /// Greedy output text and its parse.
    pub fn predict(&self, task: Task, sample: &Sample, visual: Option<&Tensor>) -> Result<(String, ParsedOutput)> {
        let ids = self.encode(task, sample)?;
        let out = self.seq2seq.greedy(&self.params, &ids, visual, self.config.model.max_decode)?;
        let text = self.vocab.decode(&out);
        let parsed = parse_output(task, &text);
        Ok((text, parsed))
    }
}

/// Encoded examples plus features for one split.
pub struct Prepared {
    pub samples: Vec<Sample>,
    /// `[sample][task]` as `(task, input ids, target ids)`.
    pub examples: Vec<Vec<(Task, Vec<usize>, Vec<usize>)>>,
    pub patches: Vec<PatchFeatures>,
    pub tokens: Vec<TokenFeatures>,
}

pub fn build_vocab(config: &RunConfig, samples: &[Sample]) -> Result<Vocab> {
    let mut b = VocabBuilder::default();
    let opts = config.ablation.input_options();
    for s in samples {
        for &t in &enabled_tasks(config) {
            b.add_input(&build_input(t, s, &opts)?);
            b.add_target(&target_text(t, s)?);
        }
    }
    Ok(b.build())
}

pub fn prepare(model: &Model, samples: &[Sample], features: Option<&dyn FeatureProvider>) -> Result<Prepared> {
    let tasks = enabled_tasks(&model.config);
    let mut examples = Vec::with_capacity(samples.len());
    let (mut patches, mut tokens) = (Vec::new(), Vec::new());
    for s in samples {
        let mut per = Vec::with_capacity(tasks.len());
        for &t in &tasks {
            per.push((t, model.encode(t, s)?, model.vocab.encode_target(&target_text(t, s)?)));
        }
        examples.push(per);
        if let Some(f) = features {
            patches.push(f.image_features(&s.image)?);
            tokens.push(f.sentence_features(&s.sentence)?);
        }
    }
    Ok(Prepared {
        samples: samples.to_vec(),
        examples,
        patches,
        tokens,
    })
}

/// Splits `order` into batches; a trailing batch of one joins the previous
/// batch so the alignment loss always sees at least two pairs.
pub fn batches(order: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch.max(1)).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(last);
    }
    out
}

struct BatchLoss {
    total: Var,
    sc: Option<Var>,
    srg: Option<Var>,
    irg: Option<Var>,
    align: Option<Var>,
}

impl BatchLoss {
    fn components(&self, g: &Graph) -> LossComponents {
        let v = |x: Option<Var>| x.map(|x| g.scalar_value(x));
        LossComponents {
            sc: v(self.sc),
            srg: v(self.srg),
            irg: v(self.irg),
            align: v(self.align),
            total: g.scalar_value(self.total),
        }
    }
}

/// Batch loss on a fresh graph. `noise_seed` draws Gumbel noise for the
/// alignment term; `None` uses zero noise.
fn batch_loss(model: &Model, g: &mut Graph, b: &Bound, data: &Prepared, idx: &[usize], noise_seed: Option<u64>) -> Result<BatchLoss> {
    let w = model.config.weights()?;
    let n = idx.len() as f64;
    let tasks = enabled_tasks(&model.config);
    let mut task_loss = [None, None, None];
    for (k, &task) in tasks.iter().enumerate() {
        let mut terms = Vec::with_capacity(idx.len());
        for &i in idx {
            let (_, input, target) = &data.examples[i][k];
            let visual = match model.config.ablation.fuse_visual {
                true => model.visual_rows(&data.patches[i], &data.tokens[i])?,
                false => None,
            };
            terms.push(model.seq2seq.sequence_nll(g, b, input, target, visual.as_ref())?);
        }
        let cat = g.concat_rows(&terms);
        let s = g.sum(cat);
        let slot = Task::ALL.iter().position(|t| *t == task).expect("known task");
        task_loss[slot] = Some(g.scale(s, 1.0 / n));
    }
    let align = if model.config.ablation.enable_lsa {
        // one entry per distinct pair, otherwise a duplicate would act as
        // its own hardest negative
        let mut seen = BTreeSet::new();
        let uniq: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| seen.insert((data.samples[i].image.as_str(), data.samples[i].sentence.as_str())))
            .collect();
        if uniq.len() >= 2 {
            let images: Vec<PatchFeatures> = uniq.iter().map(|&i| data.patches[i].clone()).collect();
            let sentences: Vec<TokenFeatures> = uniq.iter().map(|&i| data.tokens[i].clone()).collect();
            let noises: Vec<GumbelNoise> = images
                .iter()
                .enumerate()
                .map(|(k, p)| match noise_seed {
                    Some(seed) => GumbelNoise::from_seed(p.len(), seed.wrapping_add(k as u64)),
                    None => GumbelNoise::zeros(p.len()),
                })
                .collect();
            let lsa = LsaModel {
                config: model.config.lsa.clone(),
                params: ParamStore::new(),
            };
            Some(lsa.align_batch_graph(g, b, &images, &sentences, &noises, SelectionMode::Sample)?.loss)
        } else {
            None
        }
    } else {
        None
    };
    let [sc, srg, irg] = task_loss;
    let mut parts = Vec::new();
    if let Some(v) = sc {
        parts.push(g.scale(v, w.sc()));
    }
    for v in [srg, irg].into_iter().flatten() {
        parts.push(g.scale(v, w.rationale()));
    }
    if let Some(v) = align {
        parts.push(g.scale(v, w.align()));
    }
    let cat = g.concat_rows(&parts);
    let total = g.sum(cat);
    Ok(BatchLoss {
        total,
        sc,
        srg,
        irg,
        align,
    })
}

/// Loss components and parameter gradients (store order) of one batch.
pub fn loss_and_grads(model: &Model, data: &Prepared, idx: &[usize], noise_seed: Option<u64>) -> Result<(LossComponents, Vec<Tensor>)> {
    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let loss = batch_loss(model, &mut g, &b, data, idx, noise_seed)?;
    let c = loss.components(&g);
    g.backward(loss.total);
    Ok((c, b.grads(&g, &model.params)))
}

/// Accuracy, F1 and the undiscerned rate of one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub acc: f64,
    pub f1: f64,
    pub dis_rate: f64,
}

impl From<&MetricReport> for HeadMetrics {
    fn from(r: &MetricReport) -> Self {
        Self {
            acc: r.acc,
            f1: r.f1,
            dis_rate: r.dis_rate,
        }
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f1_micro: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dis_rate: Option<f64>,
    pub loss: LossComponents,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub srg: Option<HeadMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub irg: Option<HeadMetrics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub seed: u64,
    /// 1-based epoch this checkpoint was taken in.
    pub epoch: usize,
    /// Batches of `epoch` already trained; equal to the epoch's batch count
    /// once the epoch is complete.
    pub batches_done: usize,
    pub epoch_complete: bool,
    pub step: u64,
    pub vocab: Vocab,
    pub visual_dim: Option<usize>,
    pub params: ParamStore,
    pub optimizer: AdamW,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn model(&self) -> Result<Model> {
        let visual_dim = self.config.ablation.fuse_visual.then_some(self.config.lsa.dim);
        if visual_dim != self.visual_dim {
            return Err(Error::InvalidInput("checkpoint visual width disagrees with its config".into()));
        }
        let seq2seq = Seq2Seq {
            config: self.config.model.clone(),
            vocab_size: self.vocab.len(),
            visual_dim,
        };
        Ok(Model {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            seq2seq,
            params: self.params.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestMarker {
    pub epoch: usize,
    pub checkpoint: String,
    /// Dev SC F1 when a dev split exists, otherwise mean train loss.
    pub criterion: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: LossComponents,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub rows: Vec<MetricsRow>,
    pub best: Option<BestMarker>,
    pub last_checkpoint: PathBuf,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:03}.json")
}

/// Latest checkpoint under `out_dir`, by file name.
pub fn latest_checkpoint(out_dir: &Path) -> Option<PathBuf> {
    let dir = out_dir.join("checkpoints");
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("epoch-") && n.ends_with(".json"))
        })
        .collect();
    names.sort();
    names.pop()
}

pub fn best_checkpoint(out_dir: &Path) -> Result<PathBuf> {
    let marker = out_dir.join("checkpoints").join("best.json");
    let bytes = fs::read(&marker).map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", marker.display())))?;
    let best: BestMarker = serde_json::from_slice(&bytes)?;
    Ok(out_dir.join("checkpoints").join(best.checkpoint))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())?;
    Ok(())
}

fn mean_components(records: &[LossComponents]) -> LossComponents {
    let n = records.len().max(1) as f64;
    let avg = |f: fn(&LossComponents) -> Option<f64>| {
        let vals: Vec<f64> = records.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    LossComponents {
        sc: avg(|c| c.sc),
        srg: avg(|c| c.srg),
        irg: avg(|c| c.irg),
        align: avg(|c| c.align),
        total: records.iter().map(|c| c.total).sum::<f64>() / n,
    }
}

/// Per-head predictions over a prepared split.
pub struct SplitPredictions {
    pub tasks: Vec<Task>,
    /// `[task][sample]`.
    pub outputs: Vec<Vec<(String, ParsedOutput)>>,
}

pub fn predict_split(model: &Model, data: &Prepared) -> Result<SplitPredictions> {
    let tasks = enabled_tasks(&model.config);
    let mut outputs = vec![Vec::with_capacity(data.samples.len()); tasks.len()];
    for (i, s) in data.samples.iter().enumerate() {
        let visual = match model.config.ablation.fuse_visual {
            true => model.visual_rows(&data.patches[i], &data.tokens[i])?,
            false => None,
        };
        for (k, &t) in tasks.iter().enumerate() {
            outputs[k].push(model.predict(t, s, visual.as_ref())?);
        }
    }
    Ok(SplitPredictions { tasks, outputs })
}

impl SplitPredictions {
    pub fn sentiments(&self, task: Task) -> Option<Vec<Prediction>> {
        let k = self.tasks.iter().position(|t| *t == task)?;
        Some(self.outputs[k].iter().map(|o| o.1.sentiment).collect())
    }
}

/// Mean loss over the split in batch order with zero alignment noise.
pub fn split_loss(model: &Model, data: &Prepared) -> Result<LossComponents> {
    let order: Vec<usize> = (0..data.samples.len()).collect();
    let mut comps = Vec::new();
    for idx in batches(&order, model.config.batch) {
        let mut g = Graph::new();
        let b = model.params.bind(&mut g);
        comps.push(batch_loss(model, &mut g, &b, data, &idx, None)?.components(&g));
    }
    Ok(mean_components(&comps))
}

fn dev_row(model: &Model, data: &Prepared, epoch: usize, step: u64) -> Result<(MetricsRow, MetricReport)> {
    let preds = predict_split(model, data)?;
    let golds: Vec<_> = data.samples.iter().map(|s| s.label).collect();
    let head = |t: Task| -> Result<Option<MetricReport>> {
        preds
            .sentiments(t)
            .map(|p| accuracy_f1(&p, &golds, Averaging::Macro))
            .transpose()
    };
    let sc = head(Task::SC)?.expect("SC is always enabled");
    let row = MetricsRow {
        epoch,
        split: "dev".into(),
        step,
        acc: Some(sc.acc),
        f1: Some(sc.f1),
        f1_micro: Some(sc.f1_micro),
        dis_rate: Some(sc.dis_rate),
        loss: split_loss(model, data)?,
        srg: head(Task::SRG)?.as_ref().map(HeadMetrics::from),
        irg: head(Task::IRG)?.as_ref().map(HeadMetrics::from),
    };
    Ok((row, sc))
}

/// Loads the configured splits and trains. A missing dev split is allowed;
/// the best checkpoint then follows the lowest mean train loss.
pub fn train(config: &RunConfig, resume: bool) -> Result<TrainReport> {
    config.validate()?;
    let train_set = load_split(&config.dataset, &config.train_split)?;
    let dev_path = split_path(&config.dataset, &config.dev_split);
    let dev_set = if dev_path.exists() {
        Some(load_split(&config.dataset, &config.dev_split)?)
    } else {
        log::warn!("no dev split at {}; best checkpoint follows train loss", dev_path.display());
        None
    };
    train_on(config, &train_set, dev_set.as_deref(), resume)
}

pub fn train_on(config: &RunConfig, train_set: &[Sample], dev_set: Option<&[Sample]>, resume: bool) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    let out = &config.out_dir;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    atomic_write(&out.join("config.toml"), config.to_toml()?.as_bytes())?;
    let metrics_path = out.join("metrics.jsonl");

    let resumed = match (resume, latest_checkpoint(out)) {
        (true, Some(p)) => {
            let ck = Checkpoint::load(&p)?;
            let mut a = ck.config.clone();
            let mut b = config.clone();
            // extending a run is the one change resume accepts
            a.epochs = 0;
            b.epochs = 0;
            a.max_steps = None;
            b.max_steps = None;
            if a != b {
                return Err(Error::Config(format!("{} was written under a different config", p.display())));
            }
            log::info!("resuming from {} at step {}", p.display(), ck.step);
            Some(ck)
        }
        _ => None,
    };

    let features = uses_features(config).then(|| feature_provider(config));
    let (mut model, mut opt, mut step, start_epoch, mut skip) = match &resumed {
        Some(ck) => {
            let (epoch, skip) = if ck.epoch_complete { (ck.epoch + 1, 0) } else { (ck.epoch, ck.batches_done) };
            let mut m = ck.model()?;
            m.config = config.clone();
            (m, ck.optimizer.clone(), ck.step, epoch, skip)
        }
        None => {
            let vocab = build_vocab(config, train_set)?;
            let m = Model::init(config, vocab);
            let opt = AdamW::new(config.lr, config.weight_decay, &m.params);
            (m, opt, 0, 1, 0)
        }
    };
    let train_data = prepare(&model, train_set, features.as_deref())?;
    let dev_data = dev_set.map(|d| prepare(&model, d, features.as_deref())).transpose()?;

    let mut rows: Vec<MetricsRow> = if resumed.is_some() {
        read_metrics(&metrics_path)?
            .into_iter()
            .filter(|r| r.epoch < start_epoch)
            .collect()
    } else {
        Vec::new()
    };
    let mut best: Option<BestMarker> = if resumed.is_some() {
        fs::read(ckpt_dir.join("best.json"))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .filter(|m: &BestMarker| m.epoch < start_epoch)
    } else {
        None
    };
    let mut steps = Vec::new();
    let mut last_checkpoint = resumed
        .as_ref()
        .map(|ck| ckpt_dir.join(checkpoint_name(ck.epoch)))
        .unwrap_or_default();

    let budget_hit = |s: u64| config.max_steps.is_some_and(|m| s >= m);
    for epoch in start_epoch..=config.epochs {
        if budget_hit(step) {
            break;
        }
        let mut order: Vec<usize> = (0..train_data.samples.len()).collect();
        order.shuffle(&mut rng_for(config.seed, &[b"shuffle", &(epoch as u64).to_le_bytes()]));
        let all = batches(&order, config.batch);
        let mut comps = Vec::new();
        let mut done = skip;
        for idx in all.iter().skip(skip) {
            if budget_hit(step) {
                break;
            }
            step += 1;
            let noise_seed = crate::util::stable_u64(&[&config.seed.to_le_bytes(), b"gumbel", &step.to_le_bytes()]);
            let (c, mut grads) = loss_and_grads(&model, &train_data, idx, Some(noise_seed))?;
            if !c.total.is_finite() {
                return Err(Error::Training {
                    step,
                    message: format!("non-finite loss {c:?} on samples {idx:?}"),
                });
            }
            let norm = clip_grad_norm(&mut grads, config.grad_clip);
            if !norm.is_finite() {
                return Err(Error::Training {
                    step,
                    message: format!("non-finite gradient norm with loss {c:?}"),
                });
            }
            opt.step(&mut model.params, &grads)?;
            log::debug!("epoch {epoch} step {step} loss {:.5}", c.total);
            steps.push(StepRecord {
                step,
                epoch,
                loss: c,
                grad_norm: norm,
            });
            comps.push(c);
            done += 1;
        }
        skip = 0;
        let complete = done == all.len();
        if comps.is_empty() {
            break;
        }
        let train_loss = mean_components(&comps);
        rows.push(MetricsRow {
            epoch,
            split: "train".into(),
            step,
            acc: None,
            f1: None,
            f1_micro: None,
            dis_rate: None,
            loss: train_loss,
            srg: None,
            irg: None,
        });
        let last = epoch == config.epochs || budget_hit(step);
        let name = checkpoint_name(epoch);
        let candidate = match &dev_data {
            Some(d) if last || epoch % config.eval_every == 0 => {
                let (row, sc) = dev_row(&model, d, epoch, step)?;
                log::info!("epoch {epoch} step {step} train {:.4} dev acc {:.4} f1 {:.4}", train_loss.total, sc.acc, sc.f1);
                rows.push(row);
                Some(("dev_sc_f1", sc.f1, true))
            }
            Some(_) => None,
            None => {
                log::info!("epoch {epoch} step {step} train {:.4}", train_loss.total);
                Some(("train_loss", train_loss.total, false))
            }
        };
        let ck = Checkpoint {
            config: config.clone(),
            seed: config.seed,
            epoch,
            batches_done: done,
            epoch_complete: complete,
            step,
            vocab: model.vocab.clone(),
            visual_dim: model.seq2seq.visual_dim,
            params: model.params.clone(),
            optimizer: opt.clone(),
        };
        last_checkpoint = ckpt_dir.join(&name);
        atomic_write(&last_checkpoint, &serde_json::to_vec(&ck)?)?;
        write_metrics(&metrics_path, &rows)?;
        if let Some((criterion, value, higher)) = candidate {
            let better = match &best {
                None => true,
                Some(b) => (higher && value > b.value) || (!higher && value < b.value),
            };
            if better {
                let marker = BestMarker {
                    epoch,
                    checkpoint: name,
                    criterion: criterion.into(),
                    value,
                };
                atomic_write(&ckpt_dir.join("best.json"), &serde_json::to_vec_pretty(&marker)?)?;
                best = Some(marker);
            }
        }
    }
    Ok(TrainReport {
        steps,
        rows,
        best,
        last_checkpoint,
    })
}
