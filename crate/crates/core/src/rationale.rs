//! Semantic (SR) and impression (IR) rationale construction.
//!
//! For every sample one SR prompt and one IR prompt are drawn from their
//! pools, rendered with the gold target and label, and sent to an LLM
//! client. Each call's result is cached under
//! `sha256(sample_id, prompt_id, model_id)`, so an interrupted run resumes
//! and a repeated run makes no calls at all.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::translation::ImageSource;
use crate::util::{atomic_write, rng_for, sha256_hex, with_dir_lock};
use base64::Engine;
use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

pub const DEFAULT_POOL: &str = include_str!("../assets/prompt_pool.json");

/// Opening every SR response is asked to use.
pub const SR_STEM: &str = "Based on the image-text pair, the sentiment towards {aspect} is {label} because";

const PLACEHOLDERS: [&str; 2] = ["aspect", "label"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptKind {
    SR,
    IR,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::SR => "SR",
            PromptKind::IR => "IR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub kind: PromptKind,
    pub system_text: String,
    pub user_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPool {
    pub version: u32,
    pub templates: Vec<PromptTemplate>,
}

/// Splits `text` into literal runs and `{name}` placeholders.
fn segments(text: &str) -> Vec<(bool, &str)> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        match rest[open + 1..].find('}') {
            Some(close) => {
                let name = &rest[open + 1..open + 1 + close];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    out.push((false, &rest[..open]));
                    out.push((true, name));
                } else {
                    out.push((false, &rest[..open + 2 + close]));
                }
                rest = &rest[open + 2 + close..];
            }
            None => break,
        }
    }
    out.push((false, rest));
    out
}

fn placeholders(text: &str) -> BTreeSet<&str> {
    segments(text).into_iter().filter(|s| s.0).map(|s| s.1).collect()
}

impl PromptPool {
    pub fn parse(json: &str) -> Result<Self> {
        let pool: PromptPool = serde_json::from_str(json).map_err(|e| Error::PromptPool(e.to_string()))?;
        pool.validate()?;
        Ok(pool)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn default_pool() -> Self {
        Self::parse(DEFAULT_POOL).expect("shipped prompt pool is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for t in &self.templates {
            let bad = |m: String| Error::PromptPool(format!("template `{}`: {m}", t.id));
            if !ids.insert(t.id.as_str()) {
                return Err(bad("duplicate id".into()));
            }
            for text in [&t.system_text, &t.user_text] {
                for name in placeholders(text) {
                    if !PLACEHOLDERS.contains(&name) {
                        return Err(bad(format!("unknown placeholder {{{name}}}")));
                    }
                }
            }
            let found = placeholders(&t.user_text);
            for p in PLACEHOLDERS {
                if !found.contains(p) {
                    return Err(bad(format!("user text lacks {{{p}}}")));
                }
            }
            if t.kind == PromptKind::SR && !t.user_text.contains(SR_STEM) {
                return Err(bad("SR template must demand the fixed response stem".into()));
            }
        }
        Ok(())
    }

    pub fn of(&self, kind: PromptKind) -> Vec<&PromptTemplate> {
        self.templates.iter().filter(|t| t.kind == kind).collect()
    }
}

/// Uniform draw from the templates of `kind`.
pub fn select_prompt(pool: &PromptPool, kind: PromptKind, seed: u64) -> Result<&PromptTemplate> {
    let cands = pool.of(kind);
    if cands.is_empty() {
        return Err(Error::PromptPool(format!("no {} templates", kind.as_str())));
    }
    let mut rng = rng_for(seed, &[b"select", kind.as_str().as_bytes()]);
    Ok(cands[rng.gen_range(0..cands.len())])
}

fn render(text: &str, aspect: &str, label: &str) -> String {
    let mut out = String::with_capacity(text.len() + aspect.len() + label.len());
    for (is_var, s) in segments(text) {
        match (is_var, s) {
            (true, "aspect") => out.push_str(aspect),
            (true, "label") => out.push_str(label),
            (true, other) => {
                out.push('{');
                out.push_str(other);
                out.push('}');
            }
            (false, lit) => out.push_str(lit),
        }
    }
    out
}

/// Substitutes placeholders in one pass, so braces inside `aspect` or
/// `label` are never re-expanded.
pub fn render_prompt(template: &PromptTemplate, aspect: &str, label: &str) -> Result<(String, String)> {
    if !["positive", "neutral", "negative"].contains(&label) {
        return Err(Error::InvalidInput(format!("label `{label}` is not a sentiment polarity")));
    }
    Ok((render(&template.system_text, aspect, label), render(&template.user_text, aspect, label)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub system: String,
    pub user: String,
    /// Base64 image bytes, when an image source is configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct LlmResponse {
    text: String,
}

pub trait LlmClient: Send + Sync {
    fn model_id(&self) -> String;
    fn complete(&self, req: &LlmRequest) -> Result<String>;
}

/// Offline client. Echoes the response opening the prompt asks for, then a
/// digest of the prompt; ignores the image.
#[derive(Debug, Default)]
pub struct MockClient {
    pub calls: AtomicUsize,
    /// Every call fails when set.
    pub always_fail: bool,
    /// The first `n` calls fail.
    pub fail_first: AtomicUsize,
}

impl MockClient {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Text between `Start your response with: "` and the closing `..."`.
fn demanded_opening(user: &str) -> Option<&str> {
    let marker = "Start your response with: \"";
    let start = user.find(marker)? + marker.len();
    let rest = &user[start..];
    let end = rest.find("...\"").or_else(|| rest.find('"'))?;
    Some(&rest[..end])
}

impl LlmClient for MockClient {
    fn model_id(&self) -> String {
        "mock-llm".into()
    }

    fn complete(&self, req: &LlmRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.always_fail {
            return Err(Error::Client("mock failure".into()));
        }
        if self
            .fail_first
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
        {
            return Err(Error::Client("transient mock failure".into()));
        }
        let digest = &sha256_hex(&[req.system.as_bytes(), req.user.as_bytes()])[..12];
        Ok(match demanded_opening(&req.user) {
            Some(open) => format!("{open} the text and image agree in tone (ref {digest})."),
            None => format!("The image leaves a calm and balanced impression with soft light and muted colour (ref {digest})."),
        })
    }
}

/// External client: one process per call, [`LlmRequest`] JSON on stdin and
/// `{"text": ...}` on stdout. The API key is read from
/// `MASC_LLM_API_KEY` and handed to the child in its environment.
#[derive(Debug, Clone)]
pub struct CommandClient {
    pub program: String,
    pub args: Vec<String>,
    pub model: String,
}

pub const API_KEY_ENV: &str = "MASC_LLM_API_KEY";

impl LlmClient for CommandClient {
    fn model_id(&self) -> String {
        self.model.clone()
    }

    fn complete(&self, req: &LlmRequest) -> Result<String> {
        let fail = |m: String| Error::Client(format!("{}: {m}", self.program));
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            cmd.env(API_KEY_ENV, key);
        }
        let mut child = cmd.spawn().map_err(|e| fail(format!("spawn: {e}")))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            stdin
                .write_all(&serde_json::to_vec(req)?)
                .map_err(|e| fail(format!("write: {e}")))?;
        }
        let out = child.wait_with_output().map_err(|e| fail(format!("wait: {e}")))?;
        if !out.status.success() {
            return Err(fail(format!(
                "exit {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let resp: LlmResponse = serde_json::from_slice(&out.stdout).map_err(|e| fail(format!("bad response: {e}")))?;
        Ok(resp.text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleRecord {
    pub sample_id: String,
    pub sr_text: String,
    pub ir_text: String,
    pub sr_prompt_id: String,
    pub ir_prompt_id: String,
    pub model_id: String,
    pub cache_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    sample_id: String,
    prompt_id: String,
    model_id: String,
    text: String,
}

pub fn call_key(sample_id: &str, prompt_id: &str, model_id: &str) -> String {
    sha256_hex(&[sample_id.as_bytes(), prompt_id.as_bytes(), model_id.as_bytes()])
}

/// One JSON file per call key.
#[derive(Debug, Clone)]
pub struct RationaleCache {
    dir: PathBuf,
}

impl RationaleCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let bytes = fs::read(self.path(key)).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        (entry.key == key).then_some(entry.text)
    }

    fn put(&self, entry: &CacheEntry) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(entry)?;
        let path = self.path(&entry.key);
        with_dir_lock(&self.dir, || atomic_write(&path, &bytes))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub seed: u64,
    /// Attempts after the first failure.
    pub retries: u32,
    pub backoff: Duration,
    pub parallelism: usize,
    /// Maximum client calls for the run.
    pub budget: Option<usize>,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            retries: 3,
            backoff: Duration::from_millis(200),
            parallelism: 4,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Partial,
    Failed,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Complete => 0,
            RunStatus::Partial => 2,
            RunStatus::Failed => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub records: Vec<RationaleRecord>,
    pub failures: Vec<SampleFailure>,
    pub calls: usize,
    pub cache_hits: usize,
    pub status: RunStatus,
}

struct Run<'a> {
    pool: &'a PromptPool,
    client: &'a dyn LlmClient,
    cache: &'a RationaleCache,
    images: Option<&'a dyn ImageSource>,
    opts: &'a GenerateOptions,
    calls: AtomicUsize,
    hits: AtomicUsize,
}

impl Run<'_> {
    fn call_with_retry(&self, req: &LlmRequest) -> Result<String> {
        let mut attempt = 0;
        loop {
            if let Some(b) = self.opts.budget {
                if self.calls.fetch_add(1, Ordering::SeqCst) >= b {
                    self.calls.fetch_sub(1, Ordering::SeqCst);
                    return Err(Error::Client(format!("call budget of {b} exhausted")));
                }
            } else {
                self.calls.fetch_add(1, Ordering::SeqCst);
            }
            match self.client.complete(req) {
                Ok(t) if !t.trim().is_empty() => return Ok(t),
                Ok(_) => {
                    if attempt >= self.opts.retries {
                        return Err(Error::Client("empty response".into()));
                    }
                }
                Err(e) if e.is_retriable() && attempt < self.opts.retries => {
                    warn!("client call failed (attempt {}): {e}", attempt + 1);
                }
                Err(e) => return Err(e),
            }
            std::thread::sleep(self.opts.backoff * 2u32.pow(attempt));
            attempt += 1;
        }
    }

    fn one(&self, sample: &Sample, kind: PromptKind) -> Result<(String, String)> {
        let seed = crate::util::stable_u64(&[&self.opts.seed.to_le_bytes(), sample.id.as_bytes(), kind.as_str().as_bytes()]);
        let template = select_prompt(self.pool, kind, seed)?;
        let model = self.client.model_id();
        let key = call_key(&sample.id, &template.id, &model);
        if let Some(text) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok((template.id.clone(), text));
        }
        let (system, user) = render_prompt(template, &sample.target, sample.label.as_str())?;
        let image = match self.images {
            Some(src) => Some(base64::engine::general_purpose::STANDARD.encode(src.load(&sample.image)?.to_bytes())),
            None => None,
        };
        let text = self.call_with_retry(&LlmRequest { system, user, image })?;
        if kind == PromptKind::SR {
            let stem = render(SR_STEM, &sample.target, sample.label.as_str());
            if !text.starts_with(&stem) {
                warn!("sample {}: SR response does not open with the requested stem", sample.id);
            }
        }
        self.cache.put(&CacheEntry {
            key,
            sample_id: sample.id.clone(),
            prompt_id: template.id.clone(),
            model_id: model,
            text: text.clone(),
        })?;
        Ok((template.id.clone(), text))
    }

    fn sample(&self, sample: &Sample) -> Result<RationaleRecord> {
        let (sr_prompt_id, sr_text) = self.one(sample, PromptKind::SR)?;
        let (ir_prompt_id, ir_text) = self.one(sample, PromptKind::IR)?;
        let model_id = self.client.model_id();
        let cache_key = sha256_hex(&[
            sample.id.as_bytes(),
            sr_prompt_id.as_bytes(),
            ir_prompt_id.as_bytes(),
            model_id.as_bytes(),
        ]);
        Ok(RationaleRecord {
            sample_id: sample.id.clone(),
            sr_text,
            ir_text,
            sr_prompt_id,
            ir_prompt_id,
            model_id,
            cache_key,
        })
    }
}

/// Builds one record per sample with bounded parallelism. Records and
/// failures are sorted by sample id regardless of completion order.
pub fn generate_rationales(
    samples: &[Sample],
    pool: &PromptPool,
    client: &dyn LlmClient,
    cache: &RationaleCache,
    images: Option<&dyn ImageSource>,
    opts: &GenerateOptions,
) -> GenerationReport {
    let run = Run {
        pool,
        client,
        cache,
        images,
        opts,
        calls: AtomicUsize::new(0),
        hits: AtomicUsize::new(0),
    };
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<RationaleRecord>)>> = Mutex::new(Vec::with_capacity(samples.len()));
    let workers = opts.parallelism.max(1).min(samples.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= samples.len() {
                    break;
                }
                let r = run.sample(&samples[i]);
                results.lock().expect("results lock").push((i, r));
            });
        }
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_inner().expect("results lock") {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(SampleFailure {
                sample_id: samples[i].id.clone(),
                message: e.to_string(),
            }),
        }
    }
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    failures.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let status = if failures.is_empty() {
        RunStatus::Complete
    } else if records.is_empty() {
        RunStatus::Failed
    } else {
        RunStatus::Partial
    };
    GenerationReport {
        records,
        failures,
        calls: run.calls.load(Ordering::SeqCst),
        cache_hits: run.hits.load(Ordering::SeqCst),
        status,
    }
}

/// Copies SR/IR texts onto the samples they belong to.
pub fn attach_rationales(samples: &mut [Sample], records: &[RationaleRecord]) {
    for s in samples.iter_mut() {
        if let Some(r) = records.iter().find(|r| r.sample_id == s.id) {
            s.sr = Some(r.sr_text.clone());
            s.ir = Some(r.ir_text.clone());
        }
    }
}
