//! Run configuration: TOML file, dataset presets, ablation switches and
//! `key=value` overrides.

use crate::error::{Error, Result};
use crate::learning::seq2seq::Seq2SeqConfig;
use crate::learning::{CaptionSource, InputOptions, LossWeights};
use crate::lsa::LsaConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub enable_srg: bool,
    pub enable_irg: bool,
    pub enable_lsa: bool,
    pub enable_od: bool,
    pub enable_aes_cap: bool,
    /// Which whole-image caption fills the caption slot.
    pub caption: CaptionSource,
    /// Prepend calibrated patch rows to the encoder input.
    pub fuse_visual: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            enable_srg: true,
            enable_irg: true,
            enable_lsa: true,
            enable_od: true,
            enable_aes_cap: true,
            caption: CaptionSource::Aesthetic,
            fuse_visual: false,
        }
    }
}

/// Ablation row names accepted by `--ablate`.
pub const ABLATIONS: [&str; 7] = ["srg", "irg", "srg-irg", "lsa", "od", "aes-cap", "irg-ac"];

impl Ablation {
    pub fn apply(&mut self, name: &str) -> Result<()> {
        match name {
            "srg" => self.enable_srg = false,
            "irg" => self.enable_irg = false,
            "srg-irg" => {
                self.enable_srg = false;
                self.enable_irg = false;
            }
            "lsa" => self.enable_lsa = false,
            "od" => self.enable_od = false,
            "aes-cap" => self.enable_aes_cap = false,
            "irg-ac" => {
                self.enable_irg = false;
                self.caption = CaptionSource::Generic;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation `{other}`; expected one of {}",
                    ABLATIONS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn input_options(&self) -> InputOptions {
        InputOptions {
            enable_od: self.enable_od,
            enable_aes_cap: self.enable_aes_cap,
            caption: self.caption,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub feature_seed: u64,
    pub image_seed: u64,
    /// Image files by `image` ref; synthetic images when unset.
    pub image_dir: Option<PathBuf>,
    /// `mock` or `command:<program> [args...]`, for every visual provider.
    pub vision: String,
    /// `mock` or `command:<program> [args...]`.
    pub llm: String,
    pub llm_model: String,
    pub prompt_pool: Option<PathBuf>,
    pub parallelism: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    pub budget: Option<usize>,
    /// Defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            feature_seed: 7,
            image_seed: 7,
            image_dir: None,
            vision: "mock".into(),
            llm: "mock".into(),
            llm_model: "external-llm".into(),
            prompt_pool: None,
            parallelism: 4,
            retries: 3,
            backoff_ms: 200,
            budget: None,
            cache_dir: None,
        }
    }
}

/// `command:<program> [args...]` split into program and args; `None` for `mock`.
pub fn parse_command(spec: &str) -> Result<Option<(String, Vec<String>)>> {
    if spec == "mock" {
        return Ok(None);
    }
    let rest = spec
        .strip_prefix("command:")
        .ok_or_else(|| Error::Config(format!("provider `{spec}` must be `mock` or `command:<program>`")))?;
    let mut parts = rest.split_whitespace().map(String::from);
    let program = parts
        .next()
        .ok_or_else(|| Error::Config("empty provider command".into()))?;
    Ok(Some((program, parts.collect())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub train_split: String,
    pub dev_split: String,
    pub seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub weight_decay: f64,
    /// Joint gradient-norm cap; zero disables clipping.
    pub grad_clip: f64,
    /// Stops training after this many optimizer steps.
    pub max_steps: Option<u64>,
    /// Dev evaluation period in epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    pub lsa: LsaConfig,
    pub model: Seq2SeqConfig,
    pub ablation: Ablation,
    pub providers: ProviderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            train_split: "train".into(),
            dev_split: "dev".into(),
            seed: 13,
            epochs: 10,
            batch: 4,
            lr: 3e-4,
            alpha: 0.2,
            lambda: 0.2,
            weight_decay: 0.01,
            grad_clip: 1.0,
            max_steps: None,
            eval_every: 1,
            lsa: LsaConfig::default(),
            model: Seq2SeqConfig::default(),
            ablation: Ablation::default(),
            providers: ProviderConfig::default(),
        }
    }
}

/// Learning rate, alpha and lambda per dataset.
pub const PRESETS: [(&str, f64, f64, f64); 3] = [
    ("twitter2015", 3e-4, 0.2, 0.2),
    ("twitter2017", 3e-4, 0.1, 0.5),
    ("political", 1e-4, 0.2, 0.5),
];

impl RunConfig {
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let (_, lr, alpha, lambda) = PRESETS
            .iter()
            .find(|p| p.0 == name)
            .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
        self.lr = *lr;
        self.alpha = *alpha;
        self.lambda = *lambda;
        Ok(())
    }

    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.alpha, self.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights()?;
        self.lsa.validate()?;
        self.model.validate()?;
        if self.epochs == 0 || self.batch == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch and eval_every must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return Err(Error::Config("weight_decay and grad_clip must be non-negative".into()));
        }
        if self.ablation.enable_lsa && self.batch < 2 {
            return Err(Error::Config("the alignment loss needs batch >= 2".into()));
        }
        parse_command(&self.providers.vision)?;
        parse_command(&self.providers.llm)?;
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.providers
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("cache"))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads `path` (or defaults), then the preset, ablations and overrides
    /// in that order.
    pub fn resolve(path: Option<&Path>, preset: Option<&str>, ablations: &[String], sets: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        if let Some(name) = preset {
            let mut tmp = RunConfig::default();
            tmp.apply_preset(name)?;
            table.insert("lr".into(), toml::Value::Float(tmp.lr));
            table.insert("alpha".into(), toml::Value::Float(tmp.alpha));
            table.insert("lambda".into(), toml::Value::Float(tmp.lambda));
        }
        for s in sets {
            set_path(&mut table, s)?;
        }
        let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for a in ablations {
            cfg.ablation.apply(a)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML literal when it
/// parses as one and as a bare string otherwise.
pub fn set_path(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_published_settings() {
        let mut c = RunConfig::default();
        c.apply_preset("twitter2017").unwrap();
        assert_eq!((c.lr, c.alpha, c.lambda), (3e-4, 0.1, 0.5));
        c.apply_preset("political").unwrap();
        assert_eq!((c.lr, c.alpha, c.lambda), (1e-4, 0.2, 0.5));
        assert!(c.apply_preset("imdb").is_err());
        let d = RunConfig::default();
        assert_eq!((d.epochs, d.batch, d.lr, d.alpha, d.lambda), (10, 4, 3e-4, 0.2, 0.2));
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn overrides_and_ablations() {
        let c = RunConfig::resolve(
            None,
            Some("twitter2017"),
            &["irg-ac".into()],
            &["lsa.beta=0.25".into(), "epochs=2".into(), "out_dir=/tmp/x y".into()],
        )
        .unwrap();
        assert_eq!(c.lsa.beta, 0.25);
        assert_eq!(c.epochs, 2);
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x y"));
        assert_eq!(c.alpha, 0.1);
        assert!(!c.ablation.enable_irg && c.ablation.enable_srg);
        assert_eq!(c.ablation.caption, CaptionSource::Generic);
    }

    #[test]
    fn validation_runs_before_work() {
        assert!(RunConfig::resolve(None, None, &[], &["alpha=1.0".into()]).is_err());
        assert!(RunConfig::resolve(None, None, &[], &["lsa.tau=0".into()]).is_err());
        assert!(RunConfig::resolve(None, None, &["bogus".into()], &[]).is_err());
        assert!(RunConfig::resolve(None, None, &[], &["providers.llm=http://x".into()]).is_err());
    }

    #[test]
    fn command_specs() {
        assert_eq!(parse_command("mock").unwrap(), None);
        assert_eq!(
            parse_command("command:python3 client.py --fast").unwrap(),
            Some(("python3".into(), vec!["client.py".into(), "--fast".into()]))
        );
    }
}
