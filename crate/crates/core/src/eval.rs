//! Metrics and analyses: accuracy and F1 with the undiscerned rate,
//! sentiment-intensity histograms, aesthetic-word counts, dataset tables.

use crate::data::{Sample, Sentiment};
use crate::error::{Error, Result};
use crate::learning::train::{predict_split, prepare, Model, Prepared};
use crate::learning::{Prediction, Task};
use crate::translation::AuxKind;
use crate::util::whitespace_len;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

pub const DEFAULT_AESTHETIC_LEXICON: &str = include_str!("../assets/aesthetic_lexicon.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub label: Sentiment,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub correct: usize,
    pub wrong: usize,
    pub undiscerned: usize,
    pub acc: f64,
    /// The averaging selected by `averaging`.
    pub f1: f64,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub averaging: Averaging,
    pub dis_rate: f64,
    pub per_class: Vec<ClassStats>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Undiscerned predictions count as wrong for accuracy and as a fourth
/// class that is never gold for F1: they add false negatives only.
pub fn accuracy_f1(preds: &[Prediction], golds: &[Sentiment], averaging: Averaging) -> Result<MetricReport> {
    if preds.len() != golds.len() {
        return Err(Error::InvalidInput(format!("{} predictions for {} gold labels", preds.len(), golds.len())));
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }
    let n = preds.len();
    let correct = preds.iter().zip(golds).filter(|(p, g)| p.sentiment() == Some(**g)).count();
    let undiscerned = preds.iter().filter(|p| **p == Prediction::Undiscerned).count();
    let per_class: Vec<ClassStats> = Sentiment::ALL
        .iter()
        .map(|&c| {
            let tp = preds.iter().zip(golds).filter(|(p, g)| p.sentiment() == Some(c) && **g == c).count();
            let predicted = preds.iter().filter(|p| p.sentiment() == Some(c)).count();
            let support = golds.iter().filter(|g| **g == c).count();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassStats {
                label: c,
                precision,
                recall,
                f1: harmonic(precision, recall),
                support,
            }
        })
        .collect();
    let f1_macro = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    let f1_micro = harmonic(ratio(correct, n - undiscerned), ratio(correct, n));
    Ok(MetricReport {
        n,
        correct,
        wrong: n - correct - undiscerned,
        undiscerned,
        acc: ratio(correct, n),
        f1: match averaging {
            Averaging::Macro => f1_macro,
            Averaging::Micro => f1_micro,
        },
        f1_macro,
        f1_micro,
        averaging,
        dis_rate: ratio(undiscerned, n),
        per_class,
    })
}

/// Fraction of samples on which the three heads agree, and on which each
/// rationale head agrees with SC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub all_three: f64,
    pub sc_srg: f64,
    pub sc_irg: f64,
}

pub fn agreement(sc: &[Prediction], srg: &[Prediction], irg: &[Prediction]) -> Result<Agreement> {
    if sc.len() != srg.len() || sc.len() != irg.len() || sc.is_empty() {
        return Err(Error::InvalidInput("agreement needs three equal, nonempty prediction lists".into()));
    }
    let n = sc.len();
    let count = |f: &dyn Fn(usize) -> bool| (0..n).filter(|&i| f(i)).count();
    Ok(Agreement {
        all_three: ratio(count(&|i| sc[i] == srg[i] && sc[i] == irg[i]), n),
        sc_srg: ratio(count(&|i| sc[i] == srg[i]), n),
        sc_irg: ratio(count(&|i| sc[i] == irg[i]), n),
    })
}

pub trait IntensityScorer: Send + Sync {
    /// Intensity in `[-1, 1]`.
    fn intensity(&self, text: &str) -> f64;
}

const POSITIVE_WORDS: &[&str] = &[
    "good", "great", "happy", "love", "joy", "joyful", "excellent", "wonderful", "amazing", "beautiful", "bright",
    "cheerful", "delight", "delightful", "excited", "fun", "glad", "hope", "hopeful", "nice", "pleasant", "proud",
    "success", "triumph", "warm", "win", "wins", "celebrate", "positive", "uplifting", "optimistic", "best",
];

const NEGATIVE_WORDS: &[&str] = &[
    "bad", "sad", "angry", "hate", "terrible", "awful", "horrible", "poor", "dark", "gloomy", "fear", "grief",
    "loss", "lose", "loses", "pain", "tragic", "worst", "upset", "disappointing", "negative", "bleak", "tense",
    "threat", "cold", "hostile", "anxious", "distress", "crisis", "fail", "failure", "sorrow",
];

/// Signed lexicon count: `(pos - neg) / (pos + neg)`, zero when no lexicon
/// word occurs.
#[derive(Debug, Clone)]
pub struct LexiconIntensity {
    pub positive: HashSet<String>,
    pub negative: HashSet<String>,
}

impl Default for LexiconIntensity {
    fn default() -> Self {
        Self {
            positive: POSITIVE_WORDS.iter().map(|s| s.to_string()).collect(),
            negative: NEGATIVE_WORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Lowercased whitespace tokens with edge punctuation removed.
pub fn normalized_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
}

impl IntensityScorer for LexiconIntensity {
    fn intensity(&self, text: &str) -> f64 {
        let (mut pos, mut neg) = (0usize, 0usize);
        for t in normalized_tokens(text) {
            if self.positive.contains(&t) {
                pos += 1;
            } else if self.negative.contains(&t) {
                neg += 1;
            }
        }
        if pos + neg == 0 {
            0.0
        } else {
            (pos as f64 - neg as f64) / (pos + neg) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Histogram {
    pub fn bin_of(&self, x: f64) -> usize {
        let k = self.counts.len();
        let b = ((x - self.lo) / (self.hi - self.lo) * k as f64).floor();
        (b.max(0.0) as usize).min(k - 1)
    }

    pub fn to_csv(&self) -> String {
        let k = self.counts.len();
        let width = (self.hi - self.lo) / k as f64;
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let lo = self.lo + i as f64 * width;
            let _ = writeln!(out, "{lo:.2},{:.2},{c}", lo + width);
        }
        out
    }
}

pub const DEFAULT_BINS: usize = 20;

/// Fixed-width bins over `[-1, 1]`; the top edge falls in the last bin.
pub fn sentiment_intensity_histogram(rationales: &[String], scorer: &dyn IntensityScorer, bins: usize) -> Histogram {
    let bins = bins.max(1);
    let xs: Vec<f64> = rationales
        .iter()
        .map(|r| if r.trim().is_empty() { 0.0 } else { scorer.intensity(r).clamp(-1.0, 1.0) })
        .collect();
    let mut h = Histogram {
        lo: -1.0,
        hi: 1.0,
        counts: vec![0; bins],
        n: xs.len(),
        mean: 0.0,
        std: 0.0,
        min: 0.0,
        max: 0.0,
    };
    for &x in &xs {
        let b = h.bin_of(x);
        h.counts[b] += 1;
    }
    if !xs.is_empty() {
        let n = xs.len() as f64;
        h.mean = xs.iter().sum::<f64>() / n;
        h.std = (xs.iter().map(|x| (x - h.mean).powi(2)).sum::<f64>() / n).sqrt();
        h.min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        h.max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    h
}

pub fn parse_lexicon(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.to_lowercase())
        .collect()
}

/// Case-insensitive counts of lexicon words, highest first, ties
/// alphabetical, at most `k` entries.
pub fn aesthetic_word_frequency(rationales: &[String], lexicon: &[String], k: usize) -> Vec<(String, usize)> {
    let lex: HashSet<String> = lexicon.iter().map(|w| w.to_lowercase()).collect();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in rationales {
        for t in normalized_tokens(r) {
            if lex.contains(&t) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

/// Reference averages for released rationales.
pub const REFERENCE_SR_LENGTH: f64 = 42.5;
pub const REFERENCE_IR_LENGTH: f64 = 56.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub positive: usize,
    pub neutral: usize,
    pub negative: usize,
    pub total: usize,
    /// Distinct (image, sentence) pairs.
    pub sentences: usize,
    /// Mean sentence length over distinct pairs.
    pub avg_length: f64,
    /// Records per distinct pair.
    pub avg_aspect: f64,
    /// Mean over records carrying the text.
    pub avg_sr: Option<f64>,
    pub avg_ir: Option<f64>,
    /// Mean over distinct images carrying a caption.
    pub avg_ac: Option<f64>,
    /// Mean over records whose object description has that kind.
    pub avg_fd: Option<f64>,
    pub avg_ao: Option<f64>,
}

fn mean_len<'a>(texts: impl Iterator<Item = &'a str>) -> Option<f64> {
    let lens: Vec<usize> = texts.map(whitespace_len).collect();
    (!lens.is_empty()).then(|| lens.iter().sum::<usize>() as f64 / lens.len() as f64)
}

pub fn dataset_stats(samples: &[Sample]) -> DatasetStats {
    let count = |l: Sentiment| samples.iter().filter(|s| s.label == l).count();
    let mut pairs = BTreeSet::new();
    let mut sentence_lens = Vec::new();
    for s in samples {
        if pairs.insert((s.image.as_str(), s.sentence.as_str())) {
            sentence_lens.push(whitespace_len(&s.sentence));
        }
    }
    let mut images = BTreeSet::new();
    let acs: Vec<&str> = samples
        .iter()
        .filter(|s| images.insert(s.image.as_str()))
        .filter_map(|s| s.ac.as_deref())
        .collect();
    let od = |k: AuxKind| {
        mean_len(samples.iter().filter_map(|s| s.od.as_ref()).filter(|o| o.kind == k).map(|o| o.text.as_str()))
    };
    DatasetStats {
        positive: count(Sentiment::Positive),
        neutral: count(Sentiment::Neutral),
        negative: count(Sentiment::Negative),
        total: samples.len(),
        sentences: pairs.len(),
        avg_length: if sentence_lens.is_empty() {
            0.0
        } else {
            sentence_lens.iter().sum::<usize>() as f64 / sentence_lens.len() as f64
        },
        avg_aspect: ratio(samples.len(), pairs.len()),
        avg_sr: mean_len(samples.iter().filter_map(|s| s.sr.as_deref())),
        avg_ir: mean_len(samples.iter().filter_map(|s| s.ir.as_deref())),
        avg_ac: mean_len(acs.into_iter()),
        avg_fd: od(AuxKind::FD),
        avg_ao: od(AuxKind::AO),
    }
}

impl DatasetStats {
    /// Warnings for rationale lengths more than 2x away from the reference.
    pub fn flags(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v, r) in [("SR", self.avg_sr, REFERENCE_SR_LENGTH), ("IR", self.avg_ir, REFERENCE_IR_LENGTH)] {
            if let Some(v) = v {
                if v > 2.0 * r || v < r / 2.0 {
                    out.push(format!("Avg. Length of {name} is {v:.1}, more than 2x away from {r}"));
                }
            }
        }
        out
    }

    /// Aligned two-column table, one statistic per row.
    pub fn to_table(&self, title: &str) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into());
        let rows = [
            ("Positive", self.positive.to_string()),
            ("Neutral", self.neutral.to_string()),
            ("Negative", self.negative.to_string()),
            ("Total", self.total.to_string()),
            ("#Sentence", self.sentences.to_string()),
            ("Avg. Length", format!("{:.1}", self.avg_length)),
            ("Avg. Aspect", format!("{:.1}", self.avg_aspect)),
            ("Avg. Length of SR", opt(self.avg_sr)),
            ("Avg. Length of IR", opt(self.avg_ir)),
            ("Avg. Length of AC", opt(self.avg_ac)),
            ("Avg. Length of FD", opt(self.avg_fd)),
            ("Avg. Length of AO", opt(self.avg_ao)),
        ];
        let mut out = format!("{title}\n");
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<20}{v:>10}");
        }
        out
    }
}

/// One sample's predictions from every enabled head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub gold: Sentiment,
    pub sc: Prediction,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub srg: Option<Prediction>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub irg: Option<Prediction>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sr_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ir_text: Option<String>,
}

/// SC is the reported head; the rationale heads are logged alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub n: usize,
    pub sc: MetricReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub srg: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub irg: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub agreement: Option<Agreement>,
    /// Keyed by source: `sr` and `ir` from the split, `generated_sr` and
    /// `generated_ir` from the model.
    pub intensity: BTreeMap<String, Histogram>,
    pub aesthetic_words: BTreeMap<String, Vec<(String, usize)>>,
    pub predictions: Vec<PredictionRecord>,
}

pub const TOP_AESTHETIC_WORDS: usize = 15;

pub fn evaluate_model(
    model: &Model,
    split: &str,
    samples: &[Sample],
    features: Option<&dyn crate::features::FeatureProvider>,
    lexicon: &[String],
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!("split `{split}` is empty")));
    }
    let data = prepare_for_eval(model, samples, features)?;
    let preds = predict_split(model, &data)?;
    let golds: Vec<Sentiment> = samples.iter().map(|s| s.label).collect();
    let sc_preds = preds.sentiments(Task::SC).expect("SC is always enabled");
    let head = |t: Task| preds.sentiments(t).map(|p| accuracy_f1(&p, &golds, Averaging::Macro)).transpose();
    let texts = |t: Task| -> Option<Vec<String>> {
        let k = preds.tasks.iter().position(|x| *x == t)?;
        Some(preds.outputs[k].iter().map(|o| o.1.rationale.clone().unwrap_or_default()).collect())
    };
    let (gen_sr, gen_ir) = (texts(Task::SRG), texts(Task::IRG));
    let (srg, irg) = (preds.sentiments(Task::SRG), preds.sentiments(Task::IRG));
    let agreement = match (&srg, &irg) {
        (Some(a), Some(b)) => Some(agreement(&sc_preds, a, b)?),
        _ => None,
    };

    let scorer = LexiconIntensity::default();
    let mut intensity = BTreeMap::new();
    let mut aesthetic_words = BTreeMap::new();
    let dataset_sr: Vec<String> = samples.iter().filter_map(|s| s.sr.clone()).collect();
    let dataset_ir: Vec<String> = samples.iter().filter_map(|s| s.ir.clone()).collect();
    let sources = [
        ("sr", Some(dataset_sr)),
        ("ir", Some(dataset_ir)),
        ("generated_sr", gen_sr.clone()),
        ("generated_ir", gen_ir.clone()),
    ];
    for (name, texts) in sources {
        if let Some(t) = texts.filter(|t| !t.is_empty()) {
            intensity.insert(name.to_string(), sentiment_intensity_histogram(&t, &scorer, DEFAULT_BINS));
            aesthetic_words.insert(name.to_string(), aesthetic_word_frequency(&t, lexicon, TOP_AESTHETIC_WORDS));
        }
    }

    let predictions = samples
        .iter()
        .enumerate()
        .map(|(i, s)| PredictionRecord {
            id: s.id.clone(),
            gold: s.label,
            sc: sc_preds[i],
            srg: srg.as_ref().map(|p| p[i]),
            irg: irg.as_ref().map(|p| p[i]),
            sr_text: gen_sr.as_ref().map(|t| t[i].clone()),
            ir_text: gen_ir.as_ref().map(|t| t[i].clone()),
        })
        .collect();
    Ok(EvalReport {
        split: split.to_string(),
        n: samples.len(),
        sc: accuracy_f1(&sc_preds, &golds, Averaging::Macro)?,
        srg: head(Task::SRG)?,
        irg: head(Task::IRG)?,
        agreement,
        intensity,
        aesthetic_words,
        predictions,
    })
}

/// Evaluation needs no gold rationales, so missing ones become empty
/// targets rather than errors.
fn prepare_for_eval(
    model: &Model,
    samples: &[Sample],
    features: Option<&dyn crate::features::FeatureProvider>,
) -> Result<Prepared> {
    let filled: Vec<Sample> = samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.sr.get_or_insert_with(String::new);
            s.ir.get_or_insert_with(String::new);
            s
        })
        .collect();
    let features = match (model.config.ablation.fuse_visual, features) {
        (true, None) => return Err(Error::InvalidInput("visual fusion needs a feature provider".into())),
        (true, f) => f,
        (false, _) => None,
    };
    let mut data = prepare(model, &filled, features)?;
    data.samples = samples.to_vec();
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::translation::AuxiliaryText;
    use Prediction::*;

    fn golds(v: &[Sentiment]) -> Vec<Sentiment> {
        v.to_vec()
    }

    #[test]
    fn perfect_predictions() {
        let g = golds(&[Sentiment::Positive, Sentiment::Negative, Sentiment::Neutral]);
        let p: Vec<Prediction> = g.iter().map(|&s| s.into()).collect();
        let r = accuracy_f1(&p, &g, Averaging::Macro).unwrap();
        assert_eq!((r.acc, r.f1, r.f1_micro, r.dis_rate), (1.0, 1.0, 1.0, 0.0));
    }

    #[test]
    fn constant_positive_on_balanced_golds() {
        let g: Vec<Sentiment> = Sentiment::ALL.iter().flat_map(|&s| [s; 3]).collect();
        let p = vec![Positive; 9];
        let r = accuracy_f1(&p, &g, Averaging::Macro).unwrap();
        assert!((r.acc - 1.0 / 3.0).abs() < 1e-12);
        // positive: P = 3/9, R = 1, F1 = 0.5; the others score zero
        assert!((r.f1 - 0.5 / 3.0).abs() < 1e-12);
        assert!((r.per_class[0].precision - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn undiscerned_counting() {
        let g = vec![Sentiment::Positive; 10];
        let mut p = vec![Positive; 10];
        p[4] = Undiscerned;
        let r = accuracy_f1(&p, &g, Averaging::Micro).unwrap();
        assert!((r.acc - 0.9).abs() < 1e-12);
        assert!((r.dis_rate - 0.1).abs() < 1e-12);
        assert_eq!(r.correct + r.wrong + r.undiscerned, r.n);
        // micro: precision 9/9, recall 9/10
        assert!((r.f1 - 2.0 * 0.9 / 1.9).abs() < 1e-12);
        assert!(accuracy_f1(&[], &[], Averaging::Macro).is_err());
        assert!(accuracy_f1(&[Positive], &[], Averaging::Macro).is_err());
    }

    #[test]
    fn intensity_mock() {
        let s = LexiconIntensity::default();
        assert!((s.intensity("good good bad") - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.intensity("Plain words."), 0.0);
        assert_eq!(s.intensity("Terrible!"), -1.0);
    }

    #[test]
    fn histogram_conservation_and_edges() {
        let s = LexiconIntensity::default();
        let empty = vec![String::new(); 4];
        let h = sentiment_intensity_histogram(&empty, &s, DEFAULT_BINS);
        assert_eq!(h.counts[10], 4);
        let texts: Vec<String> = ["good", "bad", "good bad", "", "great great sad"].iter().map(|s| s.to_string()).collect();
        let h = sentiment_intensity_histogram(&texts, &s, DEFAULT_BINS);
        assert_eq!(h.counts.iter().sum::<usize>(), texts.len());
        assert_eq!(h.counts[19], 1);
        assert_eq!(h.counts[0], 1);
        assert!(h.to_csv().starts_with("bin_lo,bin_hi,count\n-1.00,-0.90,1\n"));
    }

    #[test]
    fn aesthetic_ranking() {
        let lex: Vec<String> = ["vibrant", "focus", "visual"].iter().map(|s| s.to_string()).collect();
        let r = aesthetic_word_frequency(&["Vibrant vibrant focus.".to_string()], &lex, 15);
        assert_eq!(r, vec![("vibrant".to_string(), 2), ("focus".to_string(), 1)]);
        assert!(aesthetic_word_frequency(&["nothing here".to_string()], &lex, 15).is_empty());
        let tie = aesthetic_word_frequency(&["visual focus".to_string()], &lex, 1);
        assert_eq!(tie, vec![("focus".to_string(), 1)]);
        assert!(parse_lexicon(DEFAULT_AESTHETIC_LEXICON).contains(&"vibrant".to_string()));
    }

    #[test]
    fn stats_on_a_tiny_set() {
        let mut a = Sample::new("1", "i1", "Alice meets Bob", "Alice", Sentiment::Positive);
        a.sr = Some("one two three four".into());
        a.ac = Some("warm light".into());
        let mut b = Sample::new("2", "i1", "Alice meets Bob", "Bob", Sentiment::Negative);
        b.sr = Some("one two".into());
        b.ac = Some("warm light".into());
        b.od = Some(AuxiliaryText::new(AuxKind::FD, "a stern face", "m"));
        let s = dataset_stats(&[a, b]);
        assert_eq!((s.positive, s.neutral, s.negative, s.total, s.sentences), (1, 0, 1, 2, 1));
        assert_eq!(s.avg_aspect, 2.0);
        assert_eq!(s.avg_length, 3.0);
        assert_eq!(s.avg_sr, Some(3.0));
        assert_eq!(s.avg_ac, Some(2.0));
        assert_eq!(s.avg_fd, Some(3.0));
        assert_eq!(s.avg_ir, None);
        assert!(s.flags().iter().any(|f| f.contains("SR")));
        assert!(s.to_table("toy").contains("Avg. Aspect"));
    }

    #[test]
    fn agreement_rates() {
        let a = agreement(&[Positive, Negative], &[Positive, Neutral], &[Positive, Negative]).unwrap();
        assert_eq!((a.all_three, a.sc_srg, a.sc_irg), (0.5, 0.5, 1.0));
    }
}
