//! Sample records and the JSONL split format.

use crate::error::{Error, Result};
use crate::translation::{AuxiliaryText, ObjectAnnotation};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Neutral,
    Negative,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Positive, Sentiment::Neutral, Sentiment::Negative];

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Neutral => "neutral",
            Sentiment::Negative => "negative",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Sentiment::Positive),
            "neutral" => Ok(Sentiment::Neutral),
            "negative" => Ok(Sentiment::Negative),
            other => Err(Error::InvalidInput(format!("unknown sentiment label `{other}`"))),
        }
    }
}

/// One record per (image, sentence, target).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image: String,
    pub sentence: String,
    pub target: String,
    pub label: Sentiment,
    /// Object resolved for `target`, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<ObjectAnnotation>,
    /// Unresolved object annotations considered by `prepare-aux`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<ObjectAnnotation>,
    /// Aesthetic caption of the whole image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ac: Option<String>,
    /// Generic (non-aesthetic) caption of the whole image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gc: Option<String>,
    /// Object-level description, FD or AO.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub od: Option<AuxiliaryText>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ir: Option<String>,
}

impl Sample {
    pub fn new(id: &str, image: &str, sentence: &str, target: &str, label: Sentiment) -> Self {
        Self {
            id: id.into(),
            image: image.into(),
            sentence: sentence.into(),
            target: target.into(),
            label,
            object: None,
            candidates: Vec::new(),
            ac: None,
            gc: None,
            od: None,
            sr: None,
            ir: None,
        }
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    crate::util::atomic_write(path, &to_jsonl(records)?)?;
    Ok(())
}

/// Path of `split` inside a dataset directory.
pub fn split_path(dir: &Path, split: &str) -> std::path::PathBuf {
    dir.join(format!("{split}.jsonl"))
}

pub fn load_split(dir: &Path, split: &str) -> Result<Vec<Sample>> {
    let path = split_path(dir, split);
    if !path.exists() {
        return Err(Error::InvalidInput(format!("split `{split}` not found at {}", path.display())));
    }
    read_jsonl(&path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optional_fields_round_trip() {
        let mut s = Sample::new("1", "a.jpg", "Nice day in Paris", "Paris", Sentiment::Positive);
        s.ac = Some("a warm sunny street".into());
        let line = serde_json::to_string(&s).unwrap();
        assert!(!line.contains("\"sr\""));
        assert!(line.contains("\"label\":\"positive\""));
        let back: Sample = serde_json::from_str(&line).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn jsonl_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.jsonl");
        fs::write(&p, "{\"id\":\"1\"}\n").unwrap();
        let err = read_jsonl::<Sample>(&p).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
        assert!(load_split(dir.path(), "dev").is_err());
    }

    #[test]
    fn label_parsing() {
        assert_eq!("neutral".parse::<Sentiment>().unwrap(), Sentiment::Neutral);
        assert!("Neutral".parse::<Sentiment>().is_err());
    }
}
