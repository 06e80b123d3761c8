//! A small synthetic corpus for smoke runs and tests. Each sentence carries
//! one cue word that decides the label.

use crate::config::RunConfig;
use crate::data::{write_jsonl, split_path, Sample, Sentiment};
use crate::error::Result;
use crate::learning::seq2seq::Seq2SeqConfig;
use crate::translation::{AuxKind, AuxiliaryText, BBox, ObjectAnnotation};
use std::path::Path;

const TARGETS: [&str; 8] = ["Alice", "Boston", "Celtics", "Dana", "Everest", "Fiona", "Glasgow", "Hugo"];
const SCENES: [&str; 4] = ["at the harbor", "in the park", "on stage", "near the station"];

fn cue(label: Sentiment) -> &'static str {
    match label {
        Sentiment::Positive => "wonderful",
        Sentiment::Neutral => "ordinary",
        Sentiment::Negative => "terrible",
    }
}

fn mood(label: Sentiment) -> &'static str {
    match label {
        Sentiment::Positive => "bright cheerful",
        Sentiment::Neutral => "plain quiet",
        Sentiment::Negative => "dark gloomy",
    }
}

/// `n` samples cycling positive, neutral, negative. Every third sample has
/// a resolved object with a face description.
pub fn toy_samples(n: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let label = Sentiment::ALL[i % 3];
            let target = TARGETS[i % TARGETS.len()];
            let scene = SCENES[i % SCENES.len()];
            let sentence = format!("{target} had a {} day {scene}", cue(label));
            let mut s = Sample::new(&format!("toy-{i:03}"), &format!("toy-img-{i:03}"), &sentence, target, label);
            s.ac = Some(format!("{} tones {scene}", mood(label)));
            s.gc = Some(format!("a photo {scene}"));
            if i % 3 == 2 {
                s.object = Some(ObjectAnnotation {
                    object_id: 1,
                    bbox: BBox { x: 8, y: 8, w: 16, h: 16 },
                    linked_target: target.to_string(),
                });
                s.od = Some(AuxiliaryText::new(AuxKind::FD, &format!("a {} face", mood(label)), "toy"));
            }
            s.sr = Some(format!("the word {} describes {target}", cue(label)));
            s.ir = Some(format!("the {} scene feels {}", mood(label), label.as_str()));
            s
        })
        .collect()
}

/// Writes `train`, `dev` and `test` splits; all three hold the same samples.
pub fn write_toy_dataset(dir: &Path, n: usize) -> Result<()> {
    let samples = toy_samples(n);
    for split in ["train", "dev", "test"] {
        write_jsonl(&split_path(dir, split), &samples)?;
    }
    Ok(())
}

/// A tiny backbone with an overfitting learning rate.
pub fn toy_config(dataset: &Path, out_dir: &Path) -> RunConfig {
    let mut c = RunConfig {
        dataset: dataset.to_path_buf(),
        out_dir: out_dir.to_path_buf(),
        epochs: 100,
        batch: 4,
        lr: 1e-2,
        weight_decay: 0.0,
        eval_every: 100,
        model: Seq2SeqConfig {
            d_model: 16,
            ff: 32,
            enc_layers: 1,
            dec_layers: 1,
            max_decode: 16,
        },
        ..RunConfig::default()
    };
    c.lsa.dim = 8;
    c.lsa.num_patches = 4;
    c.lsa.hidden = 8;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_samples_are_balanced_and_distinct() {
        let s = toy_samples(9);
        for l in Sentiment::ALL {
            assert_eq!(s.iter().filter(|x| x.label == l).count(), 3);
        }
        let images: std::collections::BTreeSet<_> = s.iter().map(|x| &x.image).collect();
        assert_eq!(images.len(), 9);
        assert!(s[2].od.is_some() && s[0].od.is_none());
        assert!(toy_config(Path::new("d"), Path::new("o")).validate().is_ok());
    }
}
