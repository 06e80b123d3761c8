//! Encoder input construction.
//!
//! With a resolved object and its description the order is
//! `(task, S, OD, T)`; otherwise `(task, AC, S, T)`. Segments after the task
//! token are joined by the separator marker.

use super::markers::{escape, Marker, Task};
use crate::data::Sample;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionSource {
    /// `ac` field.
    Aesthetic,
    /// `gc` field.
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputOptions {
    pub enable_od: bool,
    pub enable_aes_cap: bool,
    pub caption: CaptionSource,
}

impl Default for InputOptions {
    fn default() -> Self {
        Self {
            enable_od: true,
            enable_aes_cap: true,
            caption: CaptionSource::Aesthetic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Caption,
    Sentence,
    Object,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInput {
    pub task: Task,
    pub segments: Vec<(Segment, String)>,
}

impl TaskInput {
    pub fn text(&self) -> String {
        let mut out = Task::token(self.task).text().to_string();
        for (i, (_, s)) in self.segments.iter().enumerate() {
            if i > 0 {
                out.push(' ');
                out.push_str(Marker::Sep.text());
            }
            out.push(' ');
            out.push_str(&escape(s));
        }
        out
    }
}

pub fn build_input(task: Task, sample: &Sample, opts: &InputOptions) -> Result<TaskInput> {
    let sentence = (Segment::Sentence, sample.sentence.clone());
    let target = (Segment::Target, sample.target.clone());
    let object = if opts.enable_od && sample.object.is_some() {
        match &sample.od {
            Some(od) => Some((Segment::Object, od.text.clone())),
            None => {
                return Err(Error::InvalidInput(format!(
                    "sample {}: object resolved but no object description",
                    sample.id
                )))
            }
        }
    } else {
        None
    };
    let segments = match object {
        Some(od) => vec![sentence, od, target],
        None if opts.enable_aes_cap => {
            let (field, name) = match opts.caption {
                CaptionSource::Aesthetic => (&sample.ac, "ac"),
                CaptionSource::Generic => (&sample.gc, "gc"),
            };
            let caption = field.clone().ok_or_else(|| {
                Error::InvalidInput(format!("sample {}: missing `{name}` caption for an object-free input", sample.id))
            })?;
            vec![(Segment::Caption, caption), sentence, target]
        }
        None => vec![sentence, target],
    };
    Ok(TaskInput { task, segments })
}
