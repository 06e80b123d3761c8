//! Task tokens, output markers, and the total parser for model output.
//!
//! Targets look like `⟨sr⟩ r ⟨/sr⟩ ⟨sen⟩ y ⟨/sen⟩`. A literal `⟨` or `\`
//! inside a rationale is written as `\⟨` or `\\`, so marker text can never
//! appear unescaped inside a span.

use crate::data::Sentiment;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    SC,
    SRG,
    IRG,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::SC, Task::SRG, Task::IRG];

    pub fn token(self) -> Marker {
        match self {
            Task::SC => Marker::Sc,
            Task::SRG => Marker::Srg,
            Task::IRG => Marker::Irg,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::SC => "sc",
            Task::SRG => "srg",
            Task::IRG => "irg",
        }
    }

    /// Rationale span markers, `None` for SC.
    pub fn span(self) -> Option<(Marker, Marker)> {
        match self {
            Task::SC => None,
            Task::SRG => Some((Marker::SrOpen, Marker::SrClose)),
            Task::IRG => Some((Marker::IrOpen, Marker::IrClose)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Marker {
    Sc,
    Srg,
    Irg,
    SenOpen,
    SenClose,
    SrOpen,
    SrClose,
    IrOpen,
    IrClose,
    Sep,
}

impl Marker {
    pub const ALL: [Marker; 10] = [
        Marker::Sc,
        Marker::Srg,
        Marker::Irg,
        Marker::SenOpen,
        Marker::SenClose,
        Marker::SrOpen,
        Marker::SrClose,
        Marker::IrOpen,
        Marker::IrClose,
        Marker::Sep,
    ];

    pub fn text(self) -> &'static str {
        match self {
            Marker::Sc => "⟨sc⟩",
            Marker::Srg => "⟨srg⟩",
            Marker::Irg => "⟨irg⟩",
            Marker::SenOpen => "⟨sen⟩",
            Marker::SenClose => "⟨/sen⟩",
            Marker::SrOpen => "⟨sr⟩",
            Marker::SrClose => "⟨/sr⟩",
            Marker::IrOpen => "⟨ir⟩",
            Marker::IrClose => "⟨/ir⟩",
            Marker::Sep => "⟨sep⟩",
        }
    }

    fn at(s: &str) -> Option<Marker> {
        Marker::ALL.into_iter().find(|m| s.starts_with(m.text()))
    }
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c == '\\' || c == '⟨' {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece {
    Marker(Marker),
    /// Unescaped literal text between markers.
    Text(String),
}

/// Splits text into markers and unescaped literal runs. A backslash escapes
/// the next character; a trailing lone backslash is kept literally.
pub fn lex(text: &str) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        let c = rest.chars().next().expect("in bounds");
        if c == '\\' {
            match rest[1..].chars().next() {
                Some(n) => {
                    buf.push(n);
                    i += 1 + n.len_utf8();
                }
                None => {
                    buf.push('\\');
                    i += 1;
                }
            }
            continue;
        }
        if c == '⟨' {
            if let Some(m) = Marker::at(rest) {
                if !buf.is_empty() {
                    out.push(Piece::Text(std::mem::take(&mut buf)));
                }
                out.push(Piece::Marker(m));
                i += m.text().len();
                continue;
            }
        }
        buf.push(c);
        i += c.len_utf8();
    }
    if !buf.is_empty() {
        out.push(Piece::Text(buf));
    }
    out
}

pub fn format_target(task: Task, label: Sentiment, rationale: Option<&str>) -> Result<String> {
    let sen = format!("{} {} {}", Marker::SenOpen.text(), label.as_str(), Marker::SenClose.text());
    match (task.span(), rationale) {
        (None, None) => Ok(sen),
        (None, Some(_)) => Err(Error::Format("SC targets carry no rationale".into())),
        (Some(_), None) => Err(Error::Format(format!("{} targets need a rationale", task.name()))),
        (Some((open, close)), Some(r)) => Ok(format!("{} {} {} {sen}", open.text(), escape(r), close.text())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prediction {
    Positive,
    Neutral,
    Negative,
    Undiscerned,
}

impl From<Sentiment> for Prediction {
    fn from(s: Sentiment) -> Self {
        match s {
            Sentiment::Positive => Prediction::Positive,
            Sentiment::Neutral => Prediction::Neutral,
            Sentiment::Negative => Prediction::Negative,
        }
    }
}

impl Prediction {
    pub fn sentiment(self) -> Option<Sentiment> {
        match self {
            Prediction::Positive => Some(Sentiment::Positive),
            Prediction::Neutral => Some(Sentiment::Neutral),
            Prediction::Negative => Some(Sentiment::Negative),
            Prediction::Undiscerned => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub sentiment: Prediction,
    pub rationale: Option<String>,
}

/// Drops exactly one leading and one trailing space, as written by
/// [`format_target`].
fn strip_pad(s: &str) -> &str {
    let s = s.strip_prefix(' ').unwrap_or(s);
    s.strip_suffix(' ').unwrap_or(s)
}

/// Content of the first `open text close` run, or of `open close` (empty).
fn first_span(pieces: &[Piece], open: Marker, close: Marker) -> Option<String> {
    for (i, p) in pieces.iter().enumerate() {
        if *p != Piece::Marker(open) {
            continue;
        }
        match (pieces.get(i + 1), pieces.get(i + 2)) {
            (Some(Piece::Text(t)), Some(Piece::Marker(m))) if *m == close => return Some(strip_pad(t).to_string()),
            (Some(Piece::Marker(m)), _) if *m == close => return Some(String::new()),
            _ => {}
        }
    }
    None
}

/// Never fails. A missing sentiment span or an unknown label yields
/// [`Prediction::Undiscerned`].
pub fn parse_output(task: Task, text: &str) -> ParsedOutput {
    let pieces = lex(text);
    let sentiment = first_span(&pieces, Marker::SenOpen, Marker::SenClose)
        .and_then(|s| s.trim().parse::<Sentiment>().ok())
        .map(Prediction::from)
        .unwrap_or(Prediction::Undiscerned);
    let rationale = task.span().and_then(|(o, c)| first_span(&pieces, o, c));
    ParsedOutput { sentiment, rationale }
}

pub fn parse_output_bytes(task: Task, bytes: &[u8]) -> ParsedOutput {
    parse_output(task, &String::from_utf8_lossy(bytes))
}
