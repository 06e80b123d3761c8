//! Rationale-aware multi-task learning: input construction, output
//! markers, the encoder-decoder backbone, losses, and the training loop.

pub mod input;
pub mod markers;
pub mod optim;
pub mod seq2seq;
pub mod train;
pub mod vocab;

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub use input::{build_input, CaptionSource, InputOptions, TaskInput};
pub use markers::{format_target, parse_output, parse_output_bytes, ParsedOutput, Prediction, Task};

/// Mean over samples of the summed token negative log-likelihood.
/// `logits[k]` is `T_k × |vocab|` and `targets[k]` has `T_k` ids.
pub fn generation_loss(logits: &[Tensor], targets: &[Vec<usize>]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} logit matrices for {} target sequences",
            logits.len(),
            targets.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::InvalidInput("generation loss over zero samples".into()));
    }
    let mut total = 0.0;
    for (l, t) in logits.iter().zip(targets) {
        if l.nrows() != t.len() {
            return Err(Error::InvalidInput(format!("{} logit rows for {} targets", l.nrows(), t.len())));
        }
        for (row, &gold) in l.rows().into_iter().zip(t) {
            if gold >= row.len() {
                return Err(Error::InvalidInput(format!("target id {gold} outside vocabulary")));
            }
            let mx = row.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            total += lse - row[gold];
        }
    }
    Ok(total / logits.len() as f64)
}

/// Summed NLL of `gold` under row-wise `logits`, as a graph scalar.
pub fn nll_graph(g: &mut Graph, logits: Var, gold: &[usize]) -> Var {
    let lp = g.log_softmax_rows(logits);
    let picked = g.pick_per_row(lp, gold);
    let s = g.sum(picked);
    g.neg(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(alpha) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !open(lambda) {
            return Err(Error::Config(format!("lambda must lie in (0, 1), got {lambda}")));
        }
        Ok(Self { alpha, lambda })
    }

    pub fn sc(&self) -> f64 {
        self.alpha
    }

    /// Shared by SRG and IRG.
    pub fn rationale(&self) -> f64 {
        (1.0 - self.alpha) / 2.0
    }

    pub fn align(&self) -> f64 {
        self.lambda
    }
}

pub fn total_loss(l_sc: f64, l_srg: f64, l_irg: f64, l_align: f64, w: &LossWeights) -> Result<f64> {
    LossWeights::new(w.alpha, w.lambda)?;
    for (name, v) in [("sc", l_sc), ("srg", l_srg), ("irg", l_irg), ("align", l_align)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidInput(format!("{name} loss must be finite and non-negative, got {v}")));
        }
    }
    Ok(w.sc() * l_sc + w.rationale() * (l_srg + l_irg) + w.align() * l_align)
}

/// Loss components of one step; disabled terms are `None` and contribute
/// nothing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub srg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub irg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub align: Option<f64>,
    pub total: f64,
}

impl LossComponents {
    pub fn combine(sc: Option<f64>, srg: Option<f64>, irg: Option<f64>, align: Option<f64>, w: &LossWeights) -> Self {
        let total = w.sc() * sc.unwrap_or(0.0)
            + w.rationale() * (srg.unwrap_or(0.0) + irg.unwrap_or(0.0))
            + w.align() * align.unwrap_or(0.0);
        Self {
            sc,
            srg,
            irg,
            align,
            total,
        }
    }

    /// Names of the terms that are present.
    pub fn terms(&self) -> Vec<&'static str> {
        [("sc", self.sc), ("srg", self.srg), ("irg", self.irg), ("align", self.align)]
            .into_iter()
            .filter(|t| t.1.is_some())
            .map(|t| t.0)
            .collect()
    }
}
