//! Linguistic-aware semantic alignment.
//!
//! Three stages run per image-sentence pair:
//!
//! 1. **Dynamic patch selection.** Each patch gets a significance score from a
//!    small scorer network, a linguistic score against the pooled sentence
//!    embedding and an image-prominence score against the global visual
//!    embedding. The fused score parameterises a two-way Gumbel-Softmax whose
//!    row argmax is the keep/drop mask.
//! 2. **Semantic patch calibration.** Kept patches are compressed into `N_f`
//!    aggregated features by a column-softmaxed aggregation network; dropped
//!    patches are folded into a single score-weighted feature.
//! 3. **Patch-token alignment.** Cosine similarities between calibrated
//!    patches and tokens are reduced with max-correspondence in both
//!    directions, and a bidirectional hinge loss with hardest in-batch
//!    negatives trains the pair scores.
//!
//! The functions in this module are the plain-`f64` reference path. The
//! differentiable path used for training lives in [`model`].

pub mod model;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::features::{PatchFeatures, TokenFeatures};
use ndarray::{Array1, Axis};
use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use model::{GraphAlignment, LsaConfig, LsaModel, Selection, SelectionMode};

/// Clamp applied to fused scores before taking logs.
pub const SCORE_EPS: f64 = 1e-6;
/// Lower clamp on `m + G` in the as-printed Gumbel form.
pub const GUMBEL_LOG_FLOOR: f64 = 1e-10;

/// Two-layer feedforward map with a tanh hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: Tensor::zeros((input, hidden)),
            b1: Tensor::zeros((1, hidden)),
            w2: Tensor::zeros((hidden, output)),
            b2: Tensor::zeros((1, output)),
        }
    }

    pub fn random<R: Rng>(input: usize, hidden: usize, output: usize, scale: f64, rng: &mut R) -> Self {
        let mut u = |shape| Tensor::from_shape_fn(shape, |_| rng.gen_range(-scale..=scale));
        Self {
            w1: u((input, hidden)),
            b1: u((1, hidden)),
            w2: u((hidden, output)),
            b2: u((1, output)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let h = (x.dot(&self.w1) + &self.b1).mapv(f64::tanh);
        h.dot(&self.w2) + &self.b2
    }

    pub fn output_dim(&self) -> usize {
        self.w2.ncols()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-patch significance `sigmoid(MLP(v_i))`.
pub fn significance_scores(patches: &PatchFeatures, scorer: &Mlp) -> Result<Array1<f64>> {
    if !patches.patches.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("patch features passed to the scorer".into()));
    }
    if scorer.w1.nrows() != patches.dim() || scorer.output_dim() != 1 {
        return Err(Error::InvalidInput(format!(
            "scorer expects {}→1, got patches of width {} and output {}",
            scorer.w1.nrows(),
            patches.dim(),
            scorer.output_dim()
        )));
    }
    Ok(scorer.forward(&patches.patches).column(0).mapv(sigmoid))
}

/// Min-max normalisation to `[0, 1]`; a constant vector maps to all ones.
pub fn min_max_normalize(raw: &Array1<f64>) -> Array1<f64> {
    let lo = raw.fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = raw.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if hi - lo > 0.0 {
        raw.mapv(|v| (v - lo) / (hi - lo))
    } else {
        Array1::ones(raw.len())
    }
}

/// Linguistic-aware scores `p_l` and image-prominent scores `p_e`.
pub fn attentive_scores(
    patches: &PatchFeatures,
    text_global: &Array1<f64>,
    visual_global: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let d = patches.dim();
    if text_global.len() != d || visual_global.len() != d {
        return Err(Error::InvalidInput(format!(
            "global vectors must have width {d}, got {} and {}",
            text_global.len(),
            visual_global.len()
        )));
    }
    let raw_l = patches.patches.dot(text_global) / d as f64;
    let raw_e = patches.patches.dot(visual_global) / d as f64;
    Ok((min_max_normalize(&raw_l), min_max_normalize(&raw_e)))
}

fn check_unit(name: &str, v: &Array1<f64>) -> Result<()> {
    if v.iter().all(|x| (0.0..=1.0).contains(x)) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must lie in [0, 1]")))
    }
}

pub fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("beta must lie in [0, 1], got {beta}")))
    }
}

/// `p_f = (1-β)·p_s + (β/2)·(p_l + p_e)`
pub fn fuse_scores(p_s: &Array1<f64>, p_l: &Array1<f64>, p_e: &Array1<f64>, beta: f64) -> Result<Array1<f64>> {
    check_beta(beta)?;
    if p_s.len() != p_l.len() || p_s.len() != p_e.len() {
        return Err(Error::InvalidInput("score vectors differ in length".into()));
    }
    check_unit("p_s", p_s)?;
    check_unit("p_l", p_l)?;
    check_unit("p_e", p_e)?;
    Ok(p_s * (1.0 - beta) + &((p_l + p_e) * (beta / 2.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueScores {
    pub p_s: Array1<f64>,
    pub p_l: Array1<f64>,
    pub p_e: Array1<f64>,
    pub p_f: Array1<f64>,
    pub beta: f64,
}

impl ValueScores {
    pub fn compute(
        patches: &PatchFeatures,
        scorer: &Mlp,
        text_global: &Array1<f64>,
        beta: f64,
    ) -> Result<Self> {
        let p_s = significance_scores(patches, scorer)?;
        let (p_l, p_e) = attentive_scores(patches, text_global, &patches.cls)?;
        let p_f = fuse_scores(&p_s, &p_l, &p_e, beta)?;
        Ok(Self {
            p_s,
            p_l,
            p_e,
            p_f,
            beta,
        })
    }
}

/// How the Gumbel perturbation enters the two-way logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GumbelForm {
    /// `log(max(m + G, 1e-10))`
    #[default]
    AsPrinted,
    /// `log(m) + G`
    Canonical,
}

/// Gumbel draws for the keep and drop categories, `N_v × 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelNoise(pub Tensor);

impl GumbelNoise {
    pub fn zeros(n: usize) -> Self {
        Self(Tensor::zeros((n, 2)))
    }

    /// `G = -log(-log(U))`, `U ~ Uniform(0, 1)` open interval.
    pub fn sample<R: Rng>(n: usize, rng: &mut R) -> Self {
        Self(Tensor::from_shape_fn((n, 2), |_| {
            let u: f64 = rng.sample(Open01);
            -(-u.ln()).ln()
        }))
    }

    pub fn from_seed(n: usize, seed: u64) -> Self {
        Self::sample(n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionMask {
    /// Column 0 is "keep", column 1 is "drop".
    pub soft: Tensor,
    pub hard: Vec<bool>,
    pub tau: f64,
}

impl DecisionMask {
    pub fn kept(&self) -> Vec<usize> {
        (0..self.hard.len()).filter(|&i| self.hard[i]).collect()
    }

    pub fn dropped(&self) -> Vec<usize> {
        (0..self.hard.len()).filter(|&i| !self.hard[i]).collect()
    }

    pub fn hard_column(&self) -> Tensor {
        Tensor::from_shape_fn((self.hard.len(), 1), |(i, _)| if self.hard[i] { 1.0 } else { 0.0 })
    }
}

/// Pre-temperature logits of the two-way relaxation.
pub fn gumbel_logits(p_f: &Array1<f64>, noise: &GumbelNoise, form: GumbelForm) -> Tensor {
    Tensor::from_shape_fn((p_f.len(), 2), |(i, l)| {
        let p = p_f[i].clamp(SCORE_EPS, 1.0 - SCORE_EPS);
        let m = if l == 0 { p } else { 1.0 - p };
        let g = noise.0[[i, l]];
        match form {
            GumbelForm::AsPrinted => (m + g).max(GUMBEL_LOG_FLOOR).ln(),
            GumbelForm::Canonical => m.ln() + g,
        }
    })
}

/// Keep iff the keep probability is at least the drop probability.
pub fn hard_decision(soft: &Tensor) -> Vec<bool> {
    soft.rows().into_iter().map(|r| r[0] >= r[1]).collect()
}

pub fn gumbel_select_with_noise(
    p_f: &Array1<f64>,
    tau: f64,
    noise: &GumbelNoise,
    form: GumbelForm,
) -> Result<DecisionMask> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {tau}")));
    }
    if noise.len() != p_f.len() {
        return Err(Error::InvalidInput("noise rows must match patch count".into()));
    }
    let mut soft = gumbel_logits(p_f, noise, form) / tau;
    for mut row in soft.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    let hard = hard_decision(&soft);
    Ok(DecisionMask { soft, hard, tau })
}

/// Samples fresh Gumbel noise from `seed` and applies it.
pub fn gumbel_select(p_f: &Array1<f64>, tau: f64, seed: u64, form: GumbelForm) -> Result<DecisionMask> {
    gumbel_select_with_noise(p_f, tau, &GumbelNoise::from_seed(p_f.len(), seed), form)
}

/// Rule for the number of aggregated features given `N_p` kept patches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum AggregateRule {
    /// `⌈N_p / 2⌉`
    #[default]
    CeilHalf,
    /// A fixed count, lowered to `N_p - 1` when it would not compress.
    Fixed(usize),
}

impl AggregateRule {
    /// `None` when there are too few kept patches to compress.
    pub fn count(self, kept: usize) -> Option<usize> {
        if kept < 2 {
            return None;
        }
        Some(match self {
            AggregateRule::CeilHalf => kept.div_ceil(2),
            AggregateRule::Fixed(n) => n.clamp(1, kept - 1),
        })
    }

    /// Widest aggregation output that can be requested for `num_patches`.
    pub fn max_count(self, num_patches: usize) -> usize {
        match self {
            AggregateRule::CeilHalf => num_patches.div_ceil(2).max(1),
            AggregateRule::Fixed(n) => n.max(1),
        }
    }
}

/// Column-softmax over patches of `agg(selected)[:, ..n_f]`, then `Wᵀ·V^p`.
pub fn aggregate_patches(selected: &Tensor, n_f: usize, agg: &Mlp) -> Result<(Tensor, Tensor)> {
    let n_p = selected.nrows();
    if n_f == 0 || n_f >= n_p {
        return Err(Error::InvalidInput(format!(
            "aggregated count {n_f} must satisfy 1 <= N_f < N_p = {n_p}"
        )));
    }
    if agg.output_dim() < n_f {
        return Err(Error::InvalidInput(format!(
            "aggregation network emits {} columns, {n_f} requested",
            agg.output_dim()
        )));
    }
    let logits = agg.forward(selected);
    let mut weights = logits.slice(ndarray::s![.., ..n_f]).to_owned();
    for mut col in weights.columns_mut() {
        let m = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        col.mapv_inplace(|v| (v - m).exp());
        let z = col.sum();
        col.mapv_inplace(|v| v / z);
    }
    let aggregated = weights.t().dot(selected);
    Ok((aggregated, weights))
}

/// Score-weighted fusion of the dropped patches. The boolean is `false`
/// when no patch was dropped, in which case the zero vector is returned.
pub fn fuse_redundant(patches: &PatchFeatures, p_f: &Array1<f64>, mask: &DecisionMask) -> (Array1<f64>, bool) {
    let dropped = mask.dropped();
    if dropped.is_empty() {
        return (Array1::zeros(patches.dim()), false);
    }
    let m = dropped.iter().map(|&i| p_f[i]).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = dropped.iter().map(|&i| (p_f[i] - m).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut out = Array1::zeros(patches.dim());
    for (&i, wi) in dropped.iter().zip(&w) {
        out.scaled_add(wi / z, &patches.patches.row(i));
    }
    (out, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedPatches {
    pub cls: Array1<f64>,
    pub aggregated: Tensor,
    pub redundant_fused: Array1<f64>,
    /// `N_p × N_f`; identity when too few patches were kept to compress.
    pub weights: Tensor,
}

impl CalibratedPatches {
    /// `[cls; aggregated; redundant_fused]`
    pub fn rows(&self) -> Tensor {
        let cls = self.cls.view().insert_axis(Axis(0));
        let red = self.redundant_fused.view().insert_axis(Axis(0));
        ndarray::concatenate(Axis(0), &[cls, self.aggregated.view(), red]).expect("same width")
    }

    pub fn len(&self) -> usize {
        self.aggregated.nrows() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Full calibration for one image given its decision mask.
pub fn calibrate(
    patches: &PatchFeatures,
    p_f: &Array1<f64>,
    mask: &DecisionMask,
    agg: &Mlp,
    rule: AggregateRule,
) -> Result<CalibratedPatches> {
    let kept = mask.kept();
    let selected = patches.patches.select(Axis(0), &kept);
    let (aggregated, weights) = match rule.count(kept.len()) {
        Some(n_f) => aggregate_patches(&selected, n_f, agg)?,
        None => (selected.clone(), Tensor::eye(kept.len())),
    };
    let (redundant_fused, _) = fuse_redundant(patches, p_f, mask);
    Ok(CalibratedPatches {
        cls: patches.cls.clone(),
        aggregated,
        redundant_fused,
        weights,
    })
}

/// Row-wise cosine similarity; zero-norm rows give similarity 0.
pub fn cosine_matrix(a: &Tensor, b: &Tensor) -> Tensor {
    let unit = |m: &Tensor| {
        let mut m = m.clone();
        for mut r in m.rows_mut() {
            let n = r.dot(&r).sqrt();
            if n > 0.0 {
                r.mapv_inplace(|v| v / n);
            } else {
                r.fill(0.0);
            }
        }
        m
    };
    unit(a).dot(&unit(b).t())
}

/// Constant in front of the two directed means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    /// `mean_i max_j A + mean_j max_i A`, range `[-2, 2]`.
    #[default]
    Sum,
    /// Half of the above, range `[-1, 1]`.
    Half,
}

impl ScoreScale {
    pub fn factor(self) -> f64 {
        match self {
            ScoreScale::Sum => 1.0,
            ScoreScale::Half => 0.5,
        }
    }
}

/// Max-correspondence score from a similarity matrix.
pub fn max_correspondence(sim: &Tensor, scale: ScoreScale) -> f64 {
    let row_max = sim
        .rows()
        .into_iter()
        .map(|r| r.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
        .sum::<f64>()
        / sim.nrows() as f64;
    let col_max = sim
        .columns()
        .into_iter()
        .map(|c| c.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
        .sum::<f64>()
        / sim.ncols() as f64;
    scale.factor() * (row_max + col_max)
}

pub fn alignment_score(calibrated: &CalibratedPatches, tokens: &TokenFeatures) -> Result<f64> {
    alignment_score_scaled(calibrated, tokens, ScoreScale::Sum)
}

pub fn alignment_score_scaled(calibrated: &CalibratedPatches, tokens: &TokenFeatures, scale: ScoreScale) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("alignment needs at least one token".into()));
    }
    let rows = calibrated.rows();
    if rows.ncols() != tokens.dim() {
        return Err(Error::InvalidInput("patch and token widths differ".into()));
    }
    Ok(max_correspondence(&cosine_matrix(&rows, &tokens.tokens), scale))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentBatch {
    /// `k[[i, j]]` scores image `i` against sentence `j`; the diagonal holds
    /// the positive pairs.
    pub k: Tensor,
    pub gamma: f64,
}

/// First index of the maximum over `values` excluding `skip`.
pub fn hardest_negative(values: impl Iterator<Item = f64>, skip: usize) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in values.enumerate() {
        if j == skip {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best.expect("at least two candidates").0
}

/// Bidirectional hinge with the hardest in-batch negative sentence and image.
pub fn alignment_loss(batch: &AlignmentBatch) -> Result<f64> {
    let k = &batch.k;
    let b = k.nrows();
    if k.ncols() != b {
        return Err(Error::InvalidInput("alignment matrix must be square".into()));
    }
    if b < 2 {
        return Err(Error::InvalidInput("alignment loss needs a batch of at least two pairs".into()));
    }
    if !(batch.gamma > 0.0) {
        return Err(Error::InvalidInput("margin must be positive".into()));
    }
    if !k.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("alignment matrix".into()));
    }
    let mut loss = 0.0;
    for i in 0..b {
        let pos = k[[i, i]];
        let s_hat = hardest_negative(k.row(i).iter().copied(), i);
        let v_hat = hardest_negative(k.column(i).iter().copied(), i);
        loss += (batch.gamma - pos + k[[i, s_hat]]).max(0.0);
        loss += (batch.gamma - pos + k[[v_hat, i]]).max(0.0);
    }
    Ok(loss)
}
