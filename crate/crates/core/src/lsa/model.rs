//! Trainable alignment module and its differentiable forward pass.

use super::*;
use crate::autograd::{Graph, Var};
use crate::params::{Bound, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LsaConfig {
    pub dim: usize,
    pub num_patches: usize,
    pub hidden: usize,
    pub beta: f64,
    pub tau: f64,
    pub gamma: f64,
    pub aggregate: AggregateRule,
    pub gumbel_form: GumbelForm,
    pub score_scale: ScoreScale,
}

impl Default for LsaConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            num_patches: 8,
            hidden: 16,
            beta: 0.5,
            tau: 1.0,
            gamma: 0.2,
            aggregate: AggregateRule::CeilHalf,
            gumbel_form: GumbelForm::AsPrinted,
            score_scale: ScoreScale::Sum,
        }
    }
}

impl LsaConfig {
    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.dim == 0 || self.num_patches == 0 || self.hidden == 0 {
            return Err(Error::Config("lsa dim, num_patches and hidden must be nonzero".into()));
        }
        Ok(())
    }

    pub fn max_aggregated(&self) -> usize {
        self.aggregate.max_count(self.num_patches)
    }
}

const SCORER: [&str; 4] = ["lsa.scorer.w1", "lsa.scorer.b1", "lsa.scorer.w2", "lsa.scorer.b2"];
const AGGREGATOR: [&str; 4] = ["lsa.agg.w1", "lsa.agg.b1", "lsa.agg.w2", "lsa.agg.b2"];

fn mlp_from(store: &ParamStore, names: &[&str; 4]) -> Mlp {
    Mlp {
        w1: store.get(names[0]).clone(),
        b1: store.get(names[1]).clone(),
        w2: store.get(names[2]).clone(),
        b2: store.get(names[3]).clone(),
    }
}

fn insert_mlp(store: &mut ParamStore, names: &[&str; 4], mlp: Mlp) {
    store.insert(names[0], mlp.w1);
    store.insert(names[1], mlp.b1);
    store.insert(names[2], mlp.w2);
    store.insert(names[3], mlp.b2);
}

/// The keep/drop outcome for one (image, sentence) pair, kept so that a
/// later forward pass can replay the same discrete choices.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub hard: Tensor,
    pub soft: Tensor,
}

pub enum SelectionMode<'a> {
    /// Sample a fresh mask from the current scores.
    Sample,
    /// Replay masks from an earlier pass, `[image][sentence]`. The forward
    /// value becomes `hard₀ + soft(θ) − soft₀`, which equals the
    /// straight-through output at the recorded point and carries the same
    /// derivative.
    Frozen(&'a [Vec<Selection>]),
}

pub struct GraphAlignment {
    pub loss: Var,
    /// `B × B` pair scores.
    pub scores: Var,
    pub selections: Vec<Vec<Selection>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsaModel {
    pub config: LsaConfig,
    pub params: ParamStore,
}

impl LsaModel {
    pub fn new<R: Rng>(config: LsaConfig, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let d = config.dim;
        let scale = 1.0 / (d as f64).sqrt();
        insert_mlp(&mut params, &SCORER, Mlp::random(d, config.hidden, 1, scale, rng));
        insert_mlp(
            &mut params,
            &AGGREGATOR,
            Mlp::random(d, config.hidden, config.max_aggregated(), scale, rng),
        );
        Self { config, params }
    }

    pub fn from_parts(config: LsaConfig, scorer: Mlp, aggregator: Mlp) -> Self {
        let mut params = ParamStore::new();
        insert_mlp(&mut params, &SCORER, scorer);
        insert_mlp(&mut params, &AGGREGATOR, aggregator);
        Self { config, params }
    }

    /// Copies this module's entries out of a larger store.
    pub fn from_store(config: LsaConfig, store: &ParamStore) -> Self {
        Self::from_parts(config, mlp_from(store, &SCORER), mlp_from(store, &AGGREGATOR))
    }

    pub fn scorer(&self) -> Mlp {
        mlp_from(&self.params, &SCORER)
    }

    pub fn aggregator(&self) -> Mlp {
        mlp_from(&self.params, &AGGREGATOR)
    }

    /// Reference (non-differentiable) forward for one pair.
    pub fn calibrate_pair(
        &self,
        patches: &PatchFeatures,
        tokens: &TokenFeatures,
        noise: &GumbelNoise,
    ) -> Result<(ValueScores, DecisionMask, CalibratedPatches)> {
        let c = &self.config;
        let scores = ValueScores::compute(patches, &self.scorer(), &tokens.global, c.beta)?;
        let mask = gumbel_select_with_noise(&scores.p_f, c.tau, noise, c.gumbel_form)?;
        let calibrated = calibrate(patches, &scores.p_f, &mask, &self.aggregator(), c.aggregate)?;
        Ok((scores, mask, calibrated))
    }

    pub fn pair_score(&self, patches: &PatchFeatures, tokens: &TokenFeatures, noise: &GumbelNoise) -> Result<f64> {
        let (_, _, cal) = self.calibrate_pair(patches, tokens, noise)?;
        alignment_score_scaled(&cal, tokens, self.config.score_scale)
    }

    /// `k[[i, j]]` = score of image `i` calibrated under sentence `j`.
    pub fn score_matrix(
        &self,
        images: &[PatchFeatures],
        sentences: &[TokenFeatures],
        noises: &[GumbelNoise],
    ) -> Result<Tensor> {
        check_batch(images, sentences, noises)?;
        let b = images.len();
        let mut k = Tensor::zeros((b, b));
        for i in 0..b {
            for j in 0..b {
                k[[i, j]] = self.pair_score(&images[i], &sentences[j], &noises[i])?;
            }
        }
        Ok(k)
    }

    pub fn batch_loss(
        &self,
        images: &[PatchFeatures],
        sentences: &[TokenFeatures],
        noises: &[GumbelNoise],
    ) -> Result<f64> {
        let k = self.score_matrix(images, sentences, noises)?;
        alignment_loss(&AlignmentBatch {
            k,
            gamma: self.config.gamma,
        })
    }

    /// Differentiable batch loss; parameters come from `bound`, which must
    /// have been bound from a store containing this model's entries.
    pub fn align_batch_graph(
        &self,
        g: &mut Graph,
        bound: &Bound,
        images: &[PatchFeatures],
        sentences: &[TokenFeatures],
        noises: &[GumbelNoise],
        mode: SelectionMode<'_>,
    ) -> Result<GraphAlignment> {
        check_batch(images, sentences, noises)?;
        if images.len() < 2 {
            return Err(Error::InvalidInput("alignment loss needs a batch of at least two pairs".into()));
        }
        let b = images.len();
        let scorer = mlp_vars(bound, &SCORER);
        let agg = mlp_vars(bound, &AGGREGATOR);

        let unit_tokens: Vec<Var> = sentences
            .iter()
            .map(|s| {
                let mut t = s.tokens.clone();
                for mut r in t.rows_mut() {
                    let n = r.dot(&r).sqrt();
                    if n > 0.0 {
                        r.mapv_inplace(|v| v / n);
                    } else {
                        r.fill(0.0);
                    }
                }
                g.constant(t.reversed_axes())
            })
            .collect();

        let mut selections = Vec::with_capacity(b);
        let mut rows = Vec::with_capacity(b);
        for i in 0..b {
            let img = &images[i];
            let p = g.constant(img.patches.clone());
            let raw = mlp_graph(g, p, &scorer);
            let p_s = g.sigmoid(raw);
            let mut row_sel = Vec::with_capacity(b);
            let mut row_scores = Vec::with_capacity(b);
            for j in 0..b {
                let frozen = match &mode {
                    SelectionMode::Sample => None,
                    SelectionMode::Frozen(f) => Some(&f[i][j]),
                };
                let (score, sel) =
                    self.pair_graph(g, img, p, p_s, &sentences[j], unit_tokens[j], &noises[i], &agg, frozen)?;
                row_scores.push(score);
                row_sel.push(sel);
            }
            rows.push(g.concat_cols(&row_scores));
            selections.push(row_sel);
        }
        let scores = g.concat_rows(&rows);
        let loss = hinge_graph(g, scores, self.config.gamma);
        Ok(GraphAlignment {
            loss,
            scores,
            selections,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn pair_graph(
        &self,
        g: &mut Graph,
        img: &PatchFeatures,
        patches: Var,
        p_s: Var,
        sentence: &TokenFeatures,
        unit_tokens_t: Var,
        noise: &GumbelNoise,
        agg: &[Var; 4],
        frozen: Option<&Selection>,
    ) -> Result<(Var, Selection)> {
        let c = &self.config;
        let n = img.len();
        let (p_l, p_e) = attentive_scores(img, &sentence.global, &img.cls)?;
        let attn = ((&p_l + &p_e) * (c.beta / 2.0)).insert_axis(Axis(1));
        let attn = g.constant(attn);
        let weighted = g.scale(p_s, 1.0 - c.beta);
        let p_f = g.add(weighted, attn);

        let pc = g.clamp(p_f, SCORE_EPS, 1.0 - SCORE_EPS);
        let keep_m = pc;
        let drop_m = g.one_minus(pc);
        let g_keep = g.constant(noise.0.slice(ndarray::s![.., 0..1]).to_owned());
        let g_drop = g.constant(noise.0.slice(ndarray::s![.., 1..2]).to_owned());
        let logit = |g: &mut Graph, m: Var, noise: Var| match c.gumbel_form {
            GumbelForm::AsPrinted => {
                let s = g.add(m, noise);
                let s = g.clamp(s, GUMBEL_LOG_FLOOR, f64::INFINITY);
                g.log(s)
            }
            GumbelForm::Canonical => {
                let l = g.log(m);
                g.add(l, noise)
            }
        };
        let l_keep = logit(g, keep_m, g_keep);
        let l_drop = logit(g, drop_m, g_drop);
        let logits = g.concat_cols(&[l_keep, l_drop]);
        let logits = g.scale(logits, 1.0 / c.tau);
        let soft = g.softmax_rows(logits);
        let soft_keep = g.slice_cols(soft, 0, 1);

        let (decision, selection) = match frozen {
            None => {
                let hard: Tensor = hard_decision(g.value(soft))
                    .iter()
                    .map(|&k| if k { 1.0 } else { 0.0 })
                    .collect::<Array1<f64>>()
                    .insert_axis(Axis(1));
                let sel = Selection {
                    hard: hard.clone(),
                    soft: g.value(soft_keep).clone(),
                };
                (g.straight_through(hard, soft_keep), sel)
            }
            Some(sel) => {
                let offset = g.constant(&sel.hard - &sel.soft);
                (g.add(soft_keep, offset), sel.clone())
            }
        };
        let kept: Vec<usize> = (0..n).filter(|&i| selection.hard[[i, 0]] > 0.5).collect();
        let dropped: Vec<usize> = (0..n).filter(|&i| selection.hard[[i, 0]] <= 0.5).collect();

        let mut parts = vec![g.constant(img.cls.clone().insert_axis(Axis(0)))];
        if !kept.is_empty() {
            let masked = g.mul_col(patches, decision);
            let selected = g.gather_rows(masked, &kept);
            match c.aggregate.count(kept.len()) {
                Some(n_f) => {
                    let logits = mlp_graph(g, selected, agg);
                    let logits = g.slice_cols(logits, 0, n_f);
                    let w = g.softmax_cols(logits);
                    let wt = g.transpose(w);
                    parts.push(g.matmul(wt, selected));
                }
                None => parts.push(selected),
            }
        }
        if dropped.is_empty() {
            parts.push(g.constant(Tensor::zeros((1, img.dim()))));
        } else {
            let e = g.exp(p_f);
            let not_kept = g.one_minus(decision);
            let num = g.mul(e, not_kept);
            let num = g.gather_rows(num, &dropped);
            let den = g.sum(num);
            let inv = g.recip(den);
            let w = g.mul_scalar(num, inv);
            let wt = g.transpose(w);
            let rows = g.constant(img.patches.select(Axis(0), &dropped));
            parts.push(g.matmul(wt, rows));
        }
        let calibrated = g.concat_rows(&parts);
        let unit = g.normalize_rows(calibrated);
        let sim = g.matmul(unit, unit_tokens_t);
        let rmax = g.max_rows(sim);
        let rmean = g.mean(rmax);
        let cmax = g.max_cols(sim);
        let cmean = g.mean(cmax);
        let k = g.add(rmean, cmean);
        let k = g.scale(k, c.score_scale.factor());
        Ok((k, selection))
    }
}

fn check_batch(images: &[PatchFeatures], sentences: &[TokenFeatures], noises: &[GumbelNoise]) -> Result<()> {
    if images.len() != sentences.len() || images.len() != noises.len() {
        return Err(Error::InvalidInput("images, sentences and noise must align".into()));
    }
    for (img, n) in images.iter().zip(noises) {
        if img.len() != n.len() {
            return Err(Error::InvalidInput("noise rows must match patch count".into()));
        }
    }
    Ok(())
}

fn mlp_vars(bound: &Bound, names: &[&str; 4]) -> [Var; 4] {
    [bound.var(names[0]), bound.var(names[1]), bound.var(names[2]), bound.var(names[3])]
}

fn mlp_graph(g: &mut Graph, x: Var, p: &[Var; 4]) -> Var {
    let h = g.matmul(x, p[0]);
    let h = g.add_row(h, p[1]);
    let h = g.tanh(h);
    let o = g.matmul(h, p[2]);
    g.add_row(o, p[3])
}

/// Differentiable counterpart of [`alignment_loss`]; negatives are chosen
/// from the forward values.
pub fn hinge_graph(g: &mut Graph, scores: Var, gamma: f64) -> Var {
    let b = g.shape(scores).0;
    let k = g.value(scores).clone();
    let mut terms = Vec::with_capacity(2 * b);
    for i in 0..b {
        let pos = g.element(scores, i, i);
        let s_hat = hardest_negative(k.row(i).iter().copied(), i);
        let v_hat = hardest_negative(k.column(i).iter().copied(), i);
        for (r, c) in [(i, s_hat), (v_hat, i)] {
            let neg = g.element(scores, r, c);
            let diff = g.sub(neg, pos);
            let shifted = g.add_scalar(diff, gamma);
            terms.push(g.relu(shifted));
        }
    }
    let all = g.concat_rows(&terms);
    g.sum(all)
}
