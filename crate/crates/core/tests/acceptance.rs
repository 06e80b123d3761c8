//! Release acceptance checks. Each criterion prints one status line; the
//! test fails if any criterion fails. Criterion 9's real-data half reads the
//! path in `MASC_TWITTER2015_TRAIN` and reports SKIPPED without it.

use masc_core::autograd::{Graph, Tensor};
use masc_core::data::{read_jsonl, write_jsonl, Sample, Sentiment};
use masc_core::eval::dataset_stats;
use masc_core::features::{PatchFeatures, TokenFeatures};
use masc_core::learning::markers::{format_target, parse_output, parse_output_bytes, Marker, Prediction, Task};
use masc_core::learning::train::{feature_provider, predict_split, prepare, read_metrics, train_on, Checkpoint};
use masc_core::learning::{total_loss, LossWeights};
use masc_core::lsa::{
    aggregate_patches, alignment_loss, alignment_score, calibrate, fuse_redundant, gumbel_select_with_noise,
    AlignmentBatch, CalibratedPatches, DecisionMask, GumbelForm, GumbelNoise, LsaConfig, LsaModel, Mlp,
    SelectionMode,
};
use masc_core::rationale::{generate_rationales, GenerateOptions, MockClient, PromptPool, RationaleCache};
use masc_core::toy::{toy_config, toy_samples};
use masc_core::translation::{
    prepare_sample, route_description, AuxKind, AuxiliaryText, BBox, GridEmbedder, ImageSource, MockCaptioner,
    MockFaceDescriber, MockFaceDetector, ObjectAnnotation, Providers, SyntheticImages,
};
use ndarray::{Array1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

enum Outcome {
    Pass(String),
    Skipped(String),
}

type Check = Result<Outcome, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || format!("{what} took {elapsed:?}, limit {limit:?}"))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

fn patches_from(rows: Tensor) -> PatchFeatures {
    let cls = rows.mean_axis(Axis(0)).unwrap();
    PatchFeatures::new(cls, rows).unwrap()
}

fn tokens_from(rows: Tensor) -> TokenFeatures {
    TokenFeatures::mean_pooled(rows).unwrap()
}

fn report(line: &str) {
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{line}");
}

// 1. Gumbel-Softmax suite

fn gumbel_suite() -> Check {
    let start = Instant::now();
    let mut rows = 0usize;
    for &tau in &[0.1, 0.5, 1.0, 5.0] {
        for seed in 0..50u64 {
            let mut r = rng(seed);
            let n = r.gen_range(1..12);
            let p = Array1::from_shape_fn(n, |_| r.gen_range(0.0..=1.0));
            for form in [GumbelForm::AsPrinted, GumbelForm::Canonical] {
                let noise = GumbelNoise::from_seed(n, seed ^ 0x9e37);
                let m = gumbel_select_with_noise(&p, tau, &noise, form).map_err(|e| e.to_string())?;
                for (i, row) in m.soft.rows().into_iter().enumerate() {
                    ensure((row.sum() - 1.0).abs() <= 1e-6, || format!("row sum {} (tau {tau}, seed {seed})", row.sum()))?;
                    // ties resolve to keep
                    let argmax_keep = row[0] >= row[1];
                    ensure(m.hard[i] == argmax_keep, || format!("hard mask disagrees with argmax at row {i}"))?;
                    rows += 1;
                }
            }
        }
    }
    // zero noise reproduces softmax(log m) exactly
    for seed in 0..50u64 {
        let mut r = rng(1000 + seed);
        let n = r.gen_range(1..10);
        let p = Array1::from_shape_fn(n, |_| r.gen_range(0.01..0.99));
        let m = gumbel_select_with_noise(&p, 1.0, &GumbelNoise::zeros(n), GumbelForm::AsPrinted).unwrap();
        for i in 0..n {
            // softmax(log p, log(1-p)) = (p, 1-p)
            ensure((m.soft[[i, 0]] - p[i]).abs() <= 1e-12 && (m.soft[[i, 1]] - (1.0 - p[i])).abs() <= 1e-12, || {
                format!("zero-noise row {i}: {:?} vs {}", m.soft.row(i), p[i])
            })?;
        }
    }
    let m = gumbel_select_with_noise(&Array1::from(vec![0.9]), 1.0, &GumbelNoise::zeros(1), GumbelForm::AsPrinted).unwrap();
    ensure((m.soft[[0, 0]] - 0.9).abs() < 1e-12 && m.hard[0], || "0.9 case".into())?;
    let tie = gumbel_select_with_noise(&Array1::from(vec![0.5]), 1.0, &GumbelNoise::zeros(1), GumbelForm::AsPrinted).unwrap();
    ensure(tie.hard[0], || "an exact tie must keep the patch".into())?;
    within(start.elapsed(), Duration::from_secs(5), "gumbel suite")?;
    Ok(Outcome::Pass(format!("{rows} rows, {:?}", start.elapsed())))
}

// 2. Gradient check

fn grad_check() -> Check {
    let start = Instant::now();
    let config = LsaConfig {
        dim: 8,
        num_patches: 4,
        hidden: 8,
        ..LsaConfig::default()
    };
    // first instance whose masks keep at least two and drop at least one
    // patch in every pair, so aggregation and redundant fusion both run
    let mut chosen = None;
    for seed in 0..500u64 {
        let mut r = rng(seed);
        let model = LsaModel::new(config.clone(), &mut r);
        let images: Vec<PatchFeatures> = (0..2).map(|_| patches_from(random_tensor(4, 8, &mut r))).collect();
        let sentences: Vec<TokenFeatures> = (0..2).map(|_| tokens_from(random_tensor(3, 8, &mut r))).collect();
        let noises: Vec<GumbelNoise> = (0..2).map(|i| GumbelNoise::from_seed(4, seed * 7 + i)).collect();
        let mut g = Graph::new();
        let b = model.params.bind(&mut g);
        let out = model
            .align_batch_graph(&mut g, &b, &images, &sentences, &noises, SelectionMode::Sample)
            .map_err(|e| e.to_string())?;
        let ok = out.selections.iter().flatten().all(|s| {
            let kept = s.hard.iter().filter(|v| **v > 0.5).count();
            (2..4).contains(&kept)
        });
        if ok && g.scalar_value(out.loss) > 0.0 {
            chosen = Some((model, images, sentences, noises));
            break;
        }
    }
    let (model, images, sentences, noises) = chosen.ok_or("no instance exercised every branch")?;

    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let out = model
        .align_batch_graph(&mut g, &b, &images, &sentences, &noises, SelectionMode::Sample)
        .unwrap();
    g.backward(out.loss);
    let analytic = b.grads(&g, &model.params);
    let frozen = out.selections;

    let loss_at = |params: &masc_core::params::ParamStore| {
        let m = LsaModel {
            config: model.config.clone(),
            params: params.clone(),
        };
        let mut g = Graph::new();
        let b = m.params.bind(&mut g);
        let o = m
            .align_batch_graph(&mut g, &b, &images, &sentences, &noises, SelectionMode::Frozen(&frozen))
            .unwrap();
        g.scalar_value(o.loss)
    };
    let h = 1e-4;
    let (mut total, mut good, mut nonzero) = (0usize, 0usize, 0usize);
    let mut worst = 0.0f64;
    for k in 0..model.params.len() {
        let shape = model.params.values()[k].dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let mut plus = model.params.clone();
                plus.values_mut()[k][[r, c]] += h;
                let mut minus = model.params.clone();
                minus.values_mut()[k][[r, c]] -= h;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let a = analytic[k][[r, c]];
                let scale = a.abs().max(numeric.abs());
                // both sides at zero up to finite-difference noise
                let rel = if scale < 1e-8 { 0.0 } else { (a - numeric).abs() / scale };
                if scale >= 1e-8 {
                    nonzero += 1;
                }
                worst = worst.max(rel);
                total += 1;
                if rel < 1e-3 {
                    good += 1;
                }
            }
        }
    }
    let frac = good as f64 / total as f64;
    ensure(nonzero * 2 > total, || format!("only {nonzero}/{total} coordinates carry gradient"))?;
    ensure(frac >= 0.95, || format!("{good}/{total} coordinates within 1e-3"))?;
    within(start.elapsed(), Duration::from_secs(30), "gradient check")?;
    Ok(Outcome::Pass(format!(
        "{good}/{total} within 1e-3 ({nonzero} nonzero), worst {worst:.2e}, {:?}",
        start.elapsed()
    )))
}

// 3. Alignment oracle

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Mean of row maxima plus mean of column maxima, by explicit loops.
fn oracle_score(rows: &Tensor, tokens: &Tensor) -> f64 {
    let r: Vec<Vec<f64>> = rows.rows().into_iter().map(|x| x.to_vec()).collect();
    let t: Vec<Vec<f64>> = tokens.rows().into_iter().map(|x| x.to_vec()).collect();
    let mut left = 0.0;
    for a in &r {
        let mut best = f64::NEG_INFINITY;
        for b in &t {
            best = best.max(cosine(a, b));
        }
        left += best;
    }
    let mut right = 0.0;
    for b in &t {
        let mut best = f64::NEG_INFINITY;
        for a in &r {
            best = best.max(cosine(a, b));
        }
        right += best;
    }
    left / r.len() as f64 + right / t.len() as f64
}

/// Every negative is tried; the hinge is monotone, so the maximum term is
/// the hardest negative's.
fn oracle_loss(k: &[Vec<f64>], gamma: f64) -> f64 {
    let b = k.len();
    let mut loss = 0.0;
    for i in 0..b {
        let mut s_term = 0.0f64;
        let mut v_term = 0.0f64;
        for j in 0..b {
            if j != i {
                s_term = s_term.max((gamma - k[i][i] + k[i][j]).max(0.0));
                v_term = v_term.max((gamma - k[i][i] + k[j][i]).max(0.0));
            }
        }
        loss += s_term + v_term;
    }
    loss
}

fn alignment_oracle() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..200u64 {
        let mut r = rng(50_000 + seed);
        let d = r.gen_range(2..7);
        let n = r.gen_range(2..=8);
        let bsz = r.gen_range(2..=4);
        let config = LsaConfig {
            dim: d,
            num_patches: n,
            hidden: 4,
            ..LsaConfig::default()
        };
        let model = LsaModel::new(config, &mut r);
        let images: Vec<PatchFeatures> = (0..bsz).map(|_| patches_from(random_tensor(n, d, &mut r))).collect();
        let sentences: Vec<TokenFeatures> = (0..bsz)
            .map(|_| {
                let t = r.gen_range(1..6);
                tokens_from(random_tensor(t, d, &mut r))
            })
            .collect();
        let noises: Vec<GumbelNoise> = (0..bsz).map(|i| GumbelNoise::from_seed(n, seed * 31 + i as u64)).collect();
        let k = model.score_matrix(&images, &sentences, &noises).map_err(|e| e.to_string())?;
        let mut ok = vec![vec![0.0; bsz]; bsz];
        for i in 0..bsz {
            for j in 0..bsz {
                let (_, _, cal) = model.calibrate_pair(&images[i], &sentences[j], &noises[i]).unwrap();
                let lib = alignment_score(&cal, &sentences[j]).unwrap();
                ok[i][j] = oracle_score(&cal.rows(), &sentences[j].tokens);
                worst = worst.max((lib - ok[i][j]).abs()).max((k[[i, j]] - ok[i][j]).abs());
            }
        }
        let gamma = r.gen_range(0.05..0.5);
        let lib_loss = alignment_loss(&AlignmentBatch { k: k.clone(), gamma }).unwrap();
        let mut g = Graph::new();
        let b = model.params.bind(&mut g);
        let graph = model
            .align_batch_graph(&mut g, &b, &images, &sentences, &noises, SelectionMode::Sample)
            .unwrap();
        let mut model_g = model.clone();
        model_g.config.gamma = gamma;
        let graph_loss = {
            let mut g = Graph::new();
            let b = model_g.params.bind(&mut g);
            let o = model_g
                .align_batch_graph(&mut g, &b, &images, &sentences, &noises, SelectionMode::Sample)
                .unwrap();
            g.scalar_value(o.loss)
        };
        let oracle = oracle_loss(&ok, gamma);
        worst = worst.max((lib_loss - oracle).abs()).max((graph_loss - oracle).abs());
        let gk = g.value(graph.scores);
        for i in 0..bsz {
            for j in 0..bsz {
                worst = worst.max((gk[[i, j]] - ok[i][j]).abs());
            }
        }
        ensure(worst <= 1e-6, || format!("instance {seed}: deviation {worst:e}"))?;
    }
    Ok(Outcome::Pass(format!("200 instances, max deviation {worst:.1e}")))
}

// 4. Calibration invariants

fn mask_from(hard: &[bool]) -> DecisionMask {
    DecisionMask {
        soft: Tensor::from_shape_fn((hard.len(), 2), |(i, c)| if hard[i] == (c == 0) { 1.0 } else { 0.0 }),
        hard: hard.to_vec(),
        tau: 1.0,
    }
}

fn calibration_invariants() -> Check {
    for seed in 0..100u64 {
        let mut r = rng(70_000 + seed);
        let d = r.gen_range(1..7);
        let n_p = r.gen_range(2..9);
        let n_f = r.gen_range(1..n_p);
        let agg = Mlp::random(d, 5, n_f, 1.0, &mut r);
        let selected = random_tensor(n_p, d, &mut r);
        let (_, w) = aggregate_patches(&selected, n_f, &agg).map_err(|e| e.to_string())?;
        for (c, col) in w.columns().into_iter().enumerate() {
            ensure((col.sum() - 1.0).abs() <= 1e-6, || format!("instance {seed}: column {c} sums to {}", col.sum()))?;
        }

        // identical patches: every aggregated row is that patch
        let row: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let same = Tensor::from_shape_fn((n_p, d), |(_, j)| row[j]);
        let (agg_rows, _) = aggregate_patches(&same, n_f, &agg).unwrap();
        for a in agg_rows.rows() {
            for j in 0..d {
                ensure((a[j] - row[j]).abs() <= 1e-9, || format!("instance {seed}: convexity broken"))?;
            }
        }

        let patches = patches_from(random_tensor(n_p, d, &mut r));
        let p_f = Array1::from_shape_fn(n_p, |_| r.gen_range(0.0..1.0));
        // a single dropped patch is returned unchanged
        let drop = r.gen_range(0..n_p);
        let hard: Vec<bool> = (0..n_p).map(|i| i != drop).collect();
        let (fused, any) = fuse_redundant(&patches, &p_f, &mask_from(&hard));
        ensure(any, || "a dropped patch was not reported".into())?;
        for j in 0..d {
            ensure((fused[j] - patches.patches[[drop, j]]).abs() <= 1e-12, || format!("instance {seed}: single case"))?;
        }
        // equal scores over the dropped set give their plain mean
        let dropped: Vec<usize> = (0..n_p).filter(|_| r.gen_bool(0.5)).collect();
        if !dropped.is_empty() {
            let hard: Vec<bool> = (0..n_p).map(|i| !dropped.contains(&i)).collect();
            let level = r.gen_range(0.0..1.0);
            let flat = Array1::from_elem(n_p, level);
            let (fused, _) = fuse_redundant(&patches, &flat, &mask_from(&hard));
            for j in 0..d {
                let mean = dropped.iter().map(|&i| patches.patches[[i, j]]).sum::<f64>() / dropped.len() as f64;
                ensure((fused[j] - mean).abs() <= 1e-12, || format!("instance {seed}: symmetric case"))?;
            }
        }

        // full calibration keeps cls first and one fused row last
        let mask = mask_from(&hard_from(&mut r, n_p));
        let cal: CalibratedPatches = calibrate(
            &patches,
            &p_f,
            &mask,
            &Mlp::random(d, 5, n_p, 1.0, &mut r),
            masc_core::lsa::AggregateRule::CeilHalf,
        )
        .map_err(|e| e.to_string())?;
        for c in cal.weights.columns() {
            ensure((c.sum() - 1.0).abs() <= 1e-6, || format!("instance {seed}: calibrated weights"))?;
        }
        ensure(cal.rows().nrows() == cal.len(), || "row count".into())?;
    }
    Ok(Outcome::Pass("100 instances".into()))
}

fn hard_from(r: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let mut h: Vec<bool> = (0..n).map(|_| r.gen_bool(0.6)).collect();
    h[0] = true;
    h
}

// 5. Marker round trip and parser totality

const PIECES: [&str; 12] = ["a", "Ü", " ", "\\", "⟨", "⟩", "⟨sen⟩", "⟨/sr⟩", "⟨ir⟩", "sunny", "日本", "\\⟨"];

fn random_text(r: &mut ChaCha8Rng, max: usize) -> String {
    let n = r.gen_range(0..=max);
    (0..n).map(|_| PIECES[r.gen_range(0..PIECES.len())]).collect()
}

fn marker_round_trip() -> Check {
    let mut r = rng(90_000);
    for case in 0..1000 {
        let task = Task::ALL[r.gen_range(0..3)];
        let label = Sentiment::ALL[r.gen_range(0..3)];
        let rationale = (task != Task::SC).then(|| random_text(&mut r, 30));
        let text = format_target(task, label, rationale.as_deref()).map_err(|e| e.to_string())?;
        let p = parse_output(task, &text);
        ensure(p.sentiment == Prediction::from(label), || format!("case {case}: sentiment of {text:?}"))?;
        ensure(p.rationale == rationale, || format!("case {case}: rationale of {text:?}"))?;
    }
    let markers: Vec<&[u8]> = Marker::ALL.iter().map(|m| m.text().as_bytes()).collect();
    let mut undiscerned = 0;
    for case in 0..10_000 {
        let mut bytes = Vec::new();
        for _ in 0..r.gen_range(0..24) {
            match r.gen_range(0..4) {
                0 => bytes.extend_from_slice(markers[r.gen_range(0..markers.len())]),
                1 => bytes.extend_from_slice(Sentiment::ALL[r.gen_range(0..3)].as_str().as_bytes()),
                _ => bytes.extend((0..r.gen_range(1..6)).map(|_| r.gen::<u8>())),
            }
        }
        let task = Task::ALL[r.gen_range(0..3)];
        let p = catch_unwind(|| parse_output_bytes(task, &bytes)).map_err(|_| format!("parser panicked on case {case}"))?;
        // malformed means there is no sentiment span at all
        let text = String::from_utf8_lossy(&bytes);
        if !(text.contains("⟨sen⟩") && text.contains("⟨/sen⟩")) {
            ensure(p.sentiment == Prediction::Undiscerned, || format!("case {case}: {text:?} parsed as {:?}", p.sentiment))?;
        }
        if p.sentiment == Prediction::Undiscerned {
            undiscerned += 1;
        }
    }
    // truncated well-formed targets lose their sentiment
    for label in Sentiment::ALL {
        let t = format_target(Task::SC, label, None).unwrap();
        let cut = t.trim_end_matches("⟨/sen⟩");
        ensure(parse_output(Task::SC, cut).sentiment == Prediction::Undiscerned, || "truncated target".into())?;
    }
    Ok(Outcome::Pass(format!("1000 round trips, 10000 fuzz cases ({undiscerned} undiscerned)")))
}

// 6. Loss algebra

fn loss_algebra() -> Check {
    let h = 1e-3;
    for &(alpha, lambda) in &[(0.2, 0.2), (0.1, 0.5), (0.2, 0.5), (0.7, 0.05)] {
        let w = LossWeights::new(alpha, lambda).unwrap();
        let expect = [alpha, (1.0 - alpha) / 2.0, (1.0 - alpha) / 2.0, lambda];
        let base = [0.8, 1.3, 0.4, 2.1];
        for k in 0..4 {
            let at = |delta: f64| {
                let mut c = base;
                c[k] += delta;
                total_loss(c[0], c[1], c[2], c[3], &w).unwrap()
            };
            let slope = (at(h) - at(-h)) / (2.0 * h);
            ensure((slope - expect[k]).abs() <= 1e-9, || format!("alpha {alpha}: d/d{k} = {slope}, expected {}", expect[k]))?;
        }
    }
    for (a, l) in [(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, 1.0), (-0.1, 0.5), (f64::NAN, 0.5)] {
        ensure(LossWeights::new(a, l).is_err(), || format!("({a}, {l}) accepted"))?;
    }
    let edge = LossWeights {
        alpha: 1.0 - 1e-9,
        lambda: 1e-9,
    };
    let v = total_loss(0.7, 3.0, 4.0, 5.0, &edge).unwrap();
    ensure((v - 0.7).abs() <= 1e-8, || format!("near-boundary total {v}"))?;
    let w = LossWeights::new(0.2, 0.2).unwrap();
    let v = total_loss(1.0, 1.0, 1.0, 1.0, &w).unwrap();
    ensure((v - 1.2).abs() <= 1e-12, || format!("(1,1,1,1) total {v}"))?;
    ensure(total_loss(-0.1, 1.0, 1.0, 1.0, &w).is_err(), || "negative component accepted".into())?;
    Ok(Outcome::Pass("coefficients, boundaries, 1.2 case".into()))
}

// 7. Toy overfit

fn toy_overfit() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let samples = toy_samples(8);
    let cfg = toy_config(dir.path(), &dir.path().join("run"));
    let report = train_on(&cfg, &samples, Some(&samples), false).map_err(|e| e.to_string())?;
    let steps = report.steps.len();
    ensure(steps <= 200, || format!("{steps} steps"))?;
    let first = report.steps.first().unwrap().loss.total;
    let last = report.steps.last().unwrap().loss.total;
    ensure(last < 0.5 * first, || format!("loss {first:.3} -> {last:.3}"))?;
    let ck = Checkpoint::load(&report.last_checkpoint).unwrap();
    let model = ck.model().unwrap();
    let feats = feature_provider(&model.config);
    let data = prepare(&model, &samples, Some(feats.as_ref())).unwrap();
    let preds = predict_split(&model, &data).unwrap().sentiments(Task::SC).unwrap();
    let correct = preds.iter().zip(&samples).filter(|(p, s)| **p == Prediction::from(s.label)).count();
    ensure(correct >= 7, || format!("SC accuracy {correct}/8"))?;
    within(start.elapsed(), Duration::from_secs(120), "toy overfit")?;
    Ok(Outcome::Pass(format!(
        "{correct}/8 after {steps} steps, loss {first:.2} -> {last:.3}, {:?}",
        start.elapsed()
    )))
}

// 8. Pipeline idempotence

fn bare(n: usize) -> Vec<Sample> {
    toy_samples(n)
        .into_iter()
        .map(|mut s| {
            s.sr = None;
            s.ir = None;
            s.ac = None;
            s.gc = None;
            s.od = None;
            if let Some(o) = s.object.take() {
                s.candidates = vec![
                    o.clone(),
                    ObjectAnnotation {
                        object_id: 2,
                        bbox: BBox { x: 24, y: 16, w: 20, h: 20 },
                        ..o
                    },
                ];
            }
            s
        })
        .collect()
}

fn pipeline_idempotence() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_jsonl(&data.join("train.jsonl"), &bare(9)).unwrap();
    let run = || {
        std::process::Command::new(env!("CARGO_BIN_EXE_masc"))
            .args([
                "build-rationales",
                "--set",
                &format!("dataset={}", data.display()),
                "--set",
                &format!("out_dir={}", dir.path().join("run").display()),
            ])
            .env("RUST_LOG", "error")
            .output()
            .unwrap()
    };
    let records = dir.path().join("run/data/train.rationales.jsonl");
    let first = run();
    ensure(first.status.code() == Some(0), || String::from_utf8_lossy(&first.stderr).into_owned())?;
    let s1: serde_json::Value = serde_json::from_slice(&first.stdout).map_err(|e| e.to_string())?;
    let bytes1 = std::fs::read(&records).unwrap();
    let second = run();
    let s2: serde_json::Value = serde_json::from_slice(&second.stdout).map_err(|e| e.to_string())?;
    ensure(std::fs::read(&records).unwrap() == bytes1, || "record file changed on rerun".into())?;
    ensure(s2["calls"] == 0, || format!("rerun made {} calls", s2["calls"]))?;
    ensure(s1["records"] == 9, || "record count".into())?;

    // fresh cache directory, same seed: byte-identical records
    let samples: Vec<Sample> = read_jsonl(&data.join("train.jsonl")).unwrap();
    let pool = PromptPool::default_pool();
    let cfg = masc_core::config::RunConfig::default();
    let images = SyntheticImages::new(cfg.providers.image_seed);
    let opts = GenerateOptions {
        seed: cfg.seed,
        retries: cfg.providers.retries,
        parallelism: cfg.providers.parallelism,
        budget: cfg.providers.budget,
        ..GenerateOptions::default()
    };
    let gen = || {
        let cache_dir = tempfile::tempdir().unwrap();
        let client = MockClient::default();
        let rep = generate_rationales(
            &samples,
            &pool,
            &client,
            &RationaleCache::new(cache_dir.path()),
            Some(&images),
            &opts,
        );
        serde_json::to_vec(&rep.records).unwrap()
    };
    ensure(gen() == gen(), || "records differ between independent runs".into())?;
    let lib: serde_json::Value = serde_json::from_slice(&gen()).unwrap();
    ensure(lib == jsonl_values(&bytes1), || "library and CLI records differ".into())?;

    // routing: same inputs give byte-identical auxiliary texts
    let scorer = GridEmbedder::default();
    let captioner = MockCaptioner::default();
    let describer = MockFaceDescriber;
    let route = || -> Result<Vec<u8>, String> {
        let detector = MockFaceDetector::default();
        let p = Providers {
            images: &images,
            scorer: &scorer,
            detector: &detector,
            captioner: &captioner,
            describer: &describer,
        };
        let out: Result<Vec<Sample>, _> = samples.iter().map(|s| prepare_sample(s, &p, None)).collect();
        let out = out.map_err(|e| e.to_string())?;
        let mut descs = Vec::new();
        for s in &out {
            let whole = images.load(&s.image).unwrap();
            let d: AuxiliaryText = route_description(&whole, s.object.as_ref(), &detector, &captioner, &describer)
                .map_err(|e| e.to_string())?;
            descs.push(d);
        }
        Ok([serde_json::to_vec(&out).unwrap(), serde_json::to_vec(&descs).unwrap()].concat())
    };
    let (a, b) = (route()?, route()?);
    ensure(a == b, || "routing output differs between runs".into())?;
    let routed: Vec<Sample> = samples
        .iter()
        .map(|s| {
            let detector = MockFaceDetector::default();
            let p = Providers {
                images: &images,
                scorer: &scorer,
                detector: &detector,
                captioner: &captioner,
                describer: &describer,
            };
            prepare_sample(s, &p, None).unwrap()
        })
        .collect();
    let kinds: Vec<AuxKind> = routed.iter().filter_map(|s| s.od.as_ref().map(|o| o.kind)).collect();
    ensure(!kinds.is_empty(), || "no object was routed".into())?;
    Ok(Outcome::Pass(format!(
        "9 records, rerun 0 calls, routing stable over {} objects",
        kinds.len()
    )))
}

fn jsonl_values(jsonl: &[u8]) -> serde_json::Value {
    let recs: Vec<serde_json::Value> = String::from_utf8_lossy(jsonl)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    serde_json::Value::Array(recs)
}

// 9. Stats fidelity

fn stats_fidelity() -> Check {
    let mut a = Sample::new("a", "img1", "Messi scores again tonight", "Messi", Sentiment::Positive);
    a.sr = Some("one two three four five six".into());
    a.ir = Some("calm blue sky".into());
    a.ac = Some("warm stadium lights".into());
    let mut b = Sample::new("b", "img1", "Messi scores again tonight", "tonight", Sentiment::Neutral);
    b.sr = Some("one two".into());
    b.ac = Some("warm stadium lights".into());
    b.od = Some(AuxiliaryText::new(AuxKind::AO, "a football on grass", "m"));
    let mut c = Sample::new("c", "img2", "Rain ruins the parade", "parade", Sentiment::Negative);
    c.sr = Some("a b c d".into());
    c.ir = Some("grey wet street crowd".into());
    c.ac = Some("muted grey tones".into());
    c.od = Some(AuxiliaryText::new(AuxKind::FD, "a sad face", "m"));
    let s = dataset_stats(&[a, b, c]);
    // enumerated by hand: two distinct pairs of 4 words each
    let expect = [
        ("positive", s.positive as f64, 1.0),
        ("neutral", s.neutral as f64, 1.0),
        ("negative", s.negative as f64, 1.0),
        ("total", s.total as f64, 3.0),
        ("sentences", s.sentences as f64, 2.0),
        ("avg length", s.avg_length, 4.0),
        ("avg aspect", s.avg_aspect, 1.5),
        ("avg sr", s.avg_sr.unwrap_or(-1.0), 4.0),
        ("avg ir", s.avg_ir.unwrap_or(-1.0), 3.5),
        ("avg ac", s.avg_ac.unwrap_or(-1.0), 3.0),
        ("avg fd", s.avg_fd.unwrap_or(-1.0), 3.0),
        ("avg ao", s.avg_ao.unwrap_or(-1.0), 4.0),
    ];
    for (name, got, want) in expect {
        ensure(got == want, || format!("{name}: {got} != {want}"))?;
    }
    match std::env::var("MASC_TWITTER2015_TRAIN") {
        Ok(path) => {
            let samples: Vec<Sample> = read_jsonl(std::path::Path::new(&path)).map_err(|e| e.to_string())?;
            let sr = dataset_stats(&samples).avg_sr.ok_or("no SR texts in the supplied split")?;
            ensure((sr - 42.5).abs() <= 1.0, || format!("Avg. Length of SR {sr:.2}, expected 42.5 ± 1.0"))?;
            Ok(Outcome::Pass(format!("toy enumeration exact; real SR length {sr:.2}")))
        }
        Err(_) => Ok(Outcome::Skipped(
            "toy enumeration exact; real-data check SKIPPED (MASC_TWITTER2015_TRAIN unset)".into(),
        )),
    }
}

// 10. Ablation plumbing

fn ablation_plumbing() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    masc_core::toy::write_toy_dataset(&data, 8).unwrap();
    let rows: [(&str, &str, &[&str]); 7] = [
        ("srg", "enable_srg = false", &["sc", "irg", "align"]),
        ("irg", "enable_irg = false", &["sc", "srg", "align"]),
        ("srg-irg", "enable_irg = false", &["sc", "align"]),
        ("lsa", "enable_lsa = false", &["sc", "srg", "irg"]),
        ("od", "enable_od = false", &["sc", "srg", "irg", "align"]),
        ("aes-cap", "enable_aes_cap = false", &["sc", "srg", "irg", "align"]),
        ("irg-ac", "caption = \"generic\"", &["sc", "srg", "align"]),
    ];
    for (name, stamp, terms) in rows {
        let mut c = toy_config(&data, &dir.path().join(name));
        c.epochs = 1;
        c.eval_every = 1;
        let cfg_path = dir.path().join(format!("{name}.toml"));
        std::fs::write(&cfg_path, c.to_toml().unwrap()).unwrap();
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_masc"))
            .args(["train", "--config", cfg_path.to_str().unwrap(), "--ablate", name])
            .env("RUST_LOG", "error")
            .output()
            .unwrap();
        ensure(out.status.code() == Some(0), || format!("{name}: {}", String::from_utf8_lossy(&out.stderr)))?;
        let stamped = std::fs::read_to_string(c.out_dir.join("config.toml")).map_err(|e| e.to_string())?;
        ensure(stamped.contains(stamp), || format!("{name}: config lacks `{stamp}`"))?;
        let metrics = read_metrics(&c.out_dir.join("metrics.jsonl")).map_err(|e| e.to_string())?;
        ensure(!metrics.is_empty(), || format!("{name}: no metrics"))?;
        for row in &metrics {
            ensure(row.loss.terms() == terms.to_vec(), || {
                format!("{name}: logged {:?}, expected {terms:?}", row.loss.terms())
            })?;
        }
    }
    Ok(Outcome::Pass("7 switches stamped, loss terms exact".into()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("gumbel-softmax suite", gumbel_suite),
        ("gradient check", grad_check),
        ("alignment oracle", alignment_oracle),
        ("calibration invariants", calibration_invariants),
        ("marker round trip", marker_round_trip),
        ("loss algebra", loss_algebra),
        ("toy overfit", toy_overfit),
        ("pipeline idempotence", pipeline_idempotence),
        ("stats fidelity", stats_fidelity),
        ("ablation plumbing", ablation_plumbing),
    ];
    report("");
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let line = match outcome {
            Ok(Outcome::Pass(d)) => format!("[PASS]    {:>2} {name}: {d}", i + 1),
            Ok(Outcome::Skipped(d)) => format!("[SKIPPED] {:>2} {name}: {d}", i + 1),
            Err(e) => {
                failed.push(i + 1);
                format!("[FAIL]    {:>2} {name}: {e}", i + 1)
            }
        };
        report(&line);
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
