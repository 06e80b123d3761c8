//! Small post-LN encoder-decoder transformer with tied embeddings.

use super::vocab::{BOS, EOS};
use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seq2SeqConfig {
    pub d_model: usize,
    pub ff: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub max_decode: usize,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            ff: 64,
            enc_layers: 2,
            dec_layers: 2,
            max_decode: 64,
        }
    }
}

impl Seq2SeqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.ff == 0 || self.max_decode == 0 {
            return Err(Error::Config("model widths and max_decode must be nonzero".into()));
        }
        Ok(())
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub config: Seq2SeqConfig,
    pub vocab_size: usize,
    /// Width of prepended visual rows, when visual fusion is on.
    pub visual_dim: Option<usize>,
}

fn uniform<R: Rng>(store: &mut ParamStore, name: String, rows: usize, cols: usize, rng: &mut R) {
    let scale = 1.0 / (rows as f64).sqrt();
    store.insert_uniform(&name, (rows, cols), scale, rng);
}

fn layer_norm_params(store: &mut ParamStore, prefix: &str, d: usize) {
    store.insert(format!("{prefix}.gain"), Tensor::ones((1, d)));
    store.insert(format!("{prefix}.bias"), Tensor::zeros((1, d)));
}

fn attn_params<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut R) {
    for w in ["wq", "wk", "wv", "wo"] {
        uniform(store, format!("{prefix}.{w}"), d, d, rng);
    }
}

fn ff_params<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, ff: usize, rng: &mut R) {
    uniform(store, format!("{prefix}.w1"), d, ff, rng);
    store.insert(format!("{prefix}.b1"), Tensor::zeros((1, ff)));
    uniform(store, format!("{prefix}.w2"), ff, d, rng);
    store.insert(format!("{prefix}.b2"), Tensor::zeros((1, d)));
}

/// Sinusoidal position table, `len × d`.
pub fn positions(len: usize, d: usize) -> Tensor {
    Tensor::from_shape_fn((len, d), |(p, i)| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let a = p as f64 * rate;
        if i % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

impl Seq2Seq {
    pub fn new<R: Rng>(config: Seq2SeqConfig, vocab_size: usize, visual_dim: Option<usize>, rng: &mut R) -> (Self, ParamStore) {
        let d = config.d_model;
        let mut p = ParamStore::new();
        p.insert_uniform("s2s.embed", (vocab_size, d), 1.0 / (d as f64).sqrt(), rng);
        p.insert("s2s.out_bias", Tensor::zeros((1, vocab_size)));
        if let Some(dv) = visual_dim {
            uniform(&mut p, "s2s.visual".into(), dv, d, rng);
        }
        for l in 0..config.enc_layers {
            let pre = format!("s2s.enc{l}");
            attn_params(&mut p, &format!("{pre}.self"), d, rng);
            layer_norm_params(&mut p, &format!("{pre}.ln1"), d);
            ff_params(&mut p, &format!("{pre}.ff"), d, config.ff, rng);
            layer_norm_params(&mut p, &format!("{pre}.ln2"), d);
        }
        for l in 0..config.dec_layers {
            let pre = format!("s2s.dec{l}");
            attn_params(&mut p, &format!("{pre}.self"), d, rng);
            layer_norm_params(&mut p, &format!("{pre}.ln1"), d);
            attn_params(&mut p, &format!("{pre}.cross"), d, rng);
            layer_norm_params(&mut p, &format!("{pre}.ln2"), d);
            ff_params(&mut p, &format!("{pre}.ff"), d, config.ff, rng);
            layer_norm_params(&mut p, &format!("{pre}.ln3"), d);
        }
        (
            Self {
                config,
                vocab_size,
                visual_dim,
            },
            p,
        )
    }

    fn embed(&self, g: &mut Graph, b: &Bound, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::InvalidInput(format!("token id {bad} outside vocabulary")));
        }
        let e = g.gather_rows(b.var("s2s.embed"), ids);
        let pos = g.constant(positions(ids.len(), self.config.d_model));
        Ok(g.add(e, pos))
    }

    fn layer_norm(g: &mut Graph, b: &Bound, x: Var, prefix: &str) -> Var {
        let n = g.layer_norm_rows(x, LN_EPS);
        let n = g.mul_row(n, b.var(&format!("{prefix}.gain")));
        g.add_row(n, b.var(&format!("{prefix}.bias")))
    }

    fn attention(&self, g: &mut Graph, b: &Bound, q_in: Var, kv_in: Var, prefix: &str, causal: bool) -> Var {
        let q = g.matmul(q_in, b.var(&format!("{prefix}.wq")));
        let k = g.matmul(kv_in, b.var(&format!("{prefix}.wk")));
        let v = g.matmul(kv_in, b.var(&format!("{prefix}.wv")));
        let kt = g.transpose(k);
        let s = g.matmul(q, kt);
        let mut s = g.scale(s, 1.0 / (self.config.d_model as f64).sqrt());
        if causal {
            let (r, c) = g.shape(s);
            let mask = g.constant(Tensor::from_shape_fn((r, c), |(i, j)| if j > i { -1e9 } else { 0.0 }));
            s = g.add(s, mask);
        }
        let a = g.softmax_rows(s);
        let o = g.matmul(a, v);
        g.matmul(o, b.var(&format!("{prefix}.wo")))
    }

    fn feed_forward(g: &mut Graph, b: &Bound, x: Var, prefix: &str) -> Var {
        let h = g.matmul(x, b.var(&format!("{prefix}.w1")));
        let h = g.add_row(h, b.var(&format!("{prefix}.b1")));
        let h = g.relu(h);
        let o = g.matmul(h, b.var(&format!("{prefix}.w2")));
        g.add_row(o, b.var(&format!("{prefix}.b2")))
    }

    /// Encoder states for `ids`, with projected `visual` rows prepended when
    /// the model was built with a visual width.
    pub fn encode(&self, g: &mut Graph, b: &Bound, ids: &[usize], visual: Option<&Tensor>) -> Result<Var> {
        let mut x = self.embed(g, b, ids)?;
        match (self.visual_dim, visual) {
            (Some(dv), Some(v)) => {
                if v.ncols() != dv {
                    return Err(Error::InvalidInput(format!("visual rows have width {}, expected {dv}", v.ncols())));
                }
                let vc = g.constant(v.clone());
                let proj = g.matmul(vc, b.var("s2s.visual"));
                x = g.concat_rows(&[proj, x]);
            }
            (Some(_), None) => return Err(Error::InvalidInput("model expects visual rows".into())),
            (None, _) => {}
        }
        for l in 0..self.config.enc_layers {
            let pre = format!("s2s.enc{l}");
            let a = self.attention(g, b, x, x, &format!("{pre}.self"), false);
            let r = g.add(x, a);
            x = Self::layer_norm(g, b, r, &format!("{pre}.ln1"));
            let f = Self::feed_forward(g, b, x, &format!("{pre}.ff"));
            let r = g.add(x, f);
            x = Self::layer_norm(g, b, r, &format!("{pre}.ln2"));
        }
        Ok(x)
    }

    /// Next-token logits for every decoder position, `len × vocab`.
    pub fn decode_logits(&self, g: &mut Graph, b: &Bound, memory: Var, dec_ids: &[usize]) -> Result<Var> {
        let mut x = self.embed(g, b, dec_ids)?;
        for l in 0..self.config.dec_layers {
            let pre = format!("s2s.dec{l}");
            let a = self.attention(g, b, x, x, &format!("{pre}.self"), true);
            let r = g.add(x, a);
            x = Self::layer_norm(g, b, r, &format!("{pre}.ln1"));
            let c = self.attention(g, b, x, memory, &format!("{pre}.cross"), false);
            let r = g.add(x, c);
            x = Self::layer_norm(g, b, r, &format!("{pre}.ln2"));
            let f = Self::feed_forward(g, b, x, &format!("{pre}.ff"));
            let r = g.add(x, f);
            x = Self::layer_norm(g, b, r, &format!("{pre}.ln3"));
        }
        let et = g.transpose(b.var("s2s.embed"));
        let logits = g.matmul(x, et);
        Ok(g.add_row(logits, b.var("s2s.out_bias")))
    }

    /// Teacher-forced summed NLL of `target` (EOS appended) given `input`.
    pub fn sequence_nll(
        &self,
        g: &mut Graph,
        b: &Bound,
        input: &[usize],
        target: &[usize],
        visual: Option<&Tensor>,
    ) -> Result<Var> {
        let memory = self.encode(g, b, input, visual)?;
        let mut dec_in = vec![BOS];
        dec_in.extend_from_slice(target);
        let mut gold = target.to_vec();
        gold.push(EOS);
        let logits = self.decode_logits(g, b, memory, &dec_in)?;
        Ok(super::nll_graph(g, logits, &gold))
    }

    /// Greedy decoding without the EOS token.
    pub fn greedy(&self, params: &ParamStore, input: &[usize], visual: Option<&Tensor>, max_len: usize) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let memory = self.encode(&mut g, &b, input, visual)?;
        let mut out = vec![BOS];
        for _ in 0..max_len {
            let logits = self.decode_logits(&mut g, &b, memory, &out)?;
            let last = g.value(logits).row(out.len() - 1).to_owned();
            let mut best = 0;
            for (i, v) in last.iter().enumerate() {
                if *v > last[best] {
                    best = i;
                }
            }
            if best == EOS {
                break;
            }
            out.push(best);
        }
        Ok(out[1..].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (Seq2Seq, ParamStore) {
        let config = Seq2SeqConfig {
            d_model: 8,
            ff: 12,
            enc_layers: 1,
            dec_layers: 1,
            max_decode: 8,
        };
        Seq2Seq::new(config, 20, None, &mut ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn decoder_is_causal() {
        let (m, p) = tiny();
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let mem = m.encode(&mut g, &b, &[5, 6, 7], None).unwrap();
        let a = m.decode_logits(&mut g, &b, mem, &[1, 8, 9]).unwrap();
        let c = m.decode_logits(&mut g, &b, mem, &[1, 8, 12]).unwrap();
        let (a, c) = (g.value(a).clone(), g.value(c).clone());
        assert_eq!(a.row(0), c.row(0));
        assert_eq!(a.row(1), c.row(1));
        assert_ne!(a.row(2), c.row(2));
    }

    #[test]
    fn nll_matches_log_softmax_of_logits() {
        let (m, p) = tiny();
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let nll = m.sequence_nll(&mut g, &b, &[5, 6], &[9, 10], None).unwrap();
        let mem = m.encode(&mut g, &b, &[5, 6], None).unwrap();
        let logits = m.decode_logits(&mut g, &b, mem, &[BOS, 9, 10]).unwrap();
        let l = g.value(logits).clone();
        let mut want = 0.0;
        for (row, gold) in [9usize, 10, EOS].iter().enumerate() {
            let r = l.row(row);
            let mx = r.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
            let lse = mx + r.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            want += lse - r[*gold];
        }
        assert!((g.scalar_value(nll) - want).abs() < 1e-9);
    }

    #[test]
    fn rejects_out_of_vocab_ids() {
        let (m, p) = tiny();
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        assert!(m.encode(&mut g, &b, &[99], None).is_err());
    }

    #[test]
    fn greedy_respects_length_cap() {
        let (m, p) = tiny();
        assert!(m.greedy(&p, &[5, 6], None, 4).unwrap().len() <= 4);
    }
}
