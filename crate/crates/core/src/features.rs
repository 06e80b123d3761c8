//! Patch and token feature sets plus the providers that produce them.
//!
//! On-disk cache layout (little-endian): `u32 rows`, `u32 dim`, then
//! `rows * dim` `f32` values row-major. Row 0 is the global vector (`cls`
//! for images, pooled embedding for sentences); the remaining rows are the
//! patch or token features.

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::util::{rng_for, sha256_hex, with_dir_lock};
use ndarray::{Array1, Axis};
use rand::Rng;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatures {
    pub cls: Array1<f64>,
    /// `N_v × d`, row `i` is patch `i`.
    pub patches: Tensor,
}

impl PatchFeatures {
    pub fn new(cls: Array1<f64>, patches: Tensor) -> Result<Self> {
        if patches.nrows() == 0 {
            return Err(Error::InvalidInput("image needs at least one patch".into()));
        }
        if cls.len() != patches.ncols() {
            return Err(Error::InvalidInput(format!(
                "cls width {} does not match patch width {}",
                cls.len(),
                patches.ncols()
            )));
        }
        if !cls.iter().chain(patches.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("patch features".into()));
        }
        Ok(Self { cls, patches })
    }

    pub fn len(&self) -> usize {
        self.patches.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.patches.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenFeatures {
    /// `N_s × d`
    pub tokens: Tensor,
    /// Pooled sentence embedding.
    pub global: Array1<f64>,
}

impl TokenFeatures {
    pub fn new(tokens: Tensor, global: Array1<f64>) -> Result<Self> {
        if tokens.nrows() == 0 {
            return Err(Error::InvalidInput("sentence needs at least one token".into()));
        }
        if global.len() != tokens.ncols() {
            return Err(Error::InvalidInput("global width does not match token width".into()));
        }
        if !global.iter().chain(tokens.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("token features".into()));
        }
        Ok(Self { tokens, global })
    }

    /// Global vector is the token mean.
    pub fn mean_pooled(tokens: Tensor) -> Result<Self> {
        if tokens.nrows() == 0 {
            return Err(Error::InvalidInput("sentence needs at least one token".into()));
        }
        let global = tokens.mean_axis(Axis(0)).expect("nonempty");
        Self::new(tokens, global)
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

pub trait FeatureProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn image_features(&self, image_ref: &str) -> Result<PatchFeatures>;
    fn sentence_features(&self, sentence: &str) -> Result<TokenFeatures>;
}

/// Deterministic stand-in for pretrained encoders: every patch and every
/// word maps to a seeded random vector. Values are rounded through `f32` so
/// a disk round trip is lossless.
#[derive(Debug, Clone)]
pub struct SyntheticFeatures {
    pub dim: usize,
    pub num_patches: usize,
    pub seed: u64,
}

impl SyntheticFeatures {
    pub fn new(dim: usize, num_patches: usize, seed: u64) -> Self {
        Self {
            dim,
            num_patches,
            seed,
        }
    }

    fn vector(&self, labels: &[&[u8]]) -> Array1<f64> {
        let mut rng = rng_for(self.seed, labels);
        Array1::from_shape_fn(self.dim, |_| rng.gen_range(-1.0f32..1.0) as f64)
    }
}

pub fn words(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect()
}

impl FeatureProvider for SyntheticFeatures {
    fn dim(&self) -> usize {
        self.dim
    }

    fn image_features(&self, image_ref: &str) -> Result<PatchFeatures> {
        let mut patches = Tensor::zeros((self.num_patches, self.dim));
        for i in 0..self.num_patches {
            let idx = (i as u64).to_le_bytes();
            patches
                .row_mut(i)
                .assign(&self.vector(&[b"patch", image_ref.as_bytes(), &idx]));
        }
        let cls = patches
            .mean_axis(Axis(0))
            .expect("nonempty")
            .mapv(|v| v as f32 as f64);
        PatchFeatures::new(cls, patches)
    }

    fn sentence_features(&self, sentence: &str) -> Result<TokenFeatures> {
        let ws = words(sentence);
        let mut tokens = Tensor::zeros((ws.len(), self.dim));
        for (i, w) in ws.iter().enumerate() {
            tokens.row_mut(i).assign(&self.vector(&[b"token", w.as_bytes()]));
        }
        let t = TokenFeatures::mean_pooled(tokens)?;
        let global = t.global.mapv(|v| v as f32 as f64);
        TokenFeatures::new(t.tokens, global)
    }
}

pub fn encode_rows(global: &Array1<f64>, rows: &Tensor) -> Vec<u8> {
    let n = rows.nrows() + 1;
    let d = rows.ncols();
    let mut out = Vec::with_capacity(8 + 4 * n * d);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in global.iter().chain(rows.iter()) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_rows(bytes: &[u8]) -> Result<(Array1<f64>, Tensor)> {
    let bad = |m: &str| Error::InvalidInput(format!("feature file: {m}"));
    if bytes.len() < 8 {
        return Err(bad("truncated header"));
    }
    let n = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if n == 0 {
        return Err(bad("zero rows"));
    }
    if bytes.len() != 8 + 4 * n * d {
        return Err(bad("length does not match header"));
    }
    let vals: Vec<f64> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let all = Tensor::from_shape_vec((n, d), vals).map_err(|e| bad(&e.to_string()))?;
    let global = all.row(0).to_owned();
    let rows = all.slice(ndarray::s![1.., ..]).to_owned();
    Ok((global, rows))
}

/// Wraps a provider with a directory of binary feature files.
pub struct CachedFeatures<P> {
    inner: P,
    dir: PathBuf,
}

impl<P: FeatureProvider> CachedFeatures<P> {
    pub fn new(inner: P, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
        }
    }

    fn path(&self, kind: &str, key: &str) -> PathBuf {
        self.dir.join(format!("{}.bin", sha256_hex(&[kind.as_bytes(), key.as_bytes()])))
    }

    fn load_or(&self, path: &Path, make: impl FnOnce() -> Result<(Array1<f64>, Tensor)>) -> Result<(Array1<f64>, Tensor)> {
        if let Ok(bytes) = fs::read(path) {
            return decode_rows(&bytes);
        }
        let (g, rows) = make()?;
        let bytes = encode_rows(&g, &rows);
        with_dir_lock(&self.dir, || crate::util::atomic_write(path, &bytes))?;
        Ok((g, rows))
    }
}

impl<P: FeatureProvider> FeatureProvider for CachedFeatures<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn image_features(&self, image_ref: &str) -> Result<PatchFeatures> {
        let path = self.path("image", image_ref);
        let (cls, patches) = self.load_or(&path, || {
            let f = self.inner.image_features(image_ref)?;
            Ok((f.cls, f.patches))
        })?;
        PatchFeatures::new(cls, patches)
    }

    fn sentence_features(&self, sentence: &str) -> Result<TokenFeatures> {
        let path = self.path("sentence", sentence);
        let (global, tokens) = self.load_or(&path, || {
            let f = self.inner.sentence_features(sentence)?;
            Ok((f.global, f.tokens))
        })?;
        TokenFeatures::new(tokens, global)
    }
}
