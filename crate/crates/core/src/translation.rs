//! Visual-to-text translation: routes an image or object crop to an
//! aesthetic caption (AC), facial description (FD) or object-level
//! aesthetic caption (AO).
//!
//! Providers sit behind small traits. The mocks here are deterministic
//! functions of the pixels they receive, and [`CommandProvider`] forwards
//! requests to an external process speaking JSON over stdin/stdout.

use crate::error::{Error, Result};
use crate::util::{atomic_write, rng_for, sha256_hex, truncate_tokens, whitespace_len, with_dir_lock};
use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

/// Cap on emitted auxiliary text, in whitespace tokens.
pub const MAX_AUX_TOKENS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub object_id: u32,
    pub bbox: BBox,
    pub linked_target: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AuxKind {
    AC,
    FD,
    AO,
}

impl AuxKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AuxKind::AC => "AC",
            AuxKind::FD => "FD",
            AuxKind::AO => "AO",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxiliaryText {
    pub kind: AuxKind,
    pub text: String,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub token_length: usize,
}

impl AuxiliaryText {
    /// Truncates `text` to [`MAX_AUX_TOKENS`].
    pub fn new(kind: AuxKind, text: &str, source: &str) -> Self {
        let text = if whitespace_len(text) > MAX_AUX_TOKENS {
            truncate_tokens(text, MAX_AUX_TOKENS)
        } else {
            text.to_string()
        };
        let token_length = whitespace_len(&text);
        Self {
            kind,
            text,
            source: source.to_string(),
            token_length,
        }
    }
}

/// RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != (width * height * 3) as usize {
            return Err(Error::InvalidInput(format!(
                "image {width}x{height} needs {} bytes, got {}",
                width as usize * height as usize * 3,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Crops to `bbox` exactly; the box must lie inside the image.
    pub fn crop(&self, bbox: &BBox) -> Result<Image> {
        if bbox.w == 0 || bbox.h == 0 || bbox.x + bbox.w > self.width || bbox.y + bbox.h > self.height {
            return Err(Error::InvalidInput(format!(
                "bbox {bbox:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity((bbox.w * bbox.h * 3) as usize);
        for y in bbox.y..bbox.y + bbox.h {
            let start = ((y * self.width + bbox.x) * 3) as usize;
            pixels.extend_from_slice(&self.pixels[start..start + (bbox.w * 3) as usize]);
        }
        Image::new(bbox.w, bbox.h, pixels)
    }

    /// `width` and `height` as little-endian u32, then the pixels.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.pixels.len());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn digest(&self) -> String {
        sha256_hex(&[&self.to_bytes()])
    }
}

pub trait ImageSource: Send + Sync {
    fn load(&self, image_ref: &str) -> Result<Image>;
}

/// Blocky seeded images: a grid of solid colour cells per image ref.
#[derive(Debug, Clone)]
pub struct SyntheticImages {
    pub width: u32,
    pub height: u32,
    pub cell: u32,
    pub seed: u64,
}

impl SyntheticImages {
    pub fn new(seed: u64) -> Self {
        Self {
            width: 64,
            height: 48,
            cell: 8,
            seed,
        }
    }
}

impl ImageSource for SyntheticImages {
    fn load(&self, image_ref: &str) -> Result<Image> {
        let cols = self.width.div_ceil(self.cell);
        let rows = self.height.div_ceil(self.cell);
        let mut rng = rng_for(self.seed, &[b"image", image_ref.as_bytes()]);
        let colours: Vec<[u8; 3]> = (0..cols * rows).map(|_| rng.gen()).collect();
        let mut pixels = Vec::with_capacity((self.width * self.height * 3) as usize);
        for y in 0..self.height {
            for x in 0..self.width {
                let c = colours[((y / self.cell) * cols + x / self.cell) as usize];
                pixels.extend_from_slice(&c);
            }
        }
        Image::new(self.width, self.height, pixels)
    }
}

/// Image files under a directory, addressed by relative path.
#[derive(Debug, Clone)]
pub struct ImageDir {
    pub dir: PathBuf,
}

impl ImageSource for ImageDir {
    fn load(&self, image_ref: &str) -> Result<Image> {
        let path = self.dir.join(image_ref);
        let img = image::open(&path)
            .map_err(|e| Error::InvalidInput(format!("cannot load image {}: {e}", path.display())))?
            .to_rgb8();
        Image::new(img.width(), img.height(), img.into_raw())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionMode {
    Aesthetic,
    Generic,
}

pub trait Captioner: Send + Sync {
    fn id(&self) -> String;
    fn caption(&self, image: &Image, mode: CaptionMode) -> Result<String>;
}

pub trait FaceDescriber: Send + Sync {
    fn id(&self) -> String;
    fn describe(&self, crop: &Image) -> Result<String>;
}

/// Number of faces found; any count above zero reads as a face.
pub trait FaceDetector: Send + Sync {
    fn id(&self) -> String;
    fn count_faces(&self, crop: &Image) -> Result<u32>;

    fn detect(&self, crop: &Image) -> Result<bool> {
        Ok(self.count_faces(crop)? >= 1)
    }
}

pub trait SimilarityScorer: Send + Sync {
    fn similarity(&self, whole: &Image, crop: &Image) -> Result<f64>;
}

/// Mean colour per cell of a `grid × grid` partition, relative to the
/// image size so crops and whole images are comparable.
#[derive(Debug, Clone)]
pub struct GridEmbedder {
    pub grid: u32,
}

impl Default for GridEmbedder {
    fn default() -> Self {
        Self { grid: 4 }
    }
}

impl GridEmbedder {
    pub fn embed(&self, img: &Image) -> Vec<f64> {
        let g = self.grid;
        let mut sums = vec![0.0; (g * g * 3) as usize];
        let mut counts = vec![0u32; (g * g) as usize];
        for y in 0..img.height {
            for x in 0..img.width {
                let cell = ((y * g / img.height) * g + x * g / img.width) as usize;
                counts[cell] += 1;
                let p = img.pixel(x, y);
                for c in 0..3 {
                    sums[cell * 3 + c] += p[c] as f64 / 255.0;
                }
            }
        }
        for (i, s) in sums.iter_mut().enumerate() {
            let n = counts[i / 3];
            if n > 0 {
                *s /= n as f64;
            }
        }
        sums
    }
}

impl SimilarityScorer for GridEmbedder {
    fn similarity(&self, whole: &Image, crop: &Image) -> Result<f64> {
        let a = self.embed(whole);
        let b = self.embed(crop);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) })
    }
}

/// Picks the candidate linked to `target` whose crop is most similar to the
/// whole image. Ties go to the lowest `object_id`.
pub fn resolve_object(
    target: &str,
    candidates: &[ObjectAnnotation],
    whole: &Image,
    scorer: &dyn SimilarityScorer,
) -> Result<Option<ObjectAnnotation>> {
    let mut linked: Vec<&ObjectAnnotation> = candidates.iter().filter(|c| c.linked_target == target).collect();
    linked.sort_by_key(|c| c.object_id);
    let mut best: Option<(&ObjectAnnotation, f64)> = None;
    for cand in linked {
        let score = scorer.similarity(whole, &whole.crop(&cand.bbox)?)?;
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("similarity for object {}", cand.object_id)));
        }
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((cand, score));
        }
    }
    Ok(best.map(|(c, _)| c.clone()))
}

fn provider_err(id: String, e: Error) -> Error {
    match e {
        Error::Provider { .. } => e,
        other => Error::Provider {
            provider: id,
            message: other.to_string(),
        },
    }
}

/// AC from the whole image when nothing is resolved, otherwise FD or AO
/// from the object crop depending on the face detector.
pub fn route_description(
    whole: &Image,
    resolved: Option<&ObjectAnnotation>,
    detector: &dyn FaceDetector,
    captioner: &dyn Captioner,
    describer: &dyn FaceDescriber,
) -> Result<AuxiliaryText> {
    let Some(obj) = resolved else {
        let text = captioner
            .caption(whole, CaptionMode::Aesthetic)
            .map_err(|e| provider_err(captioner.id(), e))?;
        return Ok(AuxiliaryText::new(AuxKind::AC, &text, &captioner.id()));
    };
    let crop = whole.crop(&obj.bbox)?;
    if detector.detect(&crop).map_err(|e| provider_err(detector.id(), e))? {
        let text = describer.describe(&crop).map_err(|e| provider_err(describer.id(), e))?;
        Ok(AuxiliaryText::new(AuxKind::FD, &text, &describer.id()))
    } else {
        let text = captioner
            .caption(&crop, CaptionMode::Aesthetic)
            .map_err(|e| provider_err(captioner.id(), e))?;
        Ok(AuxiliaryText::new(AuxKind::AO, &text, &captioner.id()))
    }
}

/// Captions as `caption:<digest prefix>`, or a fixed text.
#[derive(Debug, Clone, Default)]
pub struct MockCaptioner {
    pub fixed: Option<String>,
}

impl MockCaptioner {
    pub fn fixed(text: &str) -> Self {
        Self {
            fixed: Some(text.into()),
        }
    }
}

impl Captioner for MockCaptioner {
    fn id(&self) -> String {
        "mock-captioner".into()
    }

    fn caption(&self, image: &Image, mode: CaptionMode) -> Result<String> {
        if let Some(t) = &self.fixed {
            return Ok(t.clone());
        }
        let d = image.digest();
        Ok(match mode {
            CaptionMode::Aesthetic => format!("caption:{} vivid warm tones soft light", &d[..8]),
            CaptionMode::Generic => format!("caption:{} a photo", &d[..8]),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockFaceDescriber;

impl FaceDescriber for MockFaceDescriber {
    fn id(&self) -> String {
        "mock-face".into()
    }

    fn describe(&self, crop: &Image) -> Result<String> {
        Ok(format!("face:{} calm expression", &crop.digest()[..8]))
    }
}

/// Fixed face count, or a pixel-derived one when `None`.
#[derive(Debug, Clone, Default)]
pub struct MockFaceDetector {
    pub fixed: Option<u32>,
}

impl FaceDetector for MockFaceDetector {
    fn id(&self) -> String {
        "mock-detector".into()
    }

    fn count_faces(&self, crop: &Image) -> Result<u32> {
        if let Some(n) = self.fixed {
            return Ok(n);
        }
        let d = crop.digest();
        Ok(u32::from_str_radix(&d[..1], 16).expect("hex digit") % 3)
    }
}

#[derive(Debug, Serialize)]
struct ProviderRequest<'a> {
    mode: &'a str,
    image: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
struct ProviderResponse {
    text: String,
}

/// External provider: one process per request, JSON request on stdin
/// (`mode`, base64 RGB `image`, `width`, `height`) and `{"text": ...}` on
/// stdout. Modes are `caption-aesthetic`, `caption-generic`, `face` and
/// `detect`; for `detect` the text is the face count.
#[derive(Debug, Clone)]
pub struct CommandProvider {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandProvider {
    pub fn new(program: &str, args: &[String]) -> Self {
        Self {
            program: program.into(),
            args: args.to_vec(),
        }
    }

    fn call(&self, mode: &str, image: &Image) -> Result<String> {
        let fail = |m: String| Error::Provider {
            provider: Captioner::id(self),
            message: m,
        };
        let req = ProviderRequest {
            mode,
            image: base64::engine::general_purpose::STANDARD.encode(&image.pixels),
            width: image.width,
            height: image.height,
        };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("spawn: {e}")))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            stdin
                .write_all(&serde_json::to_vec(&req)?)
                .map_err(|e| fail(format!("write: {e}")))?;
        }
        let out = child.wait_with_output().map_err(|e| fail(format!("wait: {e}")))?;
        if !out.status.success() {
            return Err(fail(format!(
                "exit {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let resp: ProviderResponse =
            serde_json::from_slice(&out.stdout).map_err(|e| fail(format!("bad response: {e}")))?;
        Ok(resp.text)
    }
}

impl Captioner for CommandProvider {
    fn id(&self) -> String {
        format!("cmd:{}", self.program)
    }

    fn caption(&self, image: &Image, mode: CaptionMode) -> Result<String> {
        let m = match mode {
            CaptionMode::Aesthetic => "caption-aesthetic",
            CaptionMode::Generic => "caption-generic",
        };
        self.call(m, image)
    }
}

impl FaceDescriber for CommandProvider {
    fn id(&self) -> String {
        format!("cmd:{}", self.program)
    }

    fn describe(&self, crop: &Image) -> Result<String> {
        self.call("face", crop)
    }
}

impl FaceDetector for CommandProvider {
    fn id(&self) -> String {
        format!("cmd:{}", self.program)
    }

    fn count_faces(&self, crop: &Image) -> Result<u32> {
        let text = self.call("detect", crop)?;
        text.trim().parse().map_err(|_| Error::Provider {
            provider: FaceDetector::id(self),
            message: format!("detector returned `{text}`"),
        })
    }
}

pub struct Providers<'a> {
    pub images: &'a dyn ImageSource,
    pub scorer: &'a dyn SimilarityScorer,
    pub detector: &'a dyn FaceDetector,
    pub captioner: &'a dyn Captioner,
    pub describer: &'a dyn FaceDescriber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheRecord {
    image_ref: String,
    object_id: Option<u32>,
    provider: String,
    slot: String,
    text: AuxiliaryText,
}

/// Content-addressed JSON records, one file per
/// `(image_ref, object_id, provider, slot)`.
#[derive(Debug, Clone)]
pub struct AuxCache {
    dir: PathBuf,
}

impl AuxCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn path(&self, image_ref: &str, object_id: Option<u32>, provider: &str, slot: &str) -> PathBuf {
        let oid = object_id.map(|o| o.to_string()).unwrap_or_default();
        let key = sha256_hex(&[image_ref.as_bytes(), oid.as_bytes(), provider.as_bytes(), slot.as_bytes()]);
        self.dir.join(format!("{key}.json"))
    }

    fn get_or(
        &self,
        image_ref: &str,
        object_id: Option<u32>,
        provider: &str,
        slot: &str,
        make: impl FnOnce() -> Result<AuxiliaryText>,
    ) -> Result<AuxiliaryText> {
        let path = self.path(image_ref, object_id, provider, slot);
        if let Ok(bytes) = fs::read(&path) {
            if let Ok(rec) = serde_json::from_slice::<CacheRecord>(&bytes) {
                return Ok(rec.text);
            }
        }
        let text = make()?;
        let rec = CacheRecord {
            image_ref: image_ref.into(),
            object_id,
            provider: provider.into(),
            slot: slot.into(),
            text: text.clone(),
        };
        let bytes = serde_json::to_vec_pretty(&rec)?;
        with_dir_lock(&self.dir, || atomic_write(&path, &bytes))?;
        Ok(text)
    }
}

/// Fills `object`, `ac`, `gc` and `od` for one sample. An already-set
/// `object` is kept; otherwise it is resolved from `candidates`.
pub fn prepare_sample(
    sample: &crate::data::Sample,
    p: &Providers<'_>,
    cache: Option<&AuxCache>,
) -> Result<crate::data::Sample> {
    let mut out = sample.clone();
    let whole = p.images.load(&sample.image)?;
    if out.object.is_none() {
        out.object = resolve_object(&sample.target, &sample.candidates, &whole, p.scorer)?;
    }
    let cid = p.captioner.id();
    let caption = |mode: CaptionMode, slot: &str| -> Result<AuxiliaryText> {
        let make = || {
            let t = p.captioner.caption(&whole, mode).map_err(|e| provider_err(cid.clone(), e))?;
            Ok(AuxiliaryText::new(AuxKind::AC, &t, &cid))
        };
        match cache {
            Some(c) => c.get_or(&sample.image, None, &cid, slot, make),
            None => make(),
        }
    };
    out.ac = Some(caption(CaptionMode::Aesthetic, "ac")?.text);
    out.gc = Some(caption(CaptionMode::Generic, "gc")?.text);
    out.od = match &out.object {
        None => None,
        Some(obj) => {
            let provider = format!("{}|{}|{}", p.detector.id(), cid, p.describer.id());
            let make = || route_description(&whole, Some(obj), p.detector, p.captioner, p.describer);
            Some(match cache {
                Some(c) => c.get_or(&sample.image, Some(obj.object_id), &provider, "od", make)?,
                None => make()?,
            })
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct FixedScores(Vec<f64>, Mutex<usize>);

    impl SimilarityScorer for FixedScores {
        fn similarity(&self, _: &Image, _: &Image) -> Result<f64> {
            let mut i = self.1.lock().unwrap();
            *i += 1;
            Ok(self.0[*i - 1])
        }
    }

    /// Records every image it is asked to caption.
    #[derive(Default)]
    struct Recorder(Mutex<Vec<Image>>);

    impl Captioner for Recorder {
        fn id(&self) -> String {
            "recorder".into()
        }
        fn caption(&self, image: &Image, _: CaptionMode) -> Result<String> {
            self.0.lock().unwrap().push(image.clone());
            Ok("seen".into())
        }
    }

    struct Failing;

    impl Captioner for Failing {
        fn id(&self) -> String {
            "broken".into()
        }
        fn caption(&self, _: &Image, _: CaptionMode) -> Result<String> {
            Err(Error::InvalidInput("boom".into()))
        }
    }

    fn obj(id: u32, target: &str) -> ObjectAnnotation {
        ObjectAnnotation {
            object_id: id,
            bbox: BBox { x: id, y: 0, w: 8, h: 8 },
            linked_target: target.into(),
        }
    }

    fn image() -> Image {
        SyntheticImages::new(1).load("img").unwrap()
    }

    #[test]
    fn resolve_handles_empty_singleton_and_ties() {
        let img = image();
        let s = GridEmbedder::default();
        assert_eq!(resolve_object("Bob", &[], &img, &s).unwrap(), None);
        assert_eq!(resolve_object("Bob", &[obj(3, "Bob")], &img, &s).unwrap(), Some(obj(3, "Bob")));
        assert_eq!(resolve_object("Bob", &[obj(3, "Ann")], &img, &s).unwrap(), None);

        let cands = [obj(1, "Bob"), obj(2, "Bob"), obj(3, "Bob")];
        let scorer = FixedScores(vec![0.2, 0.9, 0.9], Mutex::new(0));
        assert_eq!(resolve_object("Bob", &cands, &img, &scorer).unwrap().unwrap().object_id, 2);
        // candidate order in the input does not matter
        let shuffled = [obj(3, "Bob"), obj(1, "Bob"), obj(2, "Bob")];
        let scorer = FixedScores(vec![0.2, 0.9, 0.9], Mutex::new(0));
        assert_eq!(resolve_object("Bob", &shuffled, &img, &scorer).unwrap().unwrap().object_id, 2);
    }

    #[test]
    fn routing_branches() {
        let img = image();
        let cap = MockCaptioner::fixed("caption:IMG");
        let face = MockFaceDescriber;
        let none = route_description(&img, None, &MockFaceDetector { fixed: Some(1) }, &cap, &face).unwrap();
        assert_eq!(none, AuxiliaryText::new(AuxKind::AC, "caption:IMG", "mock-captioner"));

        let o = obj(4, "Bob");
        let fd = route_description(&img, Some(&o), &MockFaceDetector { fixed: Some(1) }, &cap, &face).unwrap();
        assert_eq!(fd.kind, AuxKind::FD);
        let many = route_description(&img, Some(&o), &MockFaceDetector { fixed: Some(3) }, &cap, &face).unwrap();
        assert_eq!(many.kind, AuxKind::FD);
    }

    #[test]
    fn object_caption_sees_the_crop() {
        let img = image();
        let rec = Recorder::default();
        let o = obj(5, "Bob");
        let ao = route_description(&img, Some(&o), &MockFaceDetector { fixed: Some(0) }, &rec, &MockFaceDescriber)
            .unwrap();
        assert_eq!(ao.kind, AuxKind::AO);
        let seen = rec.0.lock().unwrap();
        assert_eq!(seen.len(), 1);
        assert_eq!(seen[0], img.crop(&o.bbox).unwrap());
        assert_ne!(seen[0].to_bytes(), img.to_bytes());
    }

    #[test]
    fn provider_failures_carry_id() {
        let err = route_description(&image(), None, &MockFaceDetector::default(), &Failing, &MockFaceDescriber)
            .unwrap_err();
        assert!(err.is_retriable());
        assert!(err.to_string().contains("broken"));
    }

    #[test]
    fn texts_are_capped() {
        let long = vec!["w"; 80].join(" ");
        let t = AuxiliaryText::new(AuxKind::AC, &long, "x");
        assert_eq!(t.token_length, MAX_AUX_TOKENS);
        assert_eq!(whitespace_len(&t.text), MAX_AUX_TOKENS);
    }

    #[test]
    fn crop_bounds_are_checked() {
        let img = image();
        assert!(img.crop(&BBox { x: 60, y: 0, w: 8, h: 8 }).is_err());
        let c = img.crop(&BBox { x: 1, y: 2, w: 3, h: 4 }).unwrap();
        assert_eq!(c.pixel(0, 0), img.pixel(1, 2));
        assert_eq!(c.pixel(2, 3), img.pixel(3, 5));
    }

    #[test]
    fn prepare_is_byte_identical_with_and_without_cache() {
        let dir = tempfile::tempdir().unwrap();
        let images = SyntheticImages::new(7);
        let p = Providers {
            images: &images,
            scorer: &GridEmbedder::default(),
            detector: &MockFaceDetector::default(),
            captioner: &MockCaptioner::default(),
            describer: &MockFaceDescriber,
        };
        let mut s = crate::data::Sample::new("1", "img-1", "Bob smiles", "Bob", crate::data::Sentiment::Positive);
        s.candidates = vec![obj(2, "Bob"), obj(9, "Bob")];
        let cache = AuxCache::new(dir.path());
        let a = prepare_sample(&s, &p, Some(&cache)).unwrap();
        let b = prepare_sample(&s, &p, Some(&cache)).unwrap();
        let c = prepare_sample(&s, &p, None).unwrap();
        let bytes = |x: &crate::data::Sample| serde_json::to_vec(x).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        assert_eq!(bytes(&a), bytes(&c));
        assert!(a.object.is_some() && a.od.is_some() && a.ac.is_some() && a.gc.is_some());
    }
}
