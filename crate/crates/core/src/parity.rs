//! Reference vectors for checking this engine against another CLIP
//! implementation.
//!
//! A parity bundle is a CGT1 archive with `kind=parity-bundle`:
//!
//! | entry | content |
//! |---|---|
//! | `prompt.<i>` (meta) | prompt text |
//! | `prompt.<i>.ids` (meta) | space-separated token ids, SOT..EOT |
//! | `prompt.<i>.embedding` | `[embed_dim]` unit-norm text embedding |
//! | `image.<i>.composite` | `[3, H, W]` composite in [0, 1] |
//! | `image.<i>.pixels` | `[3, R, R]` preprocessed reference input |
//! | `image.<i>.embedding` | `[embed_dim]` unit-norm image embedding |
//!
//! plus `prompts`, `images` and `version` metadata.

use std::path::Path;

use thiserror::Error;

use crate::encoder::{encode_image, encode_text, EncoderConfig, EncoderError, Embedding};
use crate::ingest::{preprocess_image, BandComposite, IngestError, Modality, Normalization};
use crate::tensorstore::{ArchiveError, Tensor, TensorArchive};
use crate::tokenizer::{tokenize_to_length, Vocabulary};
use crate::zeroshot::{DEFAULT_NEGATIVE_PROMPT, DEFAULT_POSITIVE_PROMPT};

pub const PARITY_VERSION: &str = "1";
/// Minimum cosine similarity between our embeddings and the reference.
pub const COSINE_TOLERANCE: f64 = 0.999;
/// Largest per-pixel preprocessing difference accepted.
pub const PIXEL_TOLERANCE: f32 = 1e-3;

#[derive(Debug, Error)]
pub enum ParityError {
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("invalid parity bundle: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParityPrompt {
    pub text: String,
    pub token_ids: Vec<u32>,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParityImage {
    pub composite: Tensor,
    pub pixels: Tensor,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParityBundle {
    pub prompts: Vec<ParityPrompt>,
    pub images: Vec<ParityImage>,
}

fn invalid(msg: impl Into<String>) -> ParityError {
    ParityError::Invalid(msg.into())
}

fn check_unit(what: &str, v: &[f32]) -> Result<(), ParityError> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-5 {
        return Err(invalid(format!("{what} has norm {norm}")));
    }
    Ok(())
}

impl ParityBundle {
    /// Checks the invariants every bundle must satisfy before it is trusted.
    pub fn validate(&self) -> Result<(), ParityError> {
        for p in [DEFAULT_POSITIVE_PROMPT, DEFAULT_NEGATIVE_PROMPT] {
            if !self.prompts.iter().any(|q| q.text == p) {
                return Err(invalid(format!("missing prompt `{p}`")));
            }
        }
        let dim = self.prompts[0].embedding.len();
        for (i, p) in self.prompts.iter().enumerate() {
            check_unit(&format!("prompt.{i}.embedding"), &p.embedding)?;
            if p.embedding.len() != dim {
                return Err(invalid(format!("prompt.{i}.embedding has {} values, expected {dim}", p.embedding.len())));
            }
            if p.token_ids.len() < 2 {
                return Err(invalid(format!("prompt.{i} has no SOT/EOT ids")));
            }
        }
        for (i, im) in self.images.iter().enumerate() {
            check_unit(&format!("image.{i}.embedding"), &im.embedding)?;
            if im.embedding.len() != dim {
                return Err(invalid(format!("image.{i}.embedding has {} values, expected {dim}", im.embedding.len())));
            }
            for (name, t) in [("composite", &im.composite), ("pixels", &im.pixels)] {
                if t.shape().len() != 3 || t.shape()[0] != 3 {
                    return Err(invalid(format!("image.{i}.{name} has shape {:?}", t.shape())));
                }
            }
        }
        Ok(())
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new();
        a.set_metadata("kind", "parity-bundle");
        a.set_metadata("version", PARITY_VERSION);
        a.set_metadata("prompts", self.prompts.len().to_string());
        a.set_metadata("images", self.images.len().to_string());
        for (i, p) in self.prompts.iter().enumerate() {
            a.set_metadata(format!("prompt.{i}"), p.text.clone());
            let ids: Vec<String> = p.token_ids.iter().map(u32::to_string).collect();
            a.set_metadata(format!("prompt.{i}.ids"), ids.join(" "));
            a.insert(format!("prompt.{i}.embedding"), Tensor::from_vec(p.embedding.clone()));
        }
        for (i, im) in self.images.iter().enumerate() {
            a.insert(format!("image.{i}.composite"), im.composite.clone());
            a.insert(format!("image.{i}.pixels"), im.pixels.clone());
            a.insert(format!("image.{i}.embedding"), Tensor::from_vec(im.embedding.clone()));
        }
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self, ParityError> {
        if a.meta("kind").ok() != Some("parity-bundle") {
            return Err(invalid("missing kind=parity-bundle"));
        }
        let version = a.meta("version")?;
        if version != PARITY_VERSION {
            return Err(invalid(format!("unsupported version {version}")));
        }
        let mut prompts = Vec::new();
        for i in 0..a.meta_usize("prompts")? {
            let token_ids = a
                .meta(&format!("prompt.{i}.ids"))?
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| invalid(format!("prompt.{i}.ids: bad id `{s}`"))))
                .collect::<Result<_, _>>()?;
            prompts.push(ParityPrompt {
                text: a.meta(&format!("prompt.{i}"))?.to_string(),
                token_ids,
                embedding: a.tensor(&format!("prompt.{i}.embedding"))?.data().to_vec(),
            });
        }
        if prompts.is_empty() {
            return Err(invalid("no prompts"));
        }
        let mut images = Vec::new();
        for i in 0..a.meta_usize("images")? {
            images.push(ParityImage {
                composite: a.tensor(&format!("image.{i}.composite"))?.clone(),
                pixels: a.tensor(&format!("image.{i}.pixels"))?.clone(),
                embedding: a.tensor(&format!("image.{i}.embedding"))?.data().to_vec(),
            });
        }
        let bundle = Self { prompts, images };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ParityError> {
        Ok(self.to_archive().save(path)?)
    }

    /// Reads, checksums and validates a bundle.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ParityError> {
        Self::from_archive(&TensorArchive::read(path)?)
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParityReport {
    /// Texts whose token ids differ from the reference.
    pub token_mismatches: Vec<String>,
    pub min_text_cosine: f64,
    /// 1.0 when the bundle holds no images.
    pub min_image_cosine: f64,
    pub max_pixel_error: f32,
}

impl ParityReport {
    pub fn passes(&self) -> bool {
        self.token_mismatches.is_empty()
            && self.min_text_cosine >= COSINE_TOLERANCE
            && self.min_image_cosine >= COSINE_TOLERANCE
            && self.max_pixel_error <= PIXEL_TOLERANCE
    }
}

/// Runs every bundle input through this engine and compares. Image
/// embeddings are computed from the reference pixels so encoder and
/// preprocessing differences are reported separately.
pub fn verify_parity(bundle: &ParityBundle, archive: &TensorArchive, vocab: &Vocabulary) -> Result<ParityReport, ParityError> {
    let config = EncoderConfig::from_archive(archive)?;
    let norm = Normalization::from_archive(archive)?;
    let mut report = ParityReport {
        token_mismatches: Vec::new(),
        min_text_cosine: 1.0,
        min_image_cosine: 1.0,
        max_pixel_error: 0.0,
    };
    for p in &bundle.prompts {
        let tokens = tokenize_to_length(&p.text, vocab, config.context_length);
        if tokens.ids[..=tokens.eot_position()] != p.token_ids[..] {
            report.token_mismatches.push(p.text.clone());
        }
        let e = encode_text(&tokens, archive)?;
        report.min_text_cosine = report.min_text_cosine.min(cosine(e.values(), &p.embedding));
    }
    let r = config.image_resolution;
    for (i, im) in bundle.images.iter().enumerate() {
        if im.pixels.shape() != [3, r, r] {
            return Err(invalid(format!("image.{i}.pixels has shape {:?}, model expects [3, {r}, {r}]", im.pixels.shape())));
        }
        let s = im.composite.shape();
        let composite = BandComposite {
            modality: Modality::S2Rgb,
            width: s[2],
            height: s[1],
            channels: im.composite.data().to_vec(),
        };
        let ours = preprocess_image(&composite, r, &norm);
        let err = ours
            .iter()
            .zip(im.pixels.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        report.max_pixel_error = report.max_pixel_error.max(err);
        let e: Embedding = encode_image(im.pixels.data(), archive)?;
        report.min_image_cosine = report.min_image_cosine.min(cosine(e.values(), &im.embedding));
    }
    Ok(report)
}
