//! Text and vision transformer towers of the dual encoder.
//!
//! Weights are read from a [`TensorArchive`] under this naming scheme
//! (`{t}` is `text` or `vision`, `{i}` the block index):
//!
//! | tensor | shape |
//! |---|---|
//! | `text.token_embedding` | `[vocab_size, text_width]` |
//! | `text.positional_embedding` | `[context_length, text_width]` |
//! | `{t}.blocks.{i}.ln_1.weight`, `.bias` | `[w]` |
//! | `{t}.blocks.{i}.attn.qkv.weight`, `.bias` | `[3w, w]`, `[3w]` |
//! | `{t}.blocks.{i}.attn.out.weight`, `.bias` | `[w, w]`, `[w]` |
//! | `{t}.blocks.{i}.ln_2.weight`, `.bias` | `[w]` |
//! | `{t}.blocks.{i}.mlp.fc.weight`, `.bias` | `[4w, w]`, `[4w]` |
//! | `{t}.blocks.{i}.mlp.proj.weight`, `.bias` | `[w, 4w]`, `[w]` |
//! | `text.ln_final.weight`, `.bias` | `[text_width]` |
//! | `text.projection` | `[text_width, embed_dim]` |
//! | `vision.patch_embed.weight` | `[vision_width, 3, patch, patch]` |
//! | `vision.class_embedding` | `[vision_width]` |
//! | `vision.positional_embedding` | `[grid*grid + 1, vision_width]` |
//! | `vision.ln_pre.weight`, `.bias`, `vision.ln_post.weight`, `.bias` | `[vision_width]` |
//! | `vision.projection` | `[vision_width, embed_dim]` |
//! | `logit_scale` | `[1]`, log of the similarity temperature |
//! | `preprocess.mean`, `preprocess.std` | `[3]` |
//!
//! Linear weights are `[out, in]`; projections are `[in, out]`, matching the
//! layout of the published checkpoint.

pub mod block;
pub mod math;

use std::borrow::Cow;

use thiserror::Error;

use crate::tensorstore::{ArchiveError, TensorArchive};
use crate::tokenizer::TokenSequence;
use block::{block_backward, block_forward, view, BlockCache, BlockWeights};
use math::{layer_norm, layer_norm_backward, linear, Real};

/// Maximum distance of a normalized embedding's L2 norm from one.
pub const NORM_TOLERANCE: f32 = 1e-5;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TowerConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub context_length: usize,
    pub vocab_size: usize,
    pub image_resolution: usize,
    pub patch_size: usize,
    pub text: TowerConfig,
    pub vision: TowerConfig,
}

impl EncoderConfig {
    /// ViT-B/32 as published.
    pub fn clip_vit_b32() -> Self {
        Self {
            embed_dim: 512,
            context_length: 77,
            vocab_size: 49408,
            image_resolution: 224,
            patch_size: 32,
            text: TowerConfig {
                width: 512,
                layers: 12,
                heads: 8,
            },
            vision: TowerConfig {
                width: 768,
                layers: 12,
                heads: 12,
            },
        }
    }

    pub fn from_archive(archive: &TensorArchive) -> Result<Self, EncoderError> {
        let tower = |prefix: &str| -> Result<TowerConfig, ArchiveError> {
            Ok(TowerConfig {
                width: archive.meta_usize(&format!("{prefix}_width"))?,
                layers: archive.meta_usize(&format!("{prefix}_layers"))?,
                heads: archive.meta_usize(&format!("{prefix}_heads"))?,
            })
        };
        let cfg = Self {
            embed_dim: archive.meta_usize("embed_dim")?,
            context_length: archive.meta_usize("context_length")?,
            vocab_size: archive.meta_usize("vocab_size")?,
            image_resolution: archive.meta_usize("image_resolution")?,
            patch_size: archive.meta_usize("patch_size")?,
            text: tower("text")?,
            vision: tower("vision")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes the metadata keys [`EncoderConfig::from_archive`] reads.
    pub fn write_metadata(&self, archive: &mut TensorArchive) {
        for (k, v) in [
            ("embed_dim", self.embed_dim),
            ("context_length", self.context_length),
            ("vocab_size", self.vocab_size),
            ("image_resolution", self.image_resolution),
            ("patch_size", self.patch_size),
            ("text_width", self.text.width),
            ("text_layers", self.text.layers),
            ("text_heads", self.text.heads),
            ("vision_width", self.vision.width),
            ("vision_layers", self.vision.layers),
            ("vision_heads", self.vision.heads),
        ] {
            archive.set_metadata(k, v.to_string());
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        for (name, t) in [("text", self.text), ("vision", self.vision)] {
            if t.width == 0 || t.heads == 0 || t.width % t.heads != 0 {
                return bad(format!("{name} width {} not divisible by heads {}", t.width, t.heads));
            }
        }
        if self.patch_size == 0 || !self.image_resolution.is_multiple_of(self.patch_size) {
            return bad(format!(
                "image resolution {} not divisible by patch size {}",
                self.image_resolution, self.patch_size
            ));
        }
        if self.context_length < 2 || self.embed_dim == 0 {
            return bad("context length must be >= 2 and embed_dim > 0".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_resolution / self.patch_size
    }
}

/// Output of either tower.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
    normalized: bool,
}

impl Embedding {
    /// Scales `values` to unit length.
    pub fn normalize(mut values: Vec<f32>) -> Self {
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        for v in values.iter_mut() {
            *v = (*v as f64 * inv) as f32;
        }
        let normalized = norm > 0.0;
        Self { values, normalized }
    }

    /// Wraps values as-is; `normalized` reflects whether they are unit length.
    pub fn new(values: Vec<f32>) -> Self {
        let normalized = is_unit(&values);
        Self { values, normalized }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

pub fn is_unit(values: &[f32]) -> bool {
    let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    (norm - 1.0).abs() <= NORM_TOLERANCE as f64
}

/// Per-position inputs to the text transformer before the positional add.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingMatrix {
    pub rows: Vec<f32>,
    pub width: usize,
}

impl TokenEmbeddingMatrix {
    pub fn zeros(context_length: usize, width: usize) -> Self {
        Self {
            rows: vec![0.0; context_length * width],
            width,
        }
    }

    pub fn context_length(&self) -> usize {
        self.rows.len() / self.width
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.width..(i + 1) * self.width]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.rows[i * self.width..(i + 1) * self.width]
    }
}

/// Activations of one text forward pass, consumed by the VJP.
struct TextTrace<T> {
    rows: usize,
    block_caches: Vec<BlockCache<T>>,
    final_ln: math::LayerNormCache<T>,
    norm: T,
}

/// Output of [`TextEncoder::forward_traced`].
pub struct TracedText<T> {
    output: Vec<T>,
    eot: usize,
    trace: TextTrace<T>,
}

impl<T> TracedText<T> {
    pub fn output(&self) -> &[T] {
        &self.output
    }
}

/// Text tower, generic over the compute type. Weights borrow from the archive
/// for `f32`.
pub struct TextEncoder<'a, T: Real = f32> {
    config: EncoderConfig,
    token_embedding: &'a [f32],
    positional: Cow<'a, [T]>,
    blocks: Vec<BlockWeights<'a, T>>,
    ln_final_weight: Cow<'a, [T]>,
    ln_final_bias: Cow<'a, [T]>,
    projection: Cow<'a, [T]>,
}

impl<'a, T: Real> TextEncoder<'a, T> {
    pub fn new(archive: &'a TensorArchive) -> Result<Self, EncoderError> {
        let config = EncoderConfig::from_archive(archive)?;
        Self::with_config(archive, config)
    }

    pub fn with_config(archive: &'a TensorArchive, config: EncoderConfig) -> Result<Self, EncoderError> {
        let w = config.text.width;
        let token_embedding = archive
            .tensor_with_shape("text.token_embedding", &[config.vocab_size, w])?
            .data();
        let blocks = (0..config.text.layers)
            .map(|i| BlockWeights::from_archive(archive, &format!("text.blocks.{i}"), w, config.text.heads))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            config,
            token_embedding,
            positional: view(archive, "text.positional_embedding", &[config.context_length, w])?,
            blocks,
            ln_final_weight: view(archive, "text.ln_final.weight", &[w])?,
            ln_final_bias: view(archive, "text.ln_final.bias", &[w])?,
            projection: view(archive, "text.projection", &[w, config.embed_dim])?,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn width(&self) -> usize {
        self.config.text.width
    }

    /// Token-embedding lookup, before positional encoding.
    pub fn embed_tokens(&self, tokens: &TokenSequence) -> Result<TokenEmbeddingMatrix, EncoderError> {
        let w = self.width();
        if tokens.ids.len() != self.config.context_length {
            return Err(EncoderError::ShapeMismatch(format!(
                "token sequence has {} ids, context length is {}",
                tokens.ids.len(),
                self.config.context_length
            )));
        }
        let mut m = TokenEmbeddingMatrix::zeros(self.config.context_length, w);
        for (pos, &id) in tokens.ids.iter().enumerate() {
            let id = id as usize;
            if id >= self.config.vocab_size {
                return Err(EncoderError::ShapeMismatch(format!(
                    "token id {id} outside vocabulary of {}",
                    self.config.vocab_size
                )));
            }
            m.row_mut(pos).copy_from_slice(&self.token_embedding[id * w..(id + 1) * w]);
        }
        Ok(m)
    }

    /// Row of the token-embedding table for `id`.
    pub fn token_row(&self, id: u32) -> &'a [f32] {
        let w = self.width();
        &self.token_embedding[id as usize * w..(id as usize + 1) * w]
    }

    fn check_rows(&self, rows: &[T], eot: usize) -> Result<(), EncoderError> {
        let expect = self.config.context_length * self.width();
        if rows.len() != expect {
            return Err(EncoderError::ShapeMismatch(format!(
                "input rows hold {} values, expected {expect}",
                rows.len()
            )));
        }
        if eot >= self.config.context_length {
            return Err(EncoderError::ShapeMismatch(format!(
                "eot position {eot} outside context length {}",
                self.config.context_length
            )));
        }
        Ok(())
    }

    /// Causal masking means positions after `eot` never reach the output, so
    /// only rows `0..=eot` are run.
    fn run(&self, rows: &[T], eot: usize, keep_trace: bool) -> (Vec<T>, Option<TextTrace<T>>) {
        let w = self.width();
        let n = eot + 1;
        let mut x: Vec<T> = rows[..n * w]
            .iter()
            .zip(&self.positional[..n * w])
            .map(|(&a, &b)| a + b)
            .collect();
        let mut caches = Vec::new();
        for block in &self.blocks {
            if keep_trace {
                let mut c = BlockCache::default();
                x = block_forward(&x, n, block, true, Some(&mut c));
                caches.push(c);
            } else {
                x = block_forward(&x, n, block, true, None);
            }
        }
        let last = &x[eot * w..n * w];
        let (z, final_ln) = layer_norm(last, w, &self.ln_final_weight, &self.ln_final_bias);
        let e = project(&z, &self.projection, self.config.embed_dim);
        let norm = math::l2_norm(&e);
        let safe = if norm > T::ZERO { norm } else { T::ONE };
        let out = e.iter().map(|&v| v / safe).collect();
        let trace = keep_trace.then_some(TextTrace {
            rows: n,
            block_caches: caches,
            final_ln,
            norm: safe,
        });
        (out, trace)
    }

    /// Unit-norm text embedding from caller-supplied input rows.
    pub fn forward(&self, rows: &[T], eot: usize) -> Result<Vec<T>, EncoderError> {
        self.check_rows(rows, eot)?;
        Ok(self.run(rows, eot, false).0)
    }

    /// Gradient of `<cotangent, forward(rows, eot)>` with respect to `rows`.
    pub fn vjp(&self, rows: &[T], eot: usize, cotangent: &[T]) -> Result<Vec<T>, EncoderError> {
        Ok(self.forward_and_vjp(rows, eot, cotangent)?.1)
    }

    /// Forward output together with the VJP for `cotangent`.
    pub fn forward_and_vjp(
        &self,
        rows: &[T],
        eot: usize,
        cotangent: &[T],
    ) -> Result<(Vec<T>, Vec<T>), EncoderError> {
        self.check_rows(rows, eot)?;
        if cotangent.len() != self.config.embed_dim {
            return Err(EncoderError::ShapeMismatch(format!(
                "cotangent has {} entries, embed_dim is {}",
                cotangent.len(),
                self.config.embed_dim
            )));
        }
        let (out, trace) = self.run(rows, eot, true);
        let trace = trace.expect("trace requested");
        Ok((out.clone(), self.backward(&out, &trace, eot, cotangent)))
    }

    /// Forward pass that keeps the activations, so the VJP can be taken later
    /// with a cotangent that depends on the output.
    pub fn forward_traced(&self, rows: &[T], eot: usize) -> Result<TracedText<T>, EncoderError> {
        self.check_rows(rows, eot)?;
        let (output, trace) = self.run(rows, eot, true);
        Ok(TracedText {
            output,
            eot,
            trace: trace.expect("trace requested"),
        })
    }

    pub fn vjp_traced(&self, traced: &TracedText<T>, cotangent: &[T]) -> Result<Vec<T>, EncoderError> {
        if cotangent.len() != self.config.embed_dim {
            return Err(EncoderError::ShapeMismatch(format!(
                "cotangent has {} entries, embed_dim is {}",
                cotangent.len(),
                self.config.embed_dim
            )));
        }
        Ok(self.backward(&traced.output, &traced.trace, traced.eot, cotangent))
    }

    fn backward(&self, out: &[T], trace: &TextTrace<T>, eot: usize, cot: &[T]) -> Vec<T> {
        let w = self.width();
        let d = self.config.embed_dim;
        let n = trace.rows;
        // through out = e / |e|
        let along = out.iter().zip(cot).fold(T::ZERO, |a, (&o, &c)| a + o * c);
        let g_e: Vec<T> = cot
            .iter()
            .zip(out)
            .map(|(&c, &o)| (c - o * along) / trace.norm)
            .collect();
        // through e = z P, P: [w, d]
        let g_z: Vec<T> = (0..w)
            .map(|k| math::dot(&self.projection[k * d..(k + 1) * d], &g_e))
            .collect();
        let g_last = layer_norm_backward(&g_z, w, &self.ln_final_weight, &trace.final_ln);
        let mut g = vec![T::ZERO; n * w];
        g[eot * w..n * w].copy_from_slice(&g_last);
        for (block, cache) in self.blocks.iter().zip(&trace.block_caches).rev() {
            g = block_backward(&g, n, block, true, cache);
        }
        g.resize(self.config.context_length * w, T::ZERO);
        g
    }
}

fn project<T: Real>(z: &[T], proj: &[T], out_dim: usize) -> Vec<T> {
    let mut e = vec![T::ZERO; out_dim];
    for (k, &zk) in z.iter().enumerate() {
        math::axpy(zk, &proj[k * out_dim..(k + 1) * out_dim], &mut e);
    }
    e
}

/// Vision tower (forward only).
pub struct ImageEncoder<'a> {
    config: EncoderConfig,
    patch_weight: &'a [f32],
    class_embedding: &'a [f32],
    positional: &'a [f32],
    ln_pre_weight: &'a [f32],
    ln_pre_bias: &'a [f32],
    blocks: Vec<BlockWeights<'a, f32>>,
    ln_post_weight: &'a [f32],
    ln_post_bias: &'a [f32],
    projection: &'a [f32],
}

impl<'a> ImageEncoder<'a> {
    pub fn new(archive: &'a TensorArchive) -> Result<Self, EncoderError> {
        let config = EncoderConfig::from_archive(archive)?;
        let w = config.vision.width;
        let p = config.patch_size;
        let g = config.grid();
        let t = |name: &str, shape: &[usize]| -> Result<&'a [f32], ArchiveError> {
            Ok(archive.tensor_with_shape(name, shape)?.data())
        };
        let blocks = (0..config.vision.layers)
            .map(|i| BlockWeights::from_archive(archive, &format!("vision.blocks.{i}"), w, config.vision.heads))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            config,
            patch_weight: t("vision.patch_embed.weight", &[w, 3, p, p])?,
            class_embedding: t("vision.class_embedding", &[w])?,
            positional: t("vision.positional_embedding", &[g * g + 1, w])?,
            ln_pre_weight: t("vision.ln_pre.weight", &[w])?,
            ln_pre_bias: t("vision.ln_pre.bias", &[w])?,
            blocks,
            ln_post_weight: t("vision.ln_post.weight", &[w])?,
            ln_post_bias: t("vision.ln_post.bias", &[w])?,
            projection: t("vision.projection", &[w, config.embed_dim])?,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// `pixels` is a standardized `[3, R, R]` raster, channel-major.
    pub fn encode(&self, pixels: &[f32]) -> Result<Embedding, EncoderError> {
        let r = self.config.image_resolution;
        if pixels.len() != 3 * r * r {
            return Err(EncoderError::ShapeMismatch(format!(
                "image holds {} values, expected 3x{r}x{r}",
                pixels.len()
            )));
        }
        let p = self.config.patch_size;
        let g = self.config.grid();
        let w = self.config.vision.width;
        let patch_len = 3 * p * p;
        let mut patches = vec![0.0f32; g * g * patch_len];
        for gy in 0..g {
            for gx in 0..g {
                let dst = &mut patches[(gy * g + gx) * patch_len..(gy * g + gx + 1) * patch_len];
                for c in 0..3 {
                    for ky in 0..p {
                        let src = c * r * r + (gy * p + ky) * r + gx * p;
                        dst[(c * p + ky) * p..(c * p + ky + 1) * p].copy_from_slice(&pixels[src..src + p]);
                    }
                }
            }
        }
        let embedded = linear(&patches, g * g, self.patch_weight, None, w);
        let n = g * g + 1;
        let mut x = Vec::with_capacity(n * w);
        x.extend_from_slice(self.class_embedding);
        x.extend_from_slice(&embedded);
        for (v, &pe) in x.iter_mut().zip(self.positional) {
            *v += pe;
        }
        let (mut x, _) = layer_norm(&x, w, self.ln_pre_weight, self.ln_pre_bias);
        for block in &self.blocks {
            x = block_forward(&x, n, block, false, None);
        }
        let (cls, _) = layer_norm(&x[..w], w, self.ln_post_weight, self.ln_post_bias);
        Ok(Embedding::normalize(project(&cls, self.projection, self.config.embed_dim)))
    }
}

/// Similarity temperature stored in the archive, `exp(logit_scale)`.
pub fn logit_scale(archive: &TensorArchive) -> Option<f32> {
    archive
        .get("logit_scale")
        .and_then(|t| t.data().first().copied())
        .map(f32::exp)
}

pub fn encode_image(pixels: &[f32], archive: &TensorArchive) -> Result<Embedding, EncoderError> {
    ImageEncoder::new(archive)?.encode(pixels)
}

pub fn encode_text(tokens: &TokenSequence, archive: &TensorArchive) -> Result<Embedding, EncoderError> {
    let enc = TextEncoder::<f32>::new(archive)?;
    let rows = enc.embed_tokens(tokens)?;
    Ok(Embedding::new(enc.forward(&rows.rows, tokens.eot_position())?))
}

pub fn embed_tokens(tokens: &TokenSequence, archive: &TensorArchive) -> Result<TokenEmbeddingMatrix, EncoderError> {
    TextEncoder::<f32>::new(archive)?.embed_tokens(tokens)
}

pub fn encode_text_from_embeddings(
    rows: &TokenEmbeddingMatrix,
    eot_position: usize,
    archive: &TensorArchive,
) -> Result<Embedding, EncoderError> {
    let enc = TextEncoder::<f32>::new(archive)?;
    check_width(rows, enc.width())?;
    Ok(Embedding::new(enc.forward(&rows.rows, eot_position)?))
}

pub fn text_encoder_vjp(
    rows: &TokenEmbeddingMatrix,
    eot_position: usize,
    cotangent: &[f32],
    archive: &TensorArchive,
) -> Result<TokenEmbeddingMatrix, EncoderError> {
    let enc = TextEncoder::<f32>::new(archive)?;
    check_width(rows, enc.width())?;
    Ok(TokenEmbeddingMatrix {
        rows: enc.vjp(&rows.rows, eot_position, cotangent)?,
        width: rows.width,
    })
}

fn check_width(rows: &TokenEmbeddingMatrix, width: usize) -> Result<(), EncoderError> {
    if rows.width != width {
        return Err(EncoderError::ShapeMismatch(format!(
            "rows have width {}, text tower width is {width}",
            rows.width
        )));
    }
    Ok(())
}
