//! Context optimization: a shared block of learnable prompt rows placed
//! between SOT and the class-name tokens, trained through the frozen text
//! tower.
//!
//! Input rows for class `c` are
//! `[SOT, ctx_0 .. ctx_{M-1}, name_c tokens, EOT, padding]`, where padding is
//! the embedding of token id 0, as produced by the tokenizer.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::math::Real;
use crate::encoder::{logit_scale, Embedding, EncoderError, TextEncoder};
use crate::sampler::EpochSampler;
use crate::tensorstore::{ArchiveError, Tensor, TensorArchive};
use crate::tokenizer::Vocabulary;
use crate::verdict::{Label, Verdict};
use crate::zeroshot::{classify_zero_shot, PromptPair, ZeroShotError};

pub const DEFAULT_CLASS_NAMES: [&str; 2] = ["clouds", "clear sky"];
/// Similarity scale used when the archive has no `logit_scale`.
pub const FALLBACK_LOGIT_SCALE: f32 = 100.0;

#[derive(Debug, Error)]
pub enum CoopError {
    #[error("{m} context rows plus class `{class}` ({tokens} tokens) exceed the context length {limit}")]
    ContextTooLong {
        m: usize,
        class: String,
        tokens: usize,
        limit: usize,
    },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set contains only {0:?} samples")]
    SingleClassTrainingSet(Label),
    #[error("invalid context: {0}")]
    InvalidContext(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    ZeroShot(#[from] ZeroShotError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoopConfig {
    pub m_context: usize,
    pub init_std: f32,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// Cloudy name first.
    pub class_names: [String; 2],
}

impl CoopConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            m_context: 16,
            init_std: 0.02,
            steps: 1000,
            batch_size: 10,
            learning_rate: 0.002,
            seed,
            class_names: DEFAULT_CLASS_NAMES.map(String::from),
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.steps == 1000 && self.batch_size == 10
    }
}

impl Default for CoopConfig {
    fn default() -> Self {
        Self::new(0)
    }
}

/// Learned context rows plus the fixed class-name tokens they are paired with.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVectors {
    /// `m x width`, row-major.
    pub rows: Vec<f32>,
    pub m: usize,
    pub width: usize,
    pub class_names: [String; 2],
    pub class_tokens: [Vec<u32>; 2],
    pub sot_id: u32,
    pub eot_id: u32,
    pub seed: u64,
    pub steps: usize,
}

impl ContextVectors {
    pub fn validate(&self, context_length: usize) -> Result<(), CoopError> {
        if self.rows.len() != self.m * self.width {
            return Err(CoopError::InvalidContext(format!(
                "{} values for {} rows of width {}",
                self.rows.len(),
                self.m,
                self.width
            )));
        }
        if self.rows.iter().any(|v| !v.is_finite()) {
            return Err(CoopError::InvalidContext("non-finite value".into()));
        }
        for (name, tokens) in self.class_names.iter().zip(&self.class_tokens) {
            if self.m + tokens.len() + 2 > context_length {
                return Err(CoopError::ContextTooLong {
                    m: self.m,
                    class: name.clone(),
                    tokens: tokens.len(),
                    limit: context_length,
                });
            }
        }
        Ok(())
    }

    /// Position of EOT in the input rows of class `c`.
    pub fn eot_position(&self, c: usize) -> usize {
        1 + self.m + self.class_tokens[c].len()
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new();
        let t = Tensor::new(vec![self.m, self.width], self.rows.clone()).expect("context shape");
        a.insert("coop.context", t);
        for c in 0..2 {
            a.set_metadata(format!("class_name.{c}"), self.class_names[c].clone());
            let ids: Vec<String> = self.class_tokens[c].iter().map(u32::to_string).collect();
            a.set_metadata(format!("class_tokens.{c}"), ids.join(" "));
        }
        a.set_metadata("sot_id", self.sot_id.to_string());
        a.set_metadata("eot_id", self.eot_id.to_string());
        a.set_metadata("seed", self.seed.to_string());
        a.set_metadata("steps", self.steps.to_string());
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self, CoopError> {
        let t = a.tensor("coop.context")?;
        let &[m, width] = t.shape() else {
            return Err(CoopError::InvalidContext("coop.context must be rank 2".into()));
        };
        let bad = |key: &str| ArchiveError::InvalidMetadata {
            key: key.into(),
            reason: "not a token id list".into(),
        };
        let mut class_names: [String; 2] = Default::default();
        let mut class_tokens: [Vec<u32>; 2] = Default::default();
        for c in 0..2 {
            class_names[c] = a.meta(&format!("class_name.{c}"))?.to_string();
            let key = format!("class_tokens.{c}");
            class_tokens[c] = a
                .meta(&key)?
                .split_whitespace()
                .map(|s| s.parse::<u32>().map_err(|_| bad(&key)))
                .collect::<Result<_, _>>()?;
        }
        let ctx = Self {
            rows: t.data().to_vec(),
            m,
            width,
            class_names,
            class_tokens,
            sot_id: a.meta_usize("sot_id")? as u32,
            eot_id: a.meta_usize("eot_id")? as u32,
            seed: a.meta_usize("seed")? as u64,
            steps: a.meta_usize("steps")?,
        };
        if ctx.rows.iter().any(|v| !v.is_finite()) {
            return Err(CoopError::InvalidContext("non-finite value".into()));
        }
        Ok(ctx)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CoopError> {
        Ok(self.to_archive().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CoopError> {
        Self::from_archive(&TensorArchive::read(path)?)
    }
}

/// Draws the initial context rows. `archive` supplies the text width and
/// context length, `vocab` the class-name tokens.
pub fn init_context(config: &CoopConfig, vocab: &Vocabulary, archive: &TensorArchive) -> Result<ContextVectors, CoopError> {
    let enc = TextEncoder::<f32>::new(archive)?;
    let width = enc.width();
    let mut rows = vec![0.0f32; config.m_context * width];
    if config.init_std > 0.0 {
        let normal = Normal::new(0.0f32, config.init_std)
            .map_err(|e| CoopError::InvalidContext(format!("init_std: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for v in rows.iter_mut() {
            *v = normal.sample(&mut rng);
        }
    } else if config.init_std < 0.0 || config.init_std.is_nan() {
        return Err(CoopError::InvalidContext("init_std must be non-negative".into()));
    }
    let ctx = ContextVectors {
        rows,
        m: config.m_context,
        width,
        class_tokens: [vocab.encode(&config.class_names[0]), vocab.encode(&config.class_names[1])],
        class_names: config.class_names.clone(),
        sot_id: vocab.sot_id(),
        eot_id: vocab.eot_id(),
        seed: config.seed,
        steps: 0,
    };
    ctx.validate(enc.config().context_length)?;
    Ok(ctx)
}

/// Frozen text tower with the prompt layout needed to train and apply a
/// context. Generic so gradients can be checked in `f64`.
pub struct CoopPrompts<'a, T: Real = f32> {
    encoder: TextEncoder<'a, T>,
    template: [Vec<T>; 2],
    eot: [usize; 2],
    m: usize,
    scale: T,
}

impl<'a, T: Real> CoopPrompts<'a, T> {
    /// Builds the two input templates with zeroed context rows.
    pub fn new(ctx: &ContextVectors, archive: &'a TensorArchive) -> Result<Self, CoopError> {
        let encoder = TextEncoder::<T>::new(archive)?;
        let w = encoder.width();
        let n = encoder.config().context_length;
        if ctx.width != w {
            return Err(CoopError::InvalidContext(format!(
                "context width {} does not match the text tower width {w}",
                ctx.width
            )));
        }
        ctx.validate(n)?;
        let vocab_size = encoder.config().vocab_size;
        let ids = ctx.class_tokens.iter().flatten().chain([&ctx.sot_id, &ctx.eot_id]);
        if let Some(&bad) = ids.into_iter().find(|&&id| id as usize >= vocab_size) {
            return Err(CoopError::InvalidContext(format!("token id {bad} outside vocabulary")));
        }
        let row = |id: u32| T::view(encoder.token_row(id)).into_owned();
        let mut template: [Vec<T>; 2] = Default::default();
        let mut eot = [0; 2];
        for c in 0..2 {
            let mut rows = Vec::with_capacity(n * w);
            rows.extend(row(ctx.sot_id));
            rows.extend(std::iter::repeat_n(T::ZERO, ctx.m * w));
            for &id in &ctx.class_tokens[c] {
                rows.extend(row(id));
            }
            rows.extend(row(ctx.eot_id));
            let pad = row(0);
            while rows.len() < n * w {
                rows.extend(pad.iter().copied());
            }
            eot[c] = ctx.eot_position(c);
            template[c] = rows;
        }
        let scale = T::from_f64(logit_scale(archive).unwrap_or(FALLBACK_LOGIT_SCALE) as f64);
        Ok(Self {
            encoder,
            template,
            eot,
            m: ctx.m,
            scale,
        })
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// Full input rows for class `c` with `ctx` spliced in.
    pub fn input_rows(&self, ctx: &[T], c: usize) -> Vec<T> {
        let w = self.encoder.width();
        let mut rows = self.template[c].clone();
        rows[w..(1 + self.m) * w].copy_from_slice(ctx);
        rows
    }

    pub fn class_embedding(&self, ctx: &[T], c: usize) -> Result<Vec<T>, CoopError> {
        Ok(self.encoder.forward(&self.input_rows(ctx, c), self.eot[c])?)
    }

    /// Mean cross-entropy of `softmax(scale * cos)` over `batch` and its
    /// gradient with respect to the context rows.
    pub fn loss_and_grad(&self, ctx: &[T], batch: &[(&[f32], Label)]) -> Result<(T, Vec<T>), CoopError> {
        let w = self.encoder.width();
        let traced = [
            self.encoder.forward_traced(&self.input_rows(ctx, 0), self.eot[0])?,
            self.encoder.forward_traced(&self.input_rows(ctx, 1), self.eot[1])?,
        ];
        let d = traced[0].output().len();
        let inv = T::ONE / T::from_f64(batch.len() as f64);
        let mut loss = T::ZERO;
        let mut cot = [vec![T::ZERO; d], vec![T::ZERO; d]];
        for &(x, label) in batch {
            let x = T::view(x);
            let logits = [0, 1].map(|c| self.scale * crate::encoder::math::dot(&x, traced[c].output()));
            let top = logits[0].max(logits[1]);
            let e = logits.map(|l| (l - top).exp());
            let z = e[0] + e[1];
            let target = if label == Label::Cloudy { 0 } else { 1 };
            loss += (top + z.ln() - logits[target]) * inv;
            for c in 0..2 {
                let y = if c == target { T::ONE } else { T::ZERO };
                let r = (e[c] / z - y) * self.scale * inv;
                crate::encoder::math::axpy(r, &x, &mut cot[c]);
            }
        }
        let mut grad = vec![T::ZERO; self.m * w];
        for c in 0..2 {
            let g = self.encoder.vjp_traced(&traced[c], &cot[c])?;
            for (a, &b) in grad.iter_mut().zip(&g[w..(1 + self.m) * w]) {
                *a += b;
            }
        }
        Ok((loss, grad))
    }
}

/// Class embedding `c` (0 cloudy, 1 clear) for a given context.
pub fn coop_class_embedding(ctx: &ContextVectors, class_index: usize, archive: &TensorArchive) -> Result<Embedding, CoopError> {
    assert!(class_index < 2, "class index must be 0 or 1");
    let prompts = CoopPrompts::<f32>::new(ctx, archive)?;
    Ok(Embedding::new(prompts.class_embedding(&ctx.rows, class_index)?))
}

/// Both class embeddings packaged like a zero-shot prompt pair.
pub fn coop_prompt_pair(ctx: &ContextVectors, archive: &TensorArchive) -> Result<PromptPair, CoopError> {
    let prompts = CoopPrompts::<f32>::new(ctx, archive)?;
    let emb = |c| prompts.class_embedding(&ctx.rows, c).map(Embedding::new);
    let label = |c: usize| format!("[ctx x{}] {}", ctx.m, ctx.class_names[c]);
    Ok(PromptPair::from_embeddings(&label(0), &label(1), emb(0)?, emb(1)?)?)
}

pub fn classify_coop(image_emb: &Embedding, ctx: &ContextVectors, archive: &TensorArchive) -> Result<Verdict, CoopError> {
    Ok(classify_zero_shot(image_emb, &coop_prompt_pair(ctx, archive)?)?)
}

pub fn train_coop<V: AsRef<[f32]>>(
    data: &[(V, Label)],
    config: &CoopConfig,
    vocab: &Vocabulary,
    archive: &TensorArchive,
) -> Result<ContextVectors, CoopError> {
    train_coop_traced(data, config, vocab, archive).map(|(c, _)| c)
}

/// Trains and also returns the minibatch loss at every step.
pub fn train_coop_traced<V: AsRef<[f32]>>(
    data: &[(V, Label)],
    config: &CoopConfig,
    vocab: &Vocabulary,
    archive: &TensorArchive,
) -> Result<(ContextVectors, Vec<f32>), CoopError> {
    let first = data.first().ok_or(CoopError::EmptyTrainingSet)?;
    if data.iter().all(|(_, l)| *l == first.1) {
        return Err(CoopError::SingleClassTrainingSet(first.1));
    }
    let mut ctx = init_context(config, vocab, archive)?;
    let prompts = CoopPrompts::<f32>::new(&ctx, archive)?;
    let embed_dim = prompts.encoder.config().embed_dim;
    if let Some((x, _)) = data.iter().find(|(x, _)| x.as_ref().len() != embed_dim) {
        return Err(CoopError::Encoder(EncoderError::ShapeMismatch(format!(
            "image embedding has {} values, embed_dim is {embed_dim}",
            x.as_ref().len()
        ))));
    }
    let mut sampler = EpochSampler::new(data.len(), config.seed);
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let batch: Vec<(&[f32], Label)> = sampler
            .next_batch(config.batch_size)
            .into_iter()
            .map(|i| (data[i].0.as_ref(), data[i].1))
            .collect();
        let (loss, grad) = prompts.loss_and_grad(&ctx.rows, &batch)?;
        losses.push(loss);
        for (p, g) in ctx.rows.iter_mut().zip(grad) {
            *p -= config.learning_rate * g;
        }
    }
    ctx.steps = config.steps;
    ctx.validate(prompts.encoder.config().context_length)?;
    Ok((ctx, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{toy_archive, toy_vocabulary, ToyConfig};

    #[test]
    fn init_is_seeded_and_shaped() {
        let archive = toy_archive(&ToyConfig::default(), 1);
        let vocab = toy_vocabulary();
        let cfg = CoopConfig::new(4);
        let a = init_context(&cfg, &vocab, &archive).unwrap();
        assert_eq!(a, init_context(&cfg, &vocab, &archive).unwrap());
        assert_eq!(a.rows.len(), 16 * 16);
        let zero = CoopConfig { init_std: 0.0, ..cfg };
        assert!(init_context(&zero, &vocab, &archive).unwrap().rows.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_long_context_rejected() {
        let archive = toy_archive(&ToyConfig::default(), 1);
        let cfg = CoopConfig {
            m_context: 75,
            ..CoopConfig::default()
        };
        assert!(matches!(
            init_context(&cfg, &toy_vocabulary(), &archive),
            Err(CoopError::ContextTooLong { .. })
        ));
    }

    #[test]
    fn archive_round_trip() {
        let archive = toy_archive(&ToyConfig::default(), 1);
        let ctx = init_context(&CoopConfig::new(2), &toy_vocabulary(), &archive).unwrap();
        let back = ContextVectors::from_archive(&TensorArchive::from_bytes(&ctx.to_archive().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, ctx);
    }
}
