//! Zero-shot detection: compare an image embedding with the embeddings of
//! one cloudy and one clear text prompt.

use thiserror::Error;

use crate::encoder::{Embedding, EncoderError, TextEncoder};
use crate::tensorstore::TensorArchive;
use crate::tokenizer::{tokenize_to_length, Vocabulary};
use crate::verdict::Verdict;

pub const DEFAULT_POSITIVE_PROMPT: &str = "This is a satellite image with clouds";
pub const DEFAULT_NEGATIVE_PROMPT: &str = "This is a satellite image with clear sky";

#[derive(Debug, Error)]
pub enum ZeroShotError {
    #[error("embedding is not unit-norm")]
    NotNormalized,
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptPair {
    pub positive_text: String,
    pub negative_text: String,
    pub positive_emb: Embedding,
    pub negative_emb: Embedding,
}

impl PromptPair {
    /// Tokenizes and encodes both prompts.
    pub fn encode(
        positive: &str,
        negative: &str,
        vocab: &Vocabulary,
        archive: &TensorArchive,
    ) -> Result<Self, ZeroShotError> {
        let enc = TextEncoder::<f32>::new(archive)?;
        let ctx = enc.config().context_length;
        let embed = |text: &str| -> Result<Embedding, EncoderError> {
            let tokens = tokenize_to_length(text, vocab, ctx);
            let rows = enc.embed_tokens(&tokens)?;
            Ok(Embedding::new(enc.forward(&rows.rows, tokens.eot_position())?))
        };
        Self::from_embeddings(positive, negative, embed(positive)?, embed(negative)?)
    }

    pub fn default_prompts(vocab: &Vocabulary, archive: &TensorArchive) -> Result<Self, ZeroShotError> {
        Self::encode(DEFAULT_POSITIVE_PROMPT, DEFAULT_NEGATIVE_PROMPT, vocab, archive)
    }

    pub fn from_embeddings(
        positive_text: &str,
        negative_text: &str,
        positive_emb: Embedding,
        negative_emb: Embedding,
    ) -> Result<Self, ZeroShotError> {
        if !positive_emb.is_normalized() || !negative_emb.is_normalized() {
            return Err(ZeroShotError::NotNormalized);
        }
        if positive_emb.dim() != negative_emb.dim() {
            return Err(ZeroShotError::DimensionMismatch(positive_emb.dim(), negative_emb.dim()));
        }
        Ok(Self {
            positive_text: positive_text.to_string(),
            negative_text: negative_text.to_string(),
            positive_emb,
            negative_emb,
        })
    }

    /// Same prompts with the classes exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            positive_text: self.negative_text.clone(),
            negative_text: self.positive_text.clone(),
            positive_emb: self.negative_emb.clone(),
            negative_emb: self.positive_emb.clone(),
        }
    }
}

/// Cosine similarity of two unit vectors.
pub fn similarity(a: &Embedding, b: &Embedding) -> Result<f32, ZeroShotError> {
    if !a.is_normalized() || !b.is_normalized() {
        return Err(ZeroShotError::NotNormalized);
    }
    if a.dim() != b.dim() {
        return Err(ZeroShotError::DimensionMismatch(a.dim(), b.dim()));
    }
    let s: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum();
    Ok(s.clamp(-1.0, 1.0) as f32)
}

pub fn classify_zero_shot(image_emb: &Embedding, prompts: &PromptPair) -> Result<Verdict, ZeroShotError> {
    let pos = similarity(image_emb, &prompts.positive_emb)?;
    let neg = similarity(image_emb, &prompts.negative_emb)?;
    Ok(Verdict::from_scores(pos, neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verdict::Label;

    fn unit(i: usize, n: usize, sign: f32) -> Embedding {
        let mut v = vec![0.0; n];
        v[i] = sign;
        Embedding::new(v)
    }

    #[test]
    fn similarity_extremes() {
        let a = unit(0, 8, 1.0);
        assert_eq!(similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(similarity(&a, &unit(1, 8, 1.0)).unwrap(), 0.0);
        assert_eq!(similarity(&a, &unit(0, 8, -1.0)).unwrap(), -1.0);
    }

    #[test]
    fn unnormalized_rejected() {
        let a = unit(0, 8, 1.0);
        let b = Embedding::new(vec![2.0; 8]);
        assert!(matches!(similarity(&a, &b), Err(ZeroShotError::NotNormalized)));
    }

    #[test]
    fn classify_against_prompt_embeddings() {
        let pos = unit(0, 8, 1.0);
        let neg = unit(1, 8, 1.0);
        let pair = PromptPair::from_embeddings("c", "s", pos.clone(), neg.clone()).unwrap();
        let v = classify_zero_shot(&pos, &pair).unwrap();
        assert_eq!(v.label, Label::Cloudy);
        assert_eq!(v.score_positive, 1.0);
        assert_eq!(classify_zero_shot(&neg, &pair).unwrap().label, Label::Clear);
        // orthogonal to both: exact tie
        assert_eq!(classify_zero_shot(&unit(2, 8, 1.0), &pair).unwrap().label, Label::Cloudy);
    }
}
