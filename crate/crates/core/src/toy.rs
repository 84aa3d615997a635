//! Small randomly initialized models and vocabularies.
//!
//! Every numeric test runs on these; they use the same tensor names and
//! metadata as real exported weights, so all code paths are shared.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::encoder::{EncoderConfig, TowerConfig};
use crate::tensorstore::{Tensor, TensorArchive};
use crate::tokenizer::{bytes_to_unicode, Vocabulary, END_OF_WORD};
use crate::zeroshot::{DEFAULT_NEGATIVE_PROMPT, DEFAULT_POSITIVE_PROMPT};

/// Published CLIP normalization constants.
pub const CLIP_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const CLIP_STD: [f32; 3] = [0.268_629_54, 0.261_302_6, 0.275_777_1];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig {
    pub encoder: EncoderConfig,
    /// Standard deviation of token and positional embeddings.
    pub embedding_std: f32,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self::text(16, 2, 2)
    }
}

impl ToyConfig {
    /// Toy model with the given text tower; the vision tower mirrors it.
    pub fn text(width: usize, layers: usize, heads: usize) -> Self {
        let tower = TowerConfig { width, layers, heads };
        Self {
            encoder: EncoderConfig {
                embed_dim: 16,
                context_length: 77,
                vocab_size: toy_vocabulary().size(),
                image_resolution: 32,
                patch_size: 8,
                text: tower,
                vision: tower,
            },
            embedding_std: 0.5,
        }
    }
}

/// Merge list that builds every word of the detection prompts left to right.
pub fn toy_merges() -> Vec<(String, String)> {
    let table = bytes_to_unicode();
    let mut merges: Vec<(String, String)> = Vec::new();
    let text = format!("{DEFAULT_POSITIVE_PROMPT} {DEFAULT_NEGATIVE_PROMPT}").to_lowercase();
    for word in text.split_whitespace() {
        let mut symbols: Vec<String> = word.bytes().map(|b| table[b as usize].to_string()).collect();
        if let Some(last) = symbols.last_mut() {
            last.push_str(END_OF_WORD);
        }
        while symbols.len() > 1 {
            let pair = (symbols[0].clone(), symbols[1].clone());
            if !merges.contains(&pair) {
                merges.push(pair);
            }
            let merged = format!("{}{}", symbols[0], symbols[1]);
            symbols.splice(0..2, [merged]);
        }
    }
    merges
}

pub fn toy_vocabulary() -> Vocabulary {
    Vocabulary::byte_level(toy_merges()).expect("toy merges are consistent")
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, n: usize, mean: f32, std: f32) -> Vec<f32> {
        if std == 0.0 {
            return vec![mean; n];
        }
        let d = Normal::new(mean, std).unwrap();
        (0..n).map(|_| d.sample(&mut self.rng)).collect()
    }

    fn put(&mut self, a: &mut TensorArchive, name: &str, shape: &[usize], mean: f32, std: f32) {
        let n = shape.iter().product();
        let data = self.normal(n, mean, std);
        a.insert(name, Tensor::new(shape.to_vec(), data).unwrap());
    }

    fn block(&mut self, a: &mut TensorArchive, prefix: &str, w: usize) {
        let lin = 1.0 / (w as f32).sqrt();
        let lin4 = 1.0 / (4.0 * w as f32).sqrt();
        self.put(a, &format!("{prefix}.ln_1.weight"), &[w], 1.0, 0.1);
        self.put(a, &format!("{prefix}.ln_1.bias"), &[w], 0.0, 0.1);
        self.put(a, &format!("{prefix}.attn.qkv.weight"), &[3 * w, w], 0.0, lin);
        self.put(a, &format!("{prefix}.attn.qkv.bias"), &[3 * w], 0.0, 0.05);
        self.put(a, &format!("{prefix}.attn.out.weight"), &[w, w], 0.0, lin);
        self.put(a, &format!("{prefix}.attn.out.bias"), &[w], 0.0, 0.05);
        self.put(a, &format!("{prefix}.ln_2.weight"), &[w], 1.0, 0.1);
        self.put(a, &format!("{prefix}.ln_2.bias"), &[w], 0.0, 0.1);
        self.put(a, &format!("{prefix}.mlp.fc.weight"), &[4 * w, w], 0.0, lin);
        self.put(a, &format!("{prefix}.mlp.fc.bias"), &[4 * w], 0.0, 0.05);
        self.put(a, &format!("{prefix}.mlp.proj.weight"), &[w, 4 * w], 0.0, lin4);
        self.put(a, &format!("{prefix}.mlp.proj.bias"), &[w], 0.0, 0.05);
    }
}

/// Random weights for `config`, deterministic per seed.
pub fn toy_archive(config: &ToyConfig, seed: u64) -> TensorArchive {
    let c = config.encoder;
    c.validate().expect("toy config must be valid");
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut a = TensorArchive::new();
    let tw = c.text.width;
    let vw = c.vision.width;
    let es = config.embedding_std;

    init.put(&mut a, "text.token_embedding", &[c.vocab_size, tw], 0.0, es);
    init.put(&mut a, "text.positional_embedding", &[c.context_length, tw], 0.0, es * 0.5);
    for i in 0..c.text.layers {
        init.block(&mut a, &format!("text.blocks.{i}"), tw);
    }
    init.put(&mut a, "text.ln_final.weight", &[tw], 1.0, 0.1);
    init.put(&mut a, "text.ln_final.bias", &[tw], 0.0, 0.1);
    init.put(&mut a, "text.projection", &[tw, c.embed_dim], 0.0, 1.0 / (tw as f32).sqrt());

    let p = c.patch_size;
    let g = c.grid();
    init.put(&mut a, "vision.patch_embed.weight", &[vw, 3, p, p], 0.0, 1.0 / ((3 * p * p) as f32).sqrt());
    init.put(&mut a, "vision.class_embedding", &[vw], 0.0, es);
    init.put(&mut a, "vision.positional_embedding", &[g * g + 1, vw], 0.0, es * 0.5);
    init.put(&mut a, "vision.ln_pre.weight", &[vw], 1.0, 0.1);
    init.put(&mut a, "vision.ln_pre.bias", &[vw], 0.0, 0.1);
    for i in 0..c.vision.layers {
        init.block(&mut a, &format!("vision.blocks.{i}"), vw);
    }
    init.put(&mut a, "vision.ln_post.weight", &[vw], 1.0, 0.1);
    init.put(&mut a, "vision.ln_post.bias", &[vw], 0.0, 0.1);
    init.put(&mut a, "vision.projection", &[vw, c.embed_dim], 0.0, 1.0 / (vw as f32).sqrt());

    a.insert("logit_scale", Tensor::from_vec(vec![100f32.ln()]));
    a.insert("preprocess.mean", Tensor::from_vec(CLIP_MEAN.to_vec()));
    a.insert("preprocess.std", Tensor::from_vec(CLIP_STD.to_vec()));

    a.set_metadata("model_id", "toy-clip");
    c.write_metadata(&mut a);
    a
}
