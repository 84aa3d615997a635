//! Byte-level BPE tokenizer producing fixed-length sequences for the text encoder.
//!
//! Text is NFC-normalized, whitespace-collapsed and lowercased, split with the
//! pre-tokenization pattern carried in the vocabulary bundle, mapped to the
//! byte-to-unicode alphabet, then merged by rank. The last symbol of every word
//! carries the `</w>` suffix.
//!
//! Bundle file (`CGV1`, integers little-endian):
//!
//! ```text
//! "CGV1"
//! u32 pattern length, pattern bytes
//! u32 token count, then per token in id order: u32 length, UTF-8 bytes
//! u32 merge count, then per merge: u32 length, left bytes, u32 length, right bytes
//! u64 FNV-1a checksum of every preceding byte
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::tensorstore::fnv1a64;

pub const CONTEXT_LENGTH: usize = 77;
pub const SOT_TOKEN: &str = "<|startoftext|>";
pub const EOT_TOKEN: &str = "<|endoftext|>";
pub const END_OF_WORD: &str = "</w>";
pub const BUNDLE_MAGIC: &[u8; 4] = b"CGV1";

/// Pre-tokenization pattern of the published CLIP tokenizer. Bundles carry
/// their own copy; this is what [`Vocabulary::byte_level`] writes.
pub const CLIP_PATTERN: &str = r"<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("corrupt vocabulary bundle: {0}")]
    CorruptVocab(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn corrupt(msg: impl Into<String>) -> VocabError {
    VocabError::CorruptVocab(msg.into())
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    token_to_id: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    merge_ranks: HashMap<(String, String), usize>,
    pattern: String,
    splitter: Regex,
    byte_encoder: [char; 256],
    sot_id: u32,
    eot_id: u32,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.merges == other.merges && self.pattern == other.pattern
    }
}

/// Exactly `context_length` ids; `ids[length..]` are zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub length: usize,
}

impl TokenSequence {
    /// Position of the end-of-text token.
    pub fn eot_position(&self) -> usize {
        self.length - 1
    }
}

/// GPT-2 style reversible byte to printable-character map.
pub fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let printable = |b: u32| {
        (b'!' as u32..=b'~' as u32).contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b)
    };
    let mut extra = 0;
    for b in 0..256u32 {
        table[b as usize] = if printable(b) {
            char::from_u32(b).unwrap()
        } else {
            extra += 1;
            char::from_u32(255 + extra).unwrap()
        };
    }
    table
}

/// Base alphabet in the order the reference vocabulary lists it.
fn base_alphabet() -> Vec<char> {
    let table = bytes_to_unicode();
    let mut order: Vec<u8> = (0..=255u8).filter(|&b| (table[b as usize] as u32) < 256).collect();
    order.extend((0..=255u8).filter(|&b| (table[b as usize] as u32) >= 256));
    order.into_iter().map(|b| table[b as usize]).collect()
}

impl Vocabulary {
    /// Builds a vocabulary from explicit parts. Token ids follow list order.
    pub fn from_parts(
        tokens: Vec<String>,
        merges: Vec<(String, String)>,
        pattern: String,
    ) -> Result<Self, VocabError> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if token_to_id.insert(t.clone(), i as u32).is_some() {
                return Err(corrupt(format!("duplicate token `{t}`")));
            }
        }
        let sot_id = *token_to_id
            .get(SOT_TOKEN)
            .ok_or_else(|| corrupt("missing start-of-text token"))?;
        let eot_id = *token_to_id
            .get(EOT_TOKEN)
            .ok_or_else(|| corrupt("missing end-of-text token"))?;
        let byte_encoder = bytes_to_unicode();
        for c in byte_encoder {
            let s = c.to_string();
            if !token_to_id.contains_key(&s) || !token_to_id.contains_key(&(s.clone() + END_OF_WORD)) {
                return Err(corrupt(format!("byte symbol `{c}` missing from token list")));
            }
        }
        let mut merge_ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.iter().enumerate() {
            merge_ranks.entry(pair.clone()).or_insert(rank);
        }
        let splitter = RegexBuilder::new(&pattern)
            .case_insensitive(true)
            .build()
            .map_err(|e| corrupt(format!("bad pre-tokenization pattern: {e}")))?;
        Ok(Self {
            tokens,
            token_to_id,
            merges,
            merge_ranks,
            pattern,
            splitter,
            byte_encoder,
            sot_id,
            eot_id,
        })
    }

    /// Reference layout: byte symbols, byte symbols with `</w>`, one token per
    /// merge, then SOT and EOT.
    pub fn byte_level(merges: Vec<(String, String)>) -> Result<Self, VocabError> {
        let base = base_alphabet();
        let mut tokens: Vec<String> = base.iter().map(|c| c.to_string()).collect();
        tokens.extend(base.iter().map(|c| format!("{c}{END_OF_WORD}")));
        tokens.extend(merges.iter().map(|(a, b)| format!("{a}{b}")));
        tokens.push(SOT_TOKEN.to_string());
        tokens.push(EOT_TOKEN.to_string());
        Self::from_parts(tokens, merges, CLIP_PATTERN.to_string())
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn sot_id(&self) -> u32 {
        self.sot_id
    }

    pub fn eot_id(&self) -> u32 {
        self.eot_id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// Content ids for `text`, without SOT/EOT and without truncation.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let cleaned = clean_text(text);
        let mut ids = Vec::new();
        for m in self.splitter.find_iter(&cleaned) {
            let word: Vec<String> = m
                .as_str()
                .bytes()
                .map(|b| self.byte_encoder[b as usize].to_string())
                .collect();
            for symbol in self.bpe(word) {
                match self.token_to_id.get(&symbol) {
                    Some(&id) => ids.push(id),
                    None => self.push_byte_fallback(&symbol, &mut ids),
                }
            }
        }
        ids
    }

    fn bpe(&self, mut word: Vec<String>) -> Vec<String> {
        if let Some(last) = word.last_mut() {
            last.push_str(END_OF_WORD);
        }
        loop {
            let best = word
                .windows(2)
                .filter_map(|w| self.merge_ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && &word[i] == left && &word[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut word[i]));
                    i += 1;
                }
            }
            word = merged;
            if word.len() == 1 {
                break;
            }
        }
        word
    }

    // A merged symbol absent from the token list decomposes into byte symbols,
    // all of which exist by construction.
    fn push_byte_fallback(&self, symbol: &str, ids: &mut Vec<u32>) {
        let (body, eow) = match symbol.strip_suffix(END_OF_WORD) {
            Some(b) => (b, true),
            None => (symbol, false),
        };
        let chars: Vec<char> = body.chars().collect();
        for (i, c) in chars.iter().enumerate() {
            let mut s = c.to_string();
            if eow && i + 1 == chars.len() {
                s.push_str(END_OF_WORD);
            }
            if let Some(&id) = self.token_to_id.get(&s) {
                ids.push(id);
            }
        }
    }

    pub fn to_bundle_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        put_str(&mut out, &self.pattern);
        out.extend_from_slice(&(self.tokens.len() as u32).to_le_bytes());
        for t in &self.tokens {
            put_str(&mut out, t);
        }
        out.extend_from_slice(&(self.merges.len() as u32).to_le_bytes());
        for (a, b) in &self.merges {
            put_str(&mut out, a);
            put_str(&mut out, b);
        }
        let checksum = fnv1a64(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        out
    }

    pub fn from_bundle_bytes(bytes: &[u8]) -> Result<Self, VocabError> {
        if bytes.len() < 12 || &bytes[..4] != BUNDLE_MAGIC {
            return Err(corrupt("missing CGV1 magic"));
        }
        let body = &bytes[..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        let mut cur = Cursor { buf: body, pos: 4 };
        let pattern = cur.string()?;
        let n_tokens = cur.u32()? as usize;
        let mut tokens = Vec::with_capacity(n_tokens.min(1 << 20));
        for _ in 0..n_tokens {
            tokens.push(cur.string()?);
        }
        let n_merges = cur.u32()? as usize;
        let mut merges = Vec::with_capacity(n_merges.min(1 << 20));
        for _ in 0..n_merges {
            let a = cur.string()?;
            let b = cur.string()?;
            merges.push((a, b));
        }
        if cur.pos != body.len() {
            return Err(corrupt("trailing bytes after merge list"));
        }
        if fnv1a64(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        Self::from_parts(tokens, merges, pattern)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VocabError> {
        fs::write(path, self.to_bundle_bytes())?;
        Ok(())
    }
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary, VocabError> {
    Vocabulary::from_bundle_bytes(&fs::read(path)?)
}

/// Tokenizes into the standard 77-position sequence.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenSequence {
    tokenize_to_length(text, vocab, CONTEXT_LENGTH)
}

pub fn tokenize_to_length(text: &str, vocab: &Vocabulary, context_length: usize) -> TokenSequence {
    assert!(context_length >= 2, "context length must fit SOT and EOT");
    let mut content = vocab.encode(text);
    content.truncate(context_length - 2);
    let mut ids = Vec::with_capacity(context_length);
    ids.push(vocab.sot_id());
    ids.extend_from_slice(&content);
    ids.push(vocab.eot_id());
    let length = ids.len();
    ids.resize(context_length, 0);
    TokenSequence { ids, length }
}

fn clean_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u32(&mut self) -> Result<u32, VocabError> {
        let end = self.pos + 4;
        if end > self.buf.len() {
            return Err(corrupt("truncated bundle"));
        }
        let v = u32::from_le_bytes(self.buf[self.pos..end].try_into().unwrap());
        self.pos = end;
        Ok(v)
    }

    fn string(&mut self) -> Result<String, VocabError> {
        let n = self.u32()? as usize;
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("truncated bundle"))?;
        let s = std::str::from_utf8(&self.buf[self.pos..end])
            .map_err(|_| corrupt("token is not UTF-8"))?
            .to_string();
        self.pos = end;
        Ok(s)
    }
}
