//! Cloud presence detection for satellite image tiles with a CLIP-style
//! vision-language model.

pub mod cli;
pub mod coop;
pub mod encoder;
pub mod eval;
pub mod ingest;
pub mod parity;
pub mod pipeline;
pub mod probe;
pub mod sampler;
pub mod tensorstore;
pub mod tokenizer;
pub mod toy;
pub mod verdict;
pub mod zeroshot;
