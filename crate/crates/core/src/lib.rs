//! Desk-scale knowledge-graph augmented vision-language pipeline.
//!
//! The crate is organised along the data flow:
//!
//! - [`kg`]: ingestion and interning of `relation / subject / object` triples,
//!   a binary snapshot format and a seeded synthetic graph generator.
//! - [`embed`]: text embedding providers, the exact cosine top-k triple index
//!   and the averaged per-concept feature table.
//! - [`extract`]: query-conditioned sub-graph extraction, both the ranked-triple
//!   method and a grounded-concept 2-hop baseline, plus a timing harness.
//! - [`gnn`]: the RGAT → LeakyReLU → GCN sub-graph encoder with hand-written
//!   reverse-mode gradients.
//! - [`fusion`]: token/image encoders, `[H_kg; H_img; H_lang]` fusion, a small
//!   prefix-LM decoder, greedy generation and the training loop.
//! - [`eval`]: triple/answer proximity, similarity curves, node-cap ablation and
//!   the with/without-knowledge contrast.

pub mod embed;
pub mod error;
pub mod eval;
pub mod extract;
pub mod fusion;
pub mod gnn;
pub mod gradcheck;
pub mod kg;
pub mod tensorfile;

pub use error::{Error, Result};
