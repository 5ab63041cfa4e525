use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::decoder::{decoder_nll, DecodeState, FusionInput};
use super::generate::{generate_with, Generation};
use super::ops::{embed_rows, project_image};
use super::params::{FusionConfig, FusionParams};
use super::vocab::Vocab;
use crate::embed::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::tensorfile::{read_params_into, write_params};

pub const MODEL_CHECKPOINT_MAGIC: &[u8; 4] = b"KGM1";
const TENSOR_MAGIC: &[u8; 4] = b"KGT1";
const FORMAT: &str = "model checkpoint";
const MAX_HEADER: usize = 1 << 28;

/// Vocabulary, parameters and the set of embedding rows that carry fixed
/// lexical vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyFusionModel {
    pub vocab: Vocab,
    pub params: FusionParams,
    /// `lexical[t]` marks row `t` of the embedding as provider-initialised.
    pub lexical: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: FusionConfig,
    vocab: Vocab,
    lexical: Vec<usize>,
}

impl ToyFusionModel {
    /// Randomly initialised model over `vocab`.
    pub fn new(cfg: &FusionConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        let params = FusionParams::seeded(cfg, vocab.len(), seed)?;
        let lexical = vec![false; vocab.len()];
        Ok(Self { vocab, params, lexical })
    }

    /// Overwrites every non-special embedding row with the provider's vector
    /// for that token and marks it lexical.
    pub fn with_lexical_embeddings(mut self, provider: &dyn EmbeddingProvider) -> Result<Self> {
        let d = self.params.dim();
        if provider.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: provider.dim() });
        }
        for (id, token) in self.vocab.tokens().enumerate() {
            if Vocab::is_special(id) {
                continue;
            }
            let v = provider.embed_text(token)?;
            let mut row = self.params.embed.row_mut(id);
            row.iter_mut().zip(&v).for_each(|(r, &x)| *r = x as f64);
            self.lexical[id] = true;
        }
        Ok(self)
    }

    pub fn config(&self) -> FusionConfig {
        self.params.config()
    }

    /// `H_lang` for whitespace-tokenised text.
    pub fn embed_text(&self, text: &str) -> Result<Array2<f64>> {
        self.embed_tokens(&self.vocab.encode(text)?)
    }

    pub fn embed_tokens(&self, tokens: &[usize]) -> Result<Array2<f64>> {
        embed_rows(&self.params.embed, tokens)
    }

    /// `H_img = patches · W_img`.
    pub fn project_image(&self, patches: &Array2<f64>) -> Result<Array2<f64>> {
        project_image(patches, &self.params.w_img)
    }

    pub fn nll(&self, input: &FusionInput, target: &[usize]) -> Result<f64> {
        decoder_nll(&self.params, input, target)
    }

    /// Greedy decoding from BOS.
    pub fn generate(&self, input: &FusionInput, max_len: usize) -> Result<Generation> {
        let mut state = DecodeState::new(&self.params, input)?;
        generate_with(max_len, |t| state.step(t))
    }

    /// `KGM1`, u32 header length, JSON header (config, vocabulary, lexical
    /// row ids), then a `KGT1` tensor block.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            config: self.config(),
            vocab: self.vocab.clone(),
            lexical: self.lexical.iter().enumerate().filter(|(_, &l)| l).map(|(i, _)| i).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(MODEL_CHECKPOINT_MAGIC)?;
        out.write_u32::<LittleEndian>(json.len() as u32)?;
        out.write_all(&json)?;
        write_params(out, TENSOR_MAGIC, &self.params)
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let trunc = |e: std::io::Error| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::bad_format(FORMAT, "truncated"),
            _ => Error::Io(e),
        };
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(trunc)?;
        if &magic != MODEL_CHECKPOINT_MAGIC {
            return Err(Error::bad_format(FORMAT, "bad magic"));
        }
        let len = input.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        if len > MAX_HEADER {
            return Err(Error::bad_format(FORMAT, "header too large"));
        }
        let mut json = vec![0u8; len];
        input.read_exact(&mut json).map_err(trunc)?;
        let header: Header =
            serde_json::from_slice(&json).map_err(|e| Error::bad_format(FORMAT, format!("header: {e}")))?;
        let mut model = Self::new(&header.config, header.vocab, 0)?;
        for &i in &header.lexical {
            *model
                .lexical
                .get_mut(i)
                .ok_or_else(|| Error::bad_format(FORMAT, format!("lexical row {i} outside the vocabulary")))? = true;
        }
        read_params_into(input, TENSOR_MAGIC, FORMAT, &mut model.params)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::fusion::vocab::{EOS, SEP};
    use crate::gnn::random_subgraph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(d: usize, words: &str) -> ToyFusionModel {
        let vocab = Vocab::from_texts([words]);
        ToyFusionModel::new(&FusionConfig::new(d, 5), vocab, 3).unwrap()
    }

    #[test]
    fn init_loss_is_close_to_log_vocab() {
        let words: Vec<String> = (0..400).map(|i| format!("w{i}")).collect();
        let m = model(32, &words.join(" "));
        let m = m.with_lexical_embeddings(&HashEmbedder::new(32, 1).unwrap()).unwrap();
        let v = m.vocab.len() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sg = random_subgraph(&mut rng, 5, 6, 32);
        let patches = Array2::from_elem((2, 5), 0.5);
        let prompt = m.vocab.encode("w1 w2 w3 w4").unwrap();
        let input = FusionInput { kg: Some(&sg), patches: &patches, prompt: &prompt };
        let target = [m.vocab.id("w7").unwrap(), m.vocab.id("w9").unwrap(), SEP, m.vocab.id("w3").unwrap(), EOS];
        let loss = m.nll(&input, &target).unwrap();
        assert!((loss / v.ln() - 1.0).abs() <= 0.1, "{loss} vs ln V = {}", v.ln());
    }

    #[test]
    fn embed_text_looks_up_rows() {
        let m = model(4, "a b c");
        assert_eq!(m.embed_text("").unwrap().dim(), (0, 4));
        let h = m.embed_text("b b").unwrap();
        assert_eq!(h.row(0), m.params.embed.row(m.vocab.id("b").unwrap()));
        assert_eq!(h.row(0), h.row(1));
        assert!(matches!(m.embed_text("b q"), Err(Error::UnknownToken(t)) if t == "q"));
        assert!(matches!(m.project_image(&Array2::zeros((2, 4))), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn lexical_rows_come_from_provider() {
        let p = HashEmbedder::new(8, 4).unwrap();
        let m = model(8, "x y").with_lexical_embeddings(&p).unwrap();
        assert_eq!(m.lexical, vec![false, false, false, false, true, true]);
        let x = p.embed_text("y").unwrap();
        assert!(m.params.embed.row(5).iter().zip(&x).all(|(a, &b)| *a == b as f64));
        assert!(model(6, "x").with_lexical_embeddings(&p).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let p = HashEmbedder::new(8, 4).unwrap();
        let m = model(8, "x y z").with_lexical_embeddings(&p).unwrap();
        let mut a = Vec::new();
        m.write(&mut a).unwrap();
        let back = ToyFusionModel::read(a.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut b = Vec::new();
        back.write(&mut b).unwrap();
        assert_eq!(a, b);
        assert!(ToyFusionModel::read(&a[..a.len() - 1]).is_err());
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(ToyFusionModel::read(bad.as_slice()).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let m = model(8, "x y z");
        let patches = Array2::zeros((1, 5));
        let prompt = m.vocab.encode("x y").unwrap();
        let input = FusionInput { kg: None, patches: &patches, prompt: &prompt };
        let a = m.generate(&input, 6).unwrap();
        assert_eq!(a, m.generate(&input, 6).unwrap());
        assert!(a.tokens.len() <= 6);
    }
}
