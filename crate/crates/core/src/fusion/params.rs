use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{KgEncoderConfig, KgEncoderParams};
use crate::tensorfile::ParamSet;

/// Number of segment embeddings: KG, image, language, generated text.
pub const NUM_SEGMENTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Model width `d`; must equal the node feature width.
    pub dim: usize,
    pub img_dim: usize,
    pub layers: usize,
    /// Hidden width of each block's feed-forward layer.
    pub ff_dim: usize,
    /// Largest position index inside one segment.
    pub max_positions: usize,
    pub kg: KgEncoderConfig,
}

impl FusionConfig {
    pub fn new(dim: usize, img_dim: usize) -> Self {
        Self { dim, img_dim, layers: 2, ff_dim: 4 * dim, max_positions: 64, kg: KgEncoderConfig::new(dim) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.img_dim == 0 || self.ff_dim == 0 || self.max_positions == 0 {
            return Err(Error::InvalidConfig(format!("fusion sizes must be positive: {self:?}")));
        }
        if self.kg.dim != self.dim {
            return Err(Error::InvalidConfig(format!(
                "kg encoder width {} differs from model width {}",
                self.kg.dim, self.dim
            )));
        }
        self.kg.validate()
    }
}

/// One pre-norm transformer block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w_1: Array2<f64>,
    pub b_1: Array1<f64>,
    pub w_2: Array2<f64>,
    pub b_2: Array1<f64>,
}

/// Every trainable tensor of the fusion model.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// `|vocab| × d`, also the output projection.
    pub embed: Array2<f64>,
    /// `max_positions × d`, shared by the image, language and output segments.
    pub positions: Array2<f64>,
    /// `NUM_SEGMENTS × d`
    pub segments: Array2<f64>,
    /// `d_img × d`
    pub w_img: Array2<f64>,
    pub blocks: Vec<BlockParams>,
    pub lnf_gain: Array1<f64>,
    pub lnf_bias: Array1<f64>,
    /// Natural log of the output logit multiplier, length 1.
    pub logit_scale: Array1<f64>,
    pub kg: KgEncoderParams,
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let b = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-b..=b))
}

fn normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

impl BlockParams {
    fn init(cfg: &FusionConfig, rng: &mut impl Rng) -> Self {
        let (d, f) = (cfg.dim, cfg.ff_dim);
        Self {
            ln1_gain: Array1::ones(d),
            ln1_bias: Array1::zeros(d),
            w_q: uniform(rng, d, d, d),
            w_k: uniform(rng, d, d, d),
            w_v: uniform(rng, d, d, d),
            w_o: uniform(rng, d, d, d),
            ln2_gain: Array1::ones(d),
            ln2_bias: Array1::zeros(d),
            w_1: uniform(rng, d, f, d),
            b_1: Array1::zeros(f),
            w_2: uniform(rng, f, d, f),
            b_2: Array1::zeros(d),
        }
    }
}

impl FusionParams {
    /// Random initialisation: token rows ~ N(0, 1/d) (unit expected norm),
    /// position and segment rows ~ N(0, 0.01/d), dense weights
    /// uniform(±1/√fan_in), norms at identity, logit multiplier 1/2 so the
    /// initial output distribution is close to uniform.
    pub fn init(cfg: &FusionConfig, vocab_size: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let unit = 1.0 / (d as f64).sqrt();
        Ok(Self {
            embed: normal(rng, vocab_size, d, unit),
            positions: normal(rng, cfg.max_positions, d, 0.1 * unit),
            segments: normal(rng, NUM_SEGMENTS, d, 0.1 * unit),
            w_img: uniform(rng, cfg.img_dim, d, cfg.img_dim),
            blocks: (0..cfg.layers).map(|_| BlockParams::init(cfg, rng)).collect(),
            lnf_gain: Array1::ones(d),
            lnf_bias: Array1::zeros(d),
            logit_scale: Array1::from_elem(1, 0.5f64.ln()),
            kg: KgEncoderParams::init(&cfg.kg, rng)?,
        })
    }

    pub fn seeded(cfg: &FusionConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        Self::init(cfg, vocab_size, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn config(&self) -> FusionConfig {
        FusionConfig {
            dim: self.embed.ncols(),
            img_dim: self.w_img.nrows(),
            layers: self.blocks.len(),
            ff_dim: self.blocks.first().map_or(4 * self.embed.ncols(), |b| b.w_1.ncols()),
            max_positions: self.positions.nrows(),
            kg: self.kg.config(),
        }
    }

    pub fn dim(&self) -> usize {
        self.embed.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.nrows()
    }
}

fn view<'a, D: ndarray::Dimension>(
    name: &'static str,
    a: &'a ndarray::Array<f64, D>,
) -> (&'static str, &'a [usize], &'a [f64]) {
    (name, a.shape(), a.as_slice().expect("standard layout"))
}

impl ParamSet for FusionParams {
    fn tensors(&self) -> Vec<(&'static str, &[usize], &[f64])> {
        let mut v = vec![
            view("embed", &self.embed),
            view("positions", &self.positions),
            view("segments", &self.segments),
            view("w_img", &self.w_img),
        ];
        for b in &self.blocks {
            v.push(view("dec.ln1_gain", &b.ln1_gain));
            v.push(view("dec.ln1_bias", &b.ln1_bias));
            v.push(view("dec.w_q", &b.w_q));
            v.push(view("dec.w_k", &b.w_k));
            v.push(view("dec.w_v", &b.w_v));
            v.push(view("dec.w_o", &b.w_o));
            v.push(view("dec.ln2_gain", &b.ln2_gain));
            v.push(view("dec.ln2_bias", &b.ln2_bias));
            v.push(view("dec.w_1", &b.w_1));
            v.push(view("dec.b_1", &b.b_1));
            v.push(view("dec.w_2", &b.w_2));
            v.push(view("dec.b_2", &b.b_2));
        }
        v.push(view("dec.lnf_gain", &self.lnf_gain));
        v.push(view("dec.lnf_bias", &self.lnf_bias));
        v.push(view("dec.logit_scale", &self.logit_scale));
        v.extend(self.kg.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        fn m<'a, D: ndarray::Dimension>(
            name: &'static str,
            a: &'a mut ndarray::Array<f64, D>,
        ) -> (&'static str, &'a mut [f64]) {
            (name, a.as_slice_mut().expect("standard layout"))
        }
        let mut v = vec![
            m("embed", &mut self.embed),
            m("positions", &mut self.positions),
            m("segments", &mut self.segments),
            m("w_img", &mut self.w_img),
        ];
        for b in &mut self.blocks {
            v.push(m("dec.ln1_gain", &mut b.ln1_gain));
            v.push(m("dec.ln1_bias", &mut b.ln1_bias));
            v.push(m("dec.w_q", &mut b.w_q));
            v.push(m("dec.w_k", &mut b.w_k));
            v.push(m("dec.w_v", &mut b.w_v));
            v.push(m("dec.w_o", &mut b.w_o));
            v.push(m("dec.ln2_gain", &mut b.ln2_gain));
            v.push(m("dec.ln2_bias", &mut b.ln2_bias));
            v.push(m("dec.w_1", &mut b.w_1));
            v.push(m("dec.b_1", &mut b.b_1));
            v.push(m("dec.w_2", &mut b.w_2));
            v.push(m("dec.b_2", &mut b.b_2));
        }
        v.push(m("dec.lnf_gain", &mut self.lnf_gain));
        v.push(m("dec.lnf_bias", &mut self.lnf_bias));
        v.push(m("dec.logit_scale", &mut self.logit_scale));
        v.extend(self.kg.tensors_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traversal_orders_agree() {
        let cfg = FusionConfig::new(8, 3);
        let mut p = FusionParams::seeded(&cfg, 11, 1).unwrap();
        let names: Vec<_> = p.tensors().iter().map(|t| (t.0, t.2.len())).collect();
        let names_mut: Vec<_> = p.tensors_mut().iter().map(|t| (t.0, t.1.len())).collect();
        assert_eq!(names, names_mut);
        assert_eq!(p.config(), cfg);
        assert_eq!(p.embed.dim(), (11, 8));
        assert!(p.is_finite());
    }

    #[test]
    fn rejects_mismatched_kg_width() {
        let mut cfg = FusionConfig::new(8, 3);
        cfg.kg = KgEncoderConfig::new(6);
        assert!(FusionParams::seeded(&cfg, 5, 0).is_err());
    }
}
