use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::DEFAULT_RELATION_CAPACITY;
use crate::tensorfile::{read_params_into, write_params, ParamSet};

pub const KG_CHECKPOINT_MAGIC: &[u8; 4] = b"KGP1";

/// Width of a relation feature row.
pub const RELATION_FEATURE_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KgEncoderConfig {
    /// Node feature width `d`.
    pub dim: usize,
    /// Width of the projected relation term inside the attention logit.
    pub attn_dim: usize,
    pub relation_capacity: usize,
    pub relation_dim: usize,
    pub leaky_slope: f64,
}

impl KgEncoderConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            attn_dim: dim,
            relation_capacity: DEFAULT_RELATION_CAPACITY,
            relation_dim: RELATION_FEATURE_DIM,
            leaky_slope: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.attn_dim == 0 || self.relation_capacity == 0 || self.relation_dim == 0 {
            return Err(Error::InvalidConfig(format!("kg encoder sizes must be positive: {self:?}")));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::InvalidConfig("leaky slope must be finite".into()));
        }
        Ok(())
    }
}

/// RGAT, relation table and GCN weights.
///
/// Row-vector convention: node states are rows, so a node transform reads
/// `z = h · w_node` and a relation projection `ρ = r · w_rel`.
#[derive(Debug, Clone, PartialEq)]
pub struct KgEncoderParams {
    /// `d × d`
    pub w_node: Array2<f64>,
    /// `relation_dim × attn_dim`
    pub w_rel: Array2<f64>,
    /// `[a_src; a_dst; a_rel]`, length `2d + attn_dim`.
    pub attn: Array1<f64>,
    /// Relation lookup table, `relation_capacity × relation_dim`.
    pub relations: Array2<f64>,
    /// Feature of the implicit self-loop relation.
    pub self_relation: Array1<f64>,
    /// `d × d`
    pub w_gcn: Array2<f64>,
    pub leaky_slope: f64,
}

fn uniform2(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let b = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-b..=b))
}

fn uniform1(rng: &mut impl Rng, len: usize, fan_in: usize) -> Array1<f64> {
    let b = 1.0 / (fan_in as f64).sqrt();
    Array1::from_shape_simple_fn(len, || rng.random_range(-b..=b))
}

impl KgEncoderParams {
    /// Uniform(±1/√fan_in) initialisation. Lookup rows use the relation
    /// width as their fan-in.
    pub fn init(cfg: &KgEncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, a, rd) = (cfg.dim, cfg.attn_dim, cfg.relation_dim);
        Ok(Self {
            w_node: uniform2(rng, d, d, d),
            w_rel: uniform2(rng, rd, a, rd),
            attn: uniform1(rng, 2 * d + a, 2 * d + a),
            relations: uniform2(rng, cfg.relation_capacity, rd, rd),
            self_relation: uniform1(rng, rd, rd),
            w_gcn: uniform2(rng, d, d, d),
            leaky_slope: cfg.leaky_slope,
        })
    }

    pub fn seeded(cfg: &KgEncoderConfig, seed: u64) -> Result<Self> {
        Self::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn config(&self) -> KgEncoderConfig {
        KgEncoderConfig {
            dim: self.w_node.nrows(),
            attn_dim: self.w_rel.ncols(),
            relation_capacity: self.relations.nrows(),
            relation_dim: self.relations.ncols(),
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_node.nrows()
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        write_params(out, KG_CHECKPOINT_MAGIC, self)
    }

    /// Loads a checkpoint whose tensor shapes must match `cfg`.
    pub fn read<R: Read>(input: R, cfg: &KgEncoderConfig) -> Result<Self> {
        let mut p = Self::seeded(cfg, 0)?;
        read_params_into(input, KG_CHECKPOINT_MAGIC, "kg checkpoint", &mut p)?;
        Ok(p)
    }
}

impl ParamSet for KgEncoderParams {
    fn tensors(&self) -> Vec<(&'static str, &[usize], &[f64])> {
        fn view<'a, D: ndarray::Dimension>(
            name: &'static str,
            a: &'a ndarray::Array<f64, D>,
        ) -> (&'static str, &'a [usize], &'a [f64]) {
            (name, a.shape(), a.as_slice().expect("standard layout"))
        }
        vec![
            view("kg.w_node", &self.w_node),
            view("kg.w_rel", &self.w_rel),
            view("kg.attn", &self.attn),
            view("kg.relations", &self.relations),
            view("kg.self_relation", &self.self_relation),
            view("kg.w_gcn", &self.w_gcn),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("kg.w_node", self.w_node.as_slice_mut().expect("standard layout")),
            ("kg.w_rel", self.w_rel.as_slice_mut().expect("standard layout")),
            ("kg.attn", self.attn.as_slice_mut().expect("standard layout")),
            ("kg.relations", self.relations.as_slice_mut().expect("standard layout")),
            ("kg.self_relation", self.self_relation.as_slice_mut().expect("standard layout")),
            ("kg.w_gcn", self.w_gcn.as_slice_mut().expect("standard layout")),
        ]
    }
}
