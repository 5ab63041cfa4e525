//! Prefix-LM decoder: forward pass, teacher-forced loss, exact reverse-mode
//! gradients and an incremental decoder for generation.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::ops::{embed_rows, fuse, project_image};
use super::params::{BlockParams, FusionParams};
use super::vocab::BOS;
use crate::error::{Error, Result};
use crate::extract::Subgraph;
use crate::gnn::{kg_encode, kg_encode_backward};
use crate::tensorfile::ParamSet;

const LN_EPS: f64 = 1e-5;

pub const SEG_KG: usize = 0;
pub const SEG_IMG: usize = 1;
pub const SEG_LANG: usize = 2;
pub const SEG_OUT: usize = 3;

/// Everything the decoder conditions on.
#[derive(Debug, Clone, Copy)]
pub struct FusionInput<'a> {
    /// `None`, or a sub-graph without nodes, gives an empty KG block.
    pub kg: Option<&'a Subgraph>,
    /// `m × d_img` patch features.
    pub patches: &'a Array2<f64>,
    /// Language token ids: question, options, context.
    pub prompt: &'a [usize],
}

/// Row counts of the three prefix blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefixLayout {
    pub kg: usize,
    pub img: usize,
    pub lang: usize,
}

impl PrefixLayout {
    pub fn len(&self) -> usize {
        self.kg + self.img + self.lang
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn kg_block<'a>(input: &FusionInput<'a>) -> Option<&'a Subgraph> {
    input.kg.filter(|sg| sg.num_nodes() > 0)
}

fn check_positions(params: &FusionParams, len: usize, segment: &str) -> Result<()> {
    if len > params.positions.nrows() {
        return Err(Error::InvalidConfig(format!(
            "{segment} segment has {len} rows but only {} positions exist",
            params.positions.nrows()
        )));
    }
    Ok(())
}

fn add_positions(params: &FusionParams, rows: &mut ndarray::ArrayViewMut2<f64>, segment: usize, with_positions: bool) {
    let seg = params.segments.row(segment);
    for (j, mut r) in rows.rows_mut().into_iter().enumerate() {
        r += &seg;
        if with_positions {
            r += &params.positions.row(j);
        }
    }
}

/// `[H_kg; H_img; H_lang]` plus segment embeddings, and position embeddings
/// on the image and language rows. KG rows carry no position: node order is
/// arbitrary.
pub(crate) fn prefix_rows(params: &FusionParams, input: &FusionInput) -> Result<(Array2<f64>, PrefixLayout)> {
    let d = params.dim();
    let h_kg = match kg_block(input) {
        Some(sg) => kg_encode(sg, &params.kg)?.h_kg,
        None => Array2::zeros((0, d)),
    };
    let h_img = project_image(input.patches, &params.w_img)?;
    let h_lang = embed_rows(&params.embed, input.prompt)?;
    check_positions(params, h_img.nrows(), "image")?;
    check_positions(params, h_lang.nrows(), "language")?;
    let layout = PrefixLayout { kg: h_kg.nrows(), img: h_img.nrows(), lang: h_lang.nrows() };
    let mut x = fuse(&h_kg, &h_img, &h_lang)?;
    let (a, b) = (layout.kg, layout.kg + layout.img);
    add_positions(params, &mut x.slice_mut(s![..a, ..]), SEG_KG, false);
    add_positions(params, &mut x.slice_mut(s![a..b, ..]), SEG_IMG, true);
    add_positions(params, &mut x.slice_mut(s![b.., ..]), SEG_LANG, true);
    Ok((x, layout))
}

/// Embedded decoder inputs `[BOS, y_1, …, y_{T-1}]` for targets `y_1..y_T`.
fn output_rows(params: &FusionParams, target: &[usize]) -> Result<Array2<f64>> {
    let inputs: Vec<usize> = std::iter::once(BOS).chain(target[..target.len() - 1].iter().copied()).collect();
    check_positions(params, inputs.len(), "output")?;
    let mut x = embed_rows(&params.embed, &inputs)?;
    add_positions(params, &mut x.view_mut(), SEG_OUT, true);
    Ok(x)
}

// ---------------------------------------------------------------------------
// Elementwise pieces

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn ln_forward(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut r, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = r.sum() / d;
        r -= mean;
        let var = r.dot(&r) / d;
        *is = 1.0 / (var + LN_EPS).sqrt();
        r *= *is;
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, inv_std })
}

/// Returns `dx` and accumulates the gain/bias gradients.
fn ln_backward(
    dy: &Array2<f64>,
    c: &LnCache,
    gain: &Array1<f64>,
    d_gain: &mut Array1<f64>,
    d_bias: &mut Array1<f64>,
    scale: f64,
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    d_gain.scaled_add(scale, &(dy * &c.xhat).sum_axis(Axis(0)));
    d_bias.scaled_add(scale, &dy.sum_axis(Axis(0)));
    let mut dx = dy * gain;
    for ((mut r, xh), &is) in dx.rows_mut().into_iter().zip(c.xhat.rows()).zip(&c.inv_std) {
        let m1 = r.sum() / d;
        let m2 = r.dot(&xh) / d;
        r.zip_mut_with(&xh, |g, &h| *g = is * (*g - m1 - h * m2));
    }
    dx
}

/// Softmax over `row[..lim]`, zeroing the rest.
fn masked_softmax_row(row: &mut [f64], lim: usize) {
    let max = row[..lim].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in &mut row[..lim] {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in &mut row[..lim] {
        *v /= sum;
    }
    row[lim..].fill(0.0);
}

/// Row `i` attends to columns `0..lim(i)`: the whole prefix for prefix rows,
/// the prefix plus everything up to itself for output rows.
fn attention_limit(i: usize, prefix: usize) -> usize {
    if i < prefix {
        prefix
    } else {
        i + 1
    }
}

// ---------------------------------------------------------------------------
// Blocks

pub(crate) struct BlockCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    pub(crate) k: Array2<f64>,
    pub(crate) v: Array2<f64>,
    probs: Array2<f64>,
    o: Array2<f64>,
    ln2: LnCache,
    b: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

fn block_forward(blk: &BlockParams, x: &Array2<f64>, prefix: usize) -> (Array2<f64>, BlockCache) {
    let n = x.nrows();
    let scale = 1.0 / (x.ncols() as f64).sqrt();
    let (a, ln1) = ln_forward(x, &blk.ln1_gain, &blk.ln1_bias);
    let q = a.dot(&blk.w_q);
    let k = a.dot(&blk.w_k);
    let v = a.dot(&blk.w_v);
    let mut probs = q.dot(&k.t()) * scale;
    for i in 0..n {
        let row = probs.row_mut(i).into_slice().expect("standard layout");
        masked_softmax_row(row, attention_limit(i, prefix));
    }
    let o = probs.dot(&v);
    let x_mid = x + &o.dot(&blk.w_o);
    let (b, ln2) = ln_forward(&x_mid, &blk.ln2_gain, &blk.ln2_bias);
    let u = b.dot(&blk.w_1) + &blk.b_1;
    let g = u.mapv(gelu);
    let out = &x_mid + &g.dot(&blk.w_2) + &blk.b_2;
    (out, BlockCache { ln1, a, q, k, v, probs, o, ln2, b, u, g })
}

fn block_backward(blk: &BlockParams, c: &BlockCache, dy: &Array2<f64>, gb: &mut BlockParams, w: f64) -> Array2<f64> {
    let scale = 1.0 / (dy.ncols() as f64).sqrt();
    // feed-forward
    general_mat_mul(w, &c.g.t(), dy, 1.0, &mut gb.w_2);
    gb.b_2.scaled_add(w, &dy.sum_axis(Axis(0)));
    let mut du = dy.dot(&blk.w_2.t());
    du.zip_mut_with(&c.u, |g, &u| *g *= gelu_grad(u));
    general_mat_mul(w, &c.b.t(), &du, 1.0, &mut gb.w_1);
    gb.b_1.scaled_add(w, &du.sum_axis(Axis(0)));
    let db = du.dot(&blk.w_1.t());
    let d_mid = dy + &ln_backward(&db, &c.ln2, &blk.ln2_gain, &mut gb.ln2_gain, &mut gb.ln2_bias, w);

    // attention
    general_mat_mul(w, &c.o.t(), &d_mid, 1.0, &mut gb.w_o);
    let d_o = d_mid.dot(&blk.w_o.t());
    let d_p = d_o.dot(&c.v.t());
    let d_v = c.probs.t().dot(&d_o);
    let mut d_s = d_p;
    for (mut ds, p) in d_s.rows_mut().into_iter().zip(c.probs.rows()) {
        let dot = ds.dot(&p);
        ds.zip_mut_with(&p, |g, &pi| *g = pi * (*g - dot) * scale);
    }
    let d_q = d_s.dot(&c.k);
    let d_k = d_s.t().dot(&c.q);
    general_mat_mul(w, &c.a.t(), &d_q, 1.0, &mut gb.w_q);
    general_mat_mul(w, &c.a.t(), &d_k, 1.0, &mut gb.w_k);
    general_mat_mul(w, &c.a.t(), &d_v, 1.0, &mut gb.w_v);
    let d_a = d_q.dot(&blk.w_q.t()) + d_k.dot(&blk.w_k.t()) + d_v.dot(&blk.w_v.t());
    d_mid + ln_backward(&d_a, &c.ln1, &blk.ln1_gain, &mut gb.ln1_gain, &mut gb.ln1_bias, w)
}

pub(crate) struct Forward {
    pub(crate) blocks: Vec<BlockCache>,
    pub(crate) out: Array2<f64>,
}

pub(crate) fn decoder_forward(params: &FusionParams, x0: Array2<f64>, prefix: usize) -> Forward {
    let mut x = x0;
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for blk in &params.blocks {
        let (y, c) = block_forward(blk, &x, prefix);
        blocks.push(c);
        x = y;
    }
    Forward { blocks, out: x }
}

// ---------------------------------------------------------------------------
// Output head

struct Head {
    lnf: LnCache,
    hf: Array2<f64>,
    /// Scaled logits, `T × V`.
    logits: Array2<f64>,
}

fn head_forward(params: &FusionParams, h: &Array2<f64>) -> Head {
    let (hf, lnf) = ln_forward(h, &params.lnf_gain, &params.lnf_bias);
    let logits = hf.dot(&params.embed.t()) * params.logit_scale[0].exp();
    Head { lnf, hf, logits }
}

fn log_softmax_at(row: ndarray::ArrayView1<f64>, target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row[target] - lse
}

fn check_target(params: &FusionParams, target: &[usize]) -> Result<()> {
    if target.is_empty() {
        return Err(Error::EmptyReference);
    }
    let size = params.vocab_size();
    match target.iter().find(|&&t| t >= size) {
        Some(&id) => Err(Error::TokenOutOfRange { id, size }),
        None => Ok(()),
    }
}

/// Full sequence forward for teacher forcing.
struct TeacherForced {
    layout: PrefixLayout,
    fwd: Forward,
    head: Head,
}

fn teacher_forced(params: &FusionParams, input: &FusionInput, target: &[usize]) -> Result<TeacherForced> {
    check_target(params, target)?;
    let (prefix, layout) = prefix_rows(params, input)?;
    let out = output_rows(params, target)?;
    let mut x0 = prefix;
    x0.append(Axis(0), out.view()).expect("equal widths");
    let p = layout.len();
    let fwd = decoder_forward(params, x0, p);
    let head = head_forward(params, &fwd.out.slice(s![p.., ..]).to_owned());
    Ok(TeacherForced { layout, fwd, head })
}

/// Mean over target positions of `−log p(y_t | prefix, y_<t)`.
pub fn decoder_nll(params: &FusionParams, input: &FusionInput, target: &[usize]) -> Result<f64> {
    let tf = teacher_forced(params, input, target)?;
    let total: f64 = target.iter().enumerate().map(|(t, &y)| -log_softmax_at(tf.head.logits.row(t), y)).sum();
    Ok(total / target.len() as f64)
}

/// Per-position logits under teacher forcing, `T × V`.
pub fn teacher_forced_logits(params: &FusionParams, input: &FusionInput, target: &[usize]) -> Result<Array2<f64>> {
    Ok(teacher_forced(params, input, target)?.head.logits)
}

/// Loss and gradient; `weight · ∂loss` is added into `grads`.
pub fn decoder_nll_backward(
    params: &FusionParams,
    input: &FusionInput,
    target: &[usize],
    grads: &mut FusionParams,
    weight: f64,
) -> Result<f64> {
    let tf = teacher_forced(params, input, target)?;
    let t_len = target.len();
    let inv_t = 1.0 / t_len as f64;

    // d loss / d logits = (softmax − onehot) / T
    let mut d_logits = tf.head.logits.clone();
    let mut total = 0.0;
    for (t, mut row) in d_logits.rows_mut().into_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        total -= (row[target[t]] / sum).ln();
        row.mapv_inplace(|v| v / sum * inv_t);
        row[target[t]] -= inv_t;
    }
    let loss = total * inv_t;

    let scale = params.logit_scale[0].exp();
    grads.logit_scale[0] += weight * (&d_logits * &tf.head.logits).sum();
    general_mat_mul(weight * scale, &d_logits.t(), &tf.head.hf, 1.0, &mut grads.embed);
    let d_hf = d_logits.dot(&params.embed) * scale;
    let d_h = ln_backward(&d_hf, &tf.head.lnf, &params.lnf_gain, &mut grads.lnf_gain, &mut grads.lnf_bias, weight);

    let p = tf.layout.len();
    let mut dx = Array2::zeros(tf.fwd.out.dim());
    dx.slice_mut(s![p.., ..]).assign(&d_h);
    for ((blk, cache), gb) in params.blocks.iter().zip(&tf.fwd.blocks).zip(grads.blocks.iter_mut()).rev() {
        dx = block_backward(blk, cache, &dx, gb, weight);
    }

    scatter_inputs(params, input, target, &tf.layout, &dx, grads, weight)?;
    Ok(loss)
}

/// Routes the gradient of the decoder input rows back to the embeddings,
/// `w_img` and the KG encoder.
fn scatter_inputs(
    params: &FusionParams,
    input: &FusionInput,
    target: &[usize],
    layout: &PrefixLayout,
    dx: &Array2<f64>,
    grads: &mut FusionParams,
    w: f64,
) -> Result<()> {
    let (a, b, c) = (layout.kg, layout.kg + layout.img, layout.len());
    let seg_rows = |seg: usize, rows: ArrayView2<f64>, positions: bool, grads: &mut FusionParams| {
        grads.segments.row_mut(seg).scaled_add(w, &rows.sum_axis(Axis(0)));
        if positions {
            for (j, r) in rows.rows().into_iter().enumerate() {
                grads.positions.row_mut(j).scaled_add(w, &r);
            }
        }
    };

    let d_kg = dx.slice(s![..a, ..]);
    seg_rows(SEG_KG, d_kg, false, grads);
    if let Some(sg) = kg_block(input) {
        let kg = kg_encode_backward(sg, &params.kg, &d_kg.to_owned())?;
        grads.kg.add_scaled(&kg.params, w);
    }

    let d_img = dx.slice(s![a..b, ..]);
    seg_rows(SEG_IMG, d_img, true, grads);
    general_mat_mul(w, &input.patches.t(), &d_img, 1.0, &mut grads.w_img);

    let d_lang = dx.slice(s![b..c, ..]);
    seg_rows(SEG_LANG, d_lang, true, grads);
    for (&tok, r) in input.prompt.iter().zip(d_lang.rows()) {
        grads.embed.row_mut(tok).scaled_add(w, &r);
    }

    let d_out = dx.slice(s![c.., ..]);
    seg_rows(SEG_OUT, d_out, true, grads);
    let inputs = std::iter::once(BOS).chain(target[..target.len() - 1].iter().copied());
    for (tok, r) in inputs.zip(d_out.rows()) {
        grads.embed.row_mut(tok).scaled_add(w, &r);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Incremental decoding

/// Key/value cache over the prefix and the tokens fed so far.
pub struct DecodeState<'p> {
    params: &'p FusionParams,
    keys: Vec<Array2<f64>>,
    values: Vec<Array2<f64>>,
    fed: usize,
}

impl<'p> DecodeState<'p> {
    /// Runs the prefix once; its states never depend on generated tokens.
    pub fn new(params: &'p FusionParams, input: &FusionInput) -> Result<Self> {
        let (x0, layout) = prefix_rows(params, input)?;
        let fwd = decoder_forward(params, x0, layout.len());
        Ok(Self {
            params,
            keys: fwd.blocks.iter().map(|c| c.k.clone()).collect(),
            values: fwd.blocks.iter().map(|c| c.v.clone()).collect(),
            fed: 0,
        })
    }

    /// Number of output tokens consumed so far.
    pub fn fed(&self) -> usize {
        self.fed
    }

    /// Feeds one token and returns the next-token logits.
    pub fn step(&mut self, token: usize) -> Result<Array1<f64>> {
        let params = self.params;
        let size = params.vocab_size();
        if token >= size {
            return Err(Error::TokenOutOfRange { id: token, size });
        }
        check_positions(params, self.fed + 1, "output")?;
        let d = params.dim();
        let scale = 1.0 / (d as f64).sqrt();
        let mut x = params.embed.row(token).to_owned() + params.positions.row(self.fed) + params.segments.row(SEG_OUT);
        for (l, blk) in params.blocks.iter().enumerate() {
            let row = x.view().insert_axis(Axis(0)).to_owned();
            let (a, _) = ln_forward(&row, &blk.ln1_gain, &blk.ln1_bias);
            let q = a.dot(&blk.w_q);
            let k = a.dot(&blk.w_k);
            let v = a.dot(&blk.w_v);
            self.keys[l].append(Axis(0), k.view()).expect("equal widths");
            self.values[l].append(Axis(0), v.view()).expect("equal widths");
            let mut scores = (self.keys[l].dot(&q.row(0)) * scale).to_vec();
            let n = scores.len();
            masked_softmax_row(&mut scores, n);
            let o = Array1::from(scores).dot(&self.values[l]);
            x = x + o.dot(&blk.w_o);
            let row = x.view().insert_axis(Axis(0)).to_owned();
            let (b, _) = ln_forward(&row, &blk.ln2_gain, &blk.ln2_bias);
            let g = (b.dot(&blk.w_1) + &blk.b_1).mapv(gelu);
            x = x + g.dot(&blk.w_2).row(0) + &blk.b_2;
        }
        self.fed += 1;
        let head = head_forward(params, &x.insert_axis(Axis(0)));
        Ok(head.logits.row(0).to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::params::FusionConfig;
    use crate::fusion::vocab::{EOS, SEP};
    use crate::gnn::random_subgraph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64, d: usize, v: usize) -> FusionParams {
        let mut cfg = FusionConfig::new(d, 3);
        cfg.ff_dim = 2 * d;
        cfg.max_positions = 16;
        let mut p = FusionParams::seeded(&cfg, v, seed).unwrap();
        // Perturb everything away from the symmetric init so every gradient
        // path is exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for (_, t) in p.tensors_mut() {
            t.iter_mut().for_each(|x| *x += rng.random_range(-0.3..0.3));
        }
        p
    }

    #[test]
    fn gelu_matches_finite_difference() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn incremental_decode_matches_full_forward() {
        let p = setup(3, 8, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sg = random_subgraph(&mut rng, 4, 6, 8);
        let patches = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64 * 0.1 - 0.2);
        let prompt = [5, 6, 7, 5];
        let input = FusionInput { kg: Some(&sg), patches: &patches, prompt: &prompt };
        let target = [9, 3, 11, 2];
        let full = teacher_forced_logits(&p, &input, &target).unwrap();
        let mut st = DecodeState::new(&p, &input).unwrap();
        let mut fed = BOS;
        for (t, &y) in target.iter().enumerate() {
            let row = st.step(fed).unwrap();
            for (a, b) in row.iter().zip(full.row(t)) {
                assert!((a - b).abs() < 1e-10, "step {t}: {a} vs {b}");
            }
            fed = y;
        }
    }

    #[test]
    fn nll_of_single_token_is_log_softmax() {
        let p = setup(5, 4, 8);
        let patches = Array2::zeros((1, 3));
        let input = FusionInput { kg: None, patches: &patches, prompt: &[4, 5] };
        let logits = teacher_forced_logits(&p, &input, &[6]).unwrap();
        let row = logits.row(0);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        let expected = -(row[6].exp() / z).ln();
        assert!((decoder_nll(&p, &input, &[6]).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(decoder_nll(&p, &input, &[]), Err(Error::EmptyReference)));
    }

    #[test]
    fn nll_equals_log_of_probability_product() {
        let p = setup(6, 6, 12);
        let patches = Array2::from_elem((2, 3), 0.3);
        let prompt = [4, 7];
        let input = FusionInput { kg: None, patches: &patches, prompt: &prompt };
        let target = [5, 3, 8, 2];
        // Product of per-step probabilities from the incremental decoder.
        let mut st = DecodeState::new(&p, &input).unwrap();
        let mut prod = 1.0;
        let mut fed = BOS;
        for &y in &target {
            let l = st.step(fed).unwrap();
            let z: f64 = l.iter().map(|v| v.exp()).sum();
            prod *= l[y].exp() / z;
            fed = y;
        }
        let expected = -prod.ln() / target.len() as f64;
        assert!((decoder_nll(&p, &input, &target).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn causality_of_output_positions() {
        let p = setup(7, 6, 12);
        let patches = Array2::from_elem((1, 3), -0.1);
        let input = FusionInput { kg: None, patches: &patches, prompt: &[4, 5, 6] };
        let a = [7, 8, 9, 10, 2];
        let mut b = a;
        b[2] = 11;
        let la = teacher_forced_logits(&p, &input, &a).unwrap();
        let lb = teacher_forced_logits(&p, &input, &b).unwrap();
        // Logits at t condition on y_<t, so t ≤ 2 are unchanged.
        for t in 0..=2 {
            assert!(la.row(t).iter().zip(lb.row(t)).all(|(x, y)| (x - y).abs() < 1e-12));
        }
        for t in 3..5 {
            assert_ne!(la.row(t), lb.row(t));
        }
    }

    #[test]
    fn prefix_rows_do_not_see_outputs() {
        let p = setup(8, 6, 12);
        let patches = Array2::from_elem((1, 3), 0.2);
        let input = FusionInput { kg: None, patches: &patches, prompt: &[4, 5] };
        let (x0, layout) = prefix_rows(&p, &input).unwrap();
        let alone = decoder_forward(&p, x0.clone(), layout.len()).out;
        let mut with_out = x0;
        with_out.append(Axis(0), output_rows(&p, &[6, 7, 2]).unwrap().view()).unwrap();
        let joint = decoder_forward(&p, with_out, layout.len()).out;
        let head = joint.slice(s![..layout.len(), ..]);
        assert!(alone.iter().zip(head.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn full_model_gradient_matches_finite_differences() {
        let p = setup(9, 8, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let sg = random_subgraph(&mut rng, 3, 4, 8);
        let patches = Array2::from_shape_simple_fn((2, 3), || rng.random_range(-1.0..1.0));
        let prompt = [4, 9, 6, 12];
        let input = FusionInput { kg: Some(&sg), patches: &patches, prompt: &prompt };
        let target = [7, 5, SEP, 13, EOS];
        let mut grads = p.zeros_like();
        let nll = decoder_nll_backward(&p, &input, &target, &mut grads, 1.0).unwrap();
        assert!((nll - decoder_nll(&p, &input, &target).unwrap()).abs() < 1e-12);
        let report = crate::gradcheck::check_gradients(&p, &grads, 1e-4, |q| decoder_nll(q, &input, &target).unwrap());
        for g in &report {
            assert!(g.max_rel_error <= 1e-3, "{}: {}", g.name, g.max_rel_error);
        }
        assert!(report.iter().any(|g| g.name.starts_with("kg.")));
    }

    #[test]
    fn backward_accumulates_with_weight() {
        let p = setup(11, 6, 12);
        let patches = Array2::from_elem((1, 3), 0.4);
        let input = FusionInput { kg: None, patches: &patches, prompt: &[4, 5] };
        let mut once = p.zeros_like();
        decoder_nll_backward(&p, &input, &[6, EOS], &mut once, 1.0).unwrap();
        let mut twice = p.zeros_like();
        decoder_nll_backward(&p, &input, &[6, EOS], &mut twice, 0.5).unwrap();
        decoder_nll_backward(&p, &input, &[6, EOS], &mut twice, 1.5).unwrap();
        for ((_, _, a), (_, _, b)) in once.tensors().into_iter().zip(twice.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| (2.0 * x - y).abs() < 1e-12));
        }
    }
}
