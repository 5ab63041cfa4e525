use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::KgEncoderParams;
use crate::error::{Error, Result};
use crate::extract::Subgraph;
use crate::kg::RelationId;
use crate::tensorfile::ParamSet;

pub(crate) fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub(crate) fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// One incoming attention weight of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionWeight {
    pub src: usize,
    /// `None` for the implicit self-loop.
    pub relation: Option<RelationId>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSubgraph {
    /// `p × d`
    pub h_kg: Array2<f64>,
    /// Incoming attention of every node: its sub-graph in-edges in edge
    /// order, then the self-loop.
    pub attention: Vec<Vec<AttentionWeight>>,
}

/// Gradients of a scalar loss with respect to the encoder parameters and the
/// node features.
#[derive(Debug, Clone, PartialEq)]
pub struct KgGradients {
    pub params: KgEncoderParams,
    pub features: Array2<f64>,
}

struct Incoming {
    src: usize,
    /// Row into the projected relation table; the last row is the self-loop.
    rel_row: usize,
    relation: Option<RelationId>,
    logit: f64,
    alpha: f64,
}

struct RgatPass {
    z: Array2<f64>,
    rho: Array2<f64>,
    incoming: Vec<Vec<Incoming>>,
    out: Array2<f64>,
}

fn check_inputs(sg: &Subgraph, params: &KgEncoderParams) -> Result<()> {
    let d = params.dim();
    if sg.node_features.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: sg.node_features.ncols() });
    }
    if sg.node_features.nrows() != sg.nodes.len() {
        return Err(Error::DimensionMismatch { expected: sg.nodes.len(), got: sg.node_features.nrows() });
    }
    let capacity = params.relations.nrows();
    for e in &sg.edges {
        if e.relation.index() >= capacity {
            return Err(Error::RelationOutOfRange { relation: e.relation.index(), capacity });
        }
        if e.src >= sg.nodes.len() || e.dst >= sg.nodes.len() {
            return Err(Error::InvalidConfig(format!("edge {}->{} outside {} nodes", e.src, e.dst, sg.nodes.len())));
        }
    }
    Ok(())
}

/// Relation rows followed by the self-relation, projected by `w_rel`.
fn projected_relations(params: &KgEncoderParams) -> Array2<f64> {
    let mut all = params.relations.clone();
    all.push_row(params.self_relation.view()).expect("self relation width matches table");
    all.dot(&params.w_rel)
}

fn rgat_pass(sg: &Subgraph, params: &KgEncoderParams) -> Result<RgatPass> {
    check_inputs(sg, params)?;
    let p = sg.nodes.len();
    let d = params.dim();
    let self_row = params.relations.nrows();
    let z = sg.node_features.dot(&params.w_node);
    let rho = projected_relations(params);
    let a_src = params.attn.slice(ndarray::s![..d]);
    let a_dst = params.attn.slice(ndarray::s![d..2 * d]);
    let a_rel = params.attn.slice(ndarray::s![2 * d..]);
    let src_term: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&a_src)).collect();
    let dst_term: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&a_dst)).collect();
    let rel_term: Vec<f64> = rho.rows().into_iter().map(|r| r.dot(&a_rel)).collect();

    let mut incoming: Vec<Vec<Incoming>> = (0..p).map(|_| Vec::new()).collect();
    let mut push = |src: usize, dst: usize, rel_row: usize, relation: Option<RelationId>| {
        let logit = leaky(src_term[src] + dst_term[dst] + rel_term[rel_row], params.leaky_slope);
        incoming[dst].push(Incoming { src, rel_row, relation, logit, alpha: 0.0 });
    };
    for e in &sg.edges {
        push(e.src, e.dst, e.relation.index(), Some(e.relation));
    }
    for j in 0..p {
        push(j, j, self_row, None);
    }

    let mut out = Array2::zeros((p, d));
    for (j, list) in incoming.iter_mut().enumerate() {
        let max = list.iter().map(|e| e.logit).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for e in list.iter_mut() {
            e.alpha = (e.logit - max).exp();
            total += e.alpha;
        }
        let mut row = out.row_mut(j);
        for e in list.iter_mut() {
            e.alpha /= total;
            row.scaled_add(e.alpha, &z.row(e.src));
        }
    }
    Ok(RgatPass { z, rho, incoming, out })
}

/// Relational attention layer: for each node, a softmax over its incoming
/// edges (plus a self-loop) of LeakyReLU additive logits, averaging the
/// transformed source states.
pub fn rgat_forward(sg: &Subgraph, params: &KgEncoderParams) -> Result<Array2<f64>> {
    Ok(rgat_pass(sg, params)?.out)
}

/// `D̃^{-1/2}(A+I)D̃^{-1/2}` for the undirected, relation-agnostic adjacency.
/// Parallel edges and reflexive triples do not change `A`.
pub fn normalized_adjacency(sg: &Subgraph) -> Array2<f64> {
    let p = sg.nodes.len();
    let mut a = Array2::<f64>::eye(p);
    for e in &sg.edges {
        if e.src != e.dst {
            a[[e.src, e.dst]] = 1.0;
            a[[e.dst, e.src]] = 1.0;
        }
    }
    let deg = a.sum_axis(Axis(1));
    for ((i, j), v) in a.indexed_iter_mut() {
        if *v != 0.0 {
            *v /= (deg[i] * deg[j]).sqrt();
        }
    }
    a
}

/// Graph convolution `Â · h · W`.
pub fn gcn_forward(h: &Array2<f64>, sg: &Subgraph, params: &KgEncoderParams) -> Result<Array2<f64>> {
    if h.dim() != (sg.nodes.len(), params.dim()) {
        return Err(Error::DimensionMismatch { expected: sg.nodes.len() * params.dim(), got: h.len() });
    }
    Ok(normalized_adjacency(sg).dot(h).dot(&params.w_gcn))
}

/// RGAT, LeakyReLU, GCN.
pub fn kg_encode(sg: &Subgraph, params: &KgEncoderParams) -> Result<EncodedSubgraph> {
    let pass = rgat_pass(sg, params)?;
    let act = pass.out.mapv(|x| leaky(x, params.leaky_slope));
    let h_kg = gcn_forward(&act, sg, params)?;
    let attention = pass
        .incoming
        .iter()
        .map(|list| {
            list.iter().map(|e| AttentionWeight { src: e.src, relation: e.relation, weight: e.alpha }).collect()
        })
        .collect();
    Ok(EncodedSubgraph { h_kg, attention })
}

/// Reverse-mode gradients of `sum(upstream ⊙ kg_encode(sg).h_kg)`.
pub fn kg_encode_backward(sg: &Subgraph, params: &KgEncoderParams, upstream: &Array2<f64>) -> Result<KgGradients> {
    let pass = rgat_pass(sg, params)?;
    let (p, d) = (sg.nodes.len(), params.dim());
    if upstream.dim() != (p, d) {
        return Err(Error::DimensionMismatch { expected: p * d, got: upstream.len() });
    }
    let slope = params.leaky_slope;
    let mut grads = params.zeros_like();

    // GCN: out = Â · act · W
    let adj = normalized_adjacency(sg);
    let act = pass.out.mapv(|x| leaky(x, slope));
    grads.w_gcn.assign(&adj.dot(&act).t().dot(upstream));
    let d_act = adj.t().dot(&upstream.dot(&params.w_gcn.t()));

    // LeakyReLU between the layers
    let mut d_out = d_act;
    d_out.zip_mut_with(&pass.out, |g, &x| *g *= leaky_grad(x, slope));

    // RGAT
    let a_src = params.attn.slice(ndarray::s![..d]);
    let a_dst = params.attn.slice(ndarray::s![d..2 * d]);
    let a_rel = params.attn.slice(ndarray::s![2 * d..]);
    let mut d_z = Array2::<f64>::zeros((p, d));
    let mut d_rho = Array2::<f64>::zeros(pass.rho.dim());
    let mut d_attn = Array1::<f64>::zeros(params.attn.len());
    for (j, list) in pass.incoming.iter().enumerate() {
        let g_j = d_out.row(j);
        let d_alpha: Vec<f64> = list.iter().map(|e| g_j.dot(&pass.z.row(e.src))).collect();
        let mean: f64 = list.iter().zip(&d_alpha).map(|(e, da)| e.alpha * da).sum();
        for (e, &da) in list.iter().zip(&d_alpha) {
            d_z.row_mut(e.src).scaled_add(e.alpha, &g_j);
            let pre = pass.z.row(e.src).dot(&a_src) + pass.z.row(j).dot(&a_dst) + pass.rho.row(e.rel_row).dot(&a_rel);
            let d_pre = e.alpha * (da - mean) * leaky_grad(pre, slope);
            if d_pre == 0.0 {
                continue;
            }
            accumulate(&mut d_attn, 0, pass.z.row(e.src), d_pre);
            accumulate(&mut d_attn, d, pass.z.row(j), d_pre);
            accumulate(&mut d_attn, 2 * d, pass.rho.row(e.rel_row), d_pre);
            d_z.row_mut(e.src).scaled_add(d_pre, &a_src);
            d_z.row_mut(j).scaled_add(d_pre, &a_dst);
            d_rho.row_mut(e.rel_row).scaled_add(d_pre, &a_rel);
        }
    }
    grads.attn = d_attn;

    // ρ = [relations; self_relation] · w_rel
    let mut all_rel = params.relations.clone();
    all_rel.push_row(params.self_relation.view()).expect("self relation width matches table");
    grads.w_rel.assign(&all_rel.t().dot(&d_rho));
    let d_all_rel = d_rho.dot(&params.w_rel.t());
    let cap = params.relations.nrows();
    grads.relations.assign(&d_all_rel.slice(ndarray::s![..cap, ..]));
    grads.self_relation.assign(&d_all_rel.row(cap));

    // z = x · w_node
    grads.w_node.assign(&sg.node_features.t().dot(&d_z));
    let features = d_z.dot(&params.w_node.t());
    Ok(KgGradients { params: grads, features })
}

fn accumulate(dst: &mut Array1<f64>, offset: usize, src: ArrayView1<f64>, scale: f64) {
    dst.slice_mut(ndarray::s![offset..offset + src.len()]).scaled_add(scale, &src);
}
