//! Hierarchical attention fusion inside one modality.
//!
//! Each object node is updated from three sources: attention over its
//! object neighbors (multi-head, heads averaged), the mean of its adjacent
//! relation features, and the mean of its attached attributes. A two-way
//! softmax over the learned scalars `alpha`/`beta` mixes the object branch
//! against the (unnormalized) sum of the other two.
//!
//! The global agent node is appended as the last row. It starts as all
//! ones, is linked to every object node, and has no relations or
//! attributes, so only its object branch contributes.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{init_uniform, join, MapFn, Mlp, WalkFn};
use crate::numerics::{Matrix, Tape, Var, LEAKY_SLOPE};
use crate::scene_graph::SceneGraph;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead<T = Matrix> {
    /// `d × d` projection applied to node rows.
    pub weight: T,
    /// First half of the attention vector, scores the updated node (`d × 1`).
    pub attn_self: T,
    /// Second half of the attention vector, scores the neighbor (`d × 1`).
    pub attn_neighbor: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntraFusionParams<T = Matrix> {
    pub heads: Vec<AttentionHead<T>>,
    pub relation_mlp: Mlp<T>,
    pub attribute_mlp: Mlp<T>,
    /// Object-branch logit (`1 × 1`).
    pub alpha: T,
    /// Relation/attribute-branch logit (`1 × 1`).
    pub beta: T,
}

impl<T> IntraFusionParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut MapFn<'_, T, U>) -> Result<IntraFusionParams<U>> {
        let heads = self
            .heads
            .iter()
            .enumerate()
            .map(|(k, h)| {
                let p = join(prefix, &format!("heads.{k}"));
                Ok(AttentionHead {
                    weight: f(join(&p, "weight"), &h.weight)?,
                    attn_self: f(join(&p, "attn_self"), &h.attn_self)?,
                    attn_neighbor: f(join(&p, "attn_neighbor"), &h.attn_neighbor)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(IntraFusionParams {
            heads,
            relation_mlp: self.relation_mlp.map(&join(prefix, "relation_mlp"), f)?,
            attribute_mlp: self.attribute_mlp.map(&join(prefix, "attribute_mlp"), f)?,
            alpha: f(join(prefix, "alpha"), &self.alpha)?,
            beta: f(join(prefix, "beta"), &self.beta)?,
        })
    }

    pub fn walk_mut(&mut self, prefix: &str, f: &mut WalkFn<'_, T>) {
        for (k, h) in self.heads.iter_mut().enumerate() {
            let p = join(prefix, &format!("heads.{k}"));
            f(join(&p, "weight"), &mut h.weight);
            f(join(&p, "attn_self"), &mut h.attn_self);
            f(join(&p, "attn_neighbor"), &mut h.attn_neighbor);
        }
        self.relation_mlp.walk_mut(&join(prefix, "relation_mlp"), f);
        self.attribute_mlp.walk_mut(&join(prefix, "attribute_mlp"), f);
        f(join(prefix, "alpha"), &mut self.alpha);
        f(join(prefix, "beta"), &mut self.beta);
    }
}

impl IntraFusionParams<Matrix> {
    pub fn init(rng: &mut impl Rng, d: usize, heads: usize, alpha: f64, beta: f64) -> Self {
        let heads = (0..heads)
            .map(|_| AttentionHead {
                weight: init_uniform(rng, d, d, d),
                attn_self: init_uniform(rng, d, 1, 2 * d),
                attn_neighbor: init_uniform(rng, d, 1, 2 * d),
            })
            .collect();
        Self {
            heads,
            relation_mlp: Mlp::init(rng, d, d, d),
            attribute_mlp: Mlp::init(rng, d, d, d),
            alpha: Matrix::scalar(alpha),
            beta: Matrix::scalar(beta),
        }
    }

    pub fn dim(&self) -> usize {
        self.relation_mlp.input_dim()
    }

    pub fn check(&self, d: usize) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::Contract("intra fusion needs at least one head".into()));
        }
        for (k, h) in self.heads.iter().enumerate() {
            if h.weight.shape() != (d, d) || h.attn_self.shape() != (d, 1) || h.attn_neighbor.shape() != (d, 1) {
                return Err(Error::Shape {
                    op: "intra_fusion",
                    detail: format!("head {k} does not match dimension {d}"),
                });
            }
        }
        self.relation_mlp.check("relation_mlp", d, d)?;
        self.attribute_mlp.check("attribute_mlp", d, d)?;
        for (name, m) in [("alpha", &self.alpha), ("beta", &self.beta)] {
            if m.shape() != (1, 1) || !m.is_finite() {
                return Err(Error::Contract(format!("{name} must be a finite scalar")));
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, prefix: &str) -> Result<IntraFusionParams<Var>> {
        self.map(prefix, &mut |name, m| tape.param(name, m.clone()))
    }

    /// Object-branch weight `e^α / (e^α + e^β)`.
    pub fn fusion_ratio(&self) -> f64 {
        fusion_weights(self.alpha.get(0, 0), self.beta.get(0, 0)).0
    }
}

/// `(object weight, relation+attribute weight)` of the two-way softmax.
pub fn fusion_weights(alpha: f64, beta: f64) -> (f64, f64) {
    // Complementing the smaller weight makes the pair sum to exactly 1.
    if alpha >= beta {
        let w_ctx = 1.0 / (1.0 + (alpha - beta).exp());
        (1.0 - w_ctx, w_ctx)
    } else {
        let w_obj = 1.0 / (1.0 + (beta - alpha).exp());
        (w_obj, 1.0 - w_obj)
    }
}

/// Per-graph constants for the fusion: the agent-augmented start features,
/// the neighbor mask, and the relation/attribute means.
#[derive(Clone, Debug)]
pub struct FusionGraph {
    nodes: usize,
    initial: Matrix,
    mask: Arc<[bool]>,
    relation_mean: Matrix,
    relation_present: Matrix,
    attribute_mean: Matrix,
    attribute_present: Matrix,
}

fn incidence_means(n: usize, features: &Matrix, incidence: &[Vec<usize>]) -> (Matrix, Matrix) {
    let d = features.cols();
    let mut mean = Matrix::zeros(n + 1, d);
    let mut present = Matrix::zeros(n + 1, d);
    for (i, list) in incidence.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let inv = 1.0 / list.len() as f64;
        for &r in list {
            for (dst, v) in mean.row_mut(i).iter_mut().zip(features.row(r)) {
                *dst += v * inv;
            }
        }
        present.row_mut(i).fill(1.0);
    }
    (mean, present)
}

impl FusionGraph {
    pub fn new(g: &SceneGraph) -> Self {
        let n = g.node_count();
        let d = g.dim();
        let mut initial = Matrix::zeros(n + 1, d);
        for i in 0..n {
            initial.row_mut(i).copy_from_slice(g.node_features().row(i));
        }
        initial.row_mut(n).copy_from_slice(g.agent_init());

        let size = n + 1;
        let mut mask = vec![false; size * size];
        for i in 0..n {
            for j in 0..n {
                mask[i * size + j] = i == j || g.is_adjacent(i, j);
            }
            mask[i * size + n] = true;
            mask[n * size + i] = true;
        }
        mask[n * size + n] = true;

        let (relation_mean, relation_present) = incidence_means(n, g.relation_features(), g.rel_incidence());
        let (attribute_mean, attribute_present) = incidence_means(n, g.attribute_features(), g.attr_incidence());
        Self {
            nodes: n,
            initial,
            mask: mask.into(),
            relation_mean,
            relation_present,
            attribute_mean,
            attribute_present,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.initial.cols()
    }

    /// `[node features; agent_init]`.
    pub fn initial(&self) -> &Matrix {
        &self.initial
    }

    /// Row-major `(n+1) × (n+1)` neighbor mask, self-loops included.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

fn head_attention(tape: &mut Tape, h: Var, mask: &Arc<[bool]>, head: &AttentionHead<Var>) -> Result<(Var, Var)> {
    let wh = tape.matmul(h, head.weight)?;
    let s_self = tape.matmul(wh, head.attn_self)?;
    let s_nb = tape.matmul(wh, head.attn_neighbor)?;
    let s_nb = tape.transpose(s_nb)?;
    let logits = tape.outer_sum(s_self, s_nb)?;
    let logits = tape.leaky_relu(logits, LEAKY_SLOPE)?;
    let weights = tape.masked_row_softmax(logits, mask.clone())?;
    Ok((weights, wh))
}

/// Object layer on a tape: `ELU(mean_k Σ_j α^k_ij W^k h_j)` over neighbor sets.
pub fn object_layer_on(tape: &mut Tape, h: Var, mask: &Arc<[bool]>, p: &IntraFusionParams<Var>) -> Result<Var> {
    let mut total: Option<Var> = None;
    for head in &p.heads {
        let (weights, wh) = head_attention(tape, h, mask, head)?;
        let out = tape.matmul(weights, wh)?;
        total = Some(match total {
            None => out,
            Some(acc) => tape.add(acc, out)?,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("intra fusion needs at least one head".into()))?;
    let mean = tape.scale(total, 1.0 / p.heads.len() as f64)?;
    tape.elu(mean)
}

fn context_branch_on(tape: &mut Tape, mean: &Matrix, present: &Matrix, mlp: &Mlp<Var>) -> Result<Var> {
    let x = tape.constant(mean.clone());
    let y = mlp.apply(tape, x)?;
    let keep = tape.constant(present.clone());
    tape.hadamard(y, keep)
}

/// Two-way softmax mixing of the three branch outputs on a tape.
pub fn layer_fusion_on(tape: &mut Tape, obj: Var, rel: Var, att: Var, alpha: Var, beta: Var) -> Result<Var> {
    let logits = tape.concat_cols(&[alpha, beta])?;
    let w = tape.row_softmax(logits)?;
    let w_obj = tape.slice_cols(w, 0, 1)?;
    let w_ctx = tape.slice_cols(w, 1, 1)?;
    let ctx = tape.add(rel, att)?;
    let ctx = tape.scale_by(ctx, w_ctx)?;
    let obj = tape.scale_by(obj, w_obj)?;
    tape.add(ctx, obj)
}

/// Fused node rows (`n × d`) and the agent row (`1 × d`) on a tape.
pub fn intra_fuse_on(tape: &mut Tape, g: &FusionGraph, p: &IntraFusionParams<Var>) -> Result<(Var, Var)> {
    let h = tape.constant(g.initial.clone());
    let obj = object_layer_on(tape, h, &g.mask, p)?;
    let rel = context_branch_on(tape, &g.relation_mean, &g.relation_present, &p.relation_mlp)?;
    let att = context_branch_on(tape, &g.attribute_mean, &g.attribute_present, &p.attribute_mlp)?;
    let fused = layer_fusion_on(tape, obj, rel, att, p.alpha, p.beta)?;
    let nodes = tape.slice_rows(fused, 0, g.nodes)?;
    let agent = tape.slice_rows(fused, g.nodes, 1)?;
    Ok((nodes, agent))
}

fn checked(g: &SceneGraph, p: &IntraFusionParams) -> Result<FusionGraph> {
    p.check(g.dim())?;
    Ok(FusionGraph::new(g))
}

/// Object layer over `h`, which holds one row per node plus the agent row.
pub fn object_layer(g: &SceneGraph, h: &Matrix, p: &IntraFusionParams) -> Result<Matrix> {
    let fg = checked(g, p)?;
    if h.shape() != fg.initial.shape() {
        return Err(Error::Dimension {
            op: "object_layer",
            left: h.shape(),
            right: fg.initial.shape(),
        });
    }
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, "")?;
    let hv = tape.constant(h.clone());
    let out = object_layer_on(&mut tape, hv, &fg.mask, &bound)?;
    Ok(tape.value(out).clone())
}

/// Attention weights of every head, `(n+1) × (n+1)` each.
pub fn attention_weights(g: &SceneGraph, h: &Matrix, p: &IntraFusionParams) -> Result<Vec<Matrix>> {
    let fg = checked(g, p)?;
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, "")?;
    let hv = tape.constant(h.clone());
    bound
        .heads
        .iter()
        .map(|head| {
            let (w, _) = head_attention(&mut tape, hv, &fg.mask, head)?;
            Ok(tape.value(w).clone())
        })
        .collect()
}

fn context_layer(g: &SceneGraph, p: &IntraFusionParams, relations: bool) -> Result<Matrix> {
    let fg = checked(g, p)?;
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, "")?;
    let out = if relations {
        context_branch_on(&mut tape, &fg.relation_mean, &fg.relation_present, &bound.relation_mlp)?
    } else {
        context_branch_on(&mut tape, &fg.attribute_mean, &fg.attribute_present, &bound.attribute_mlp)?
    };
    let nodes = tape.slice_rows(out, 0, fg.nodes)?;
    Ok(tape.value(nodes).clone())
}

/// Relation branch per object node; nodes without relations get a zero row.
pub fn relation_layer(g: &SceneGraph, p: &IntraFusionParams) -> Result<Matrix> {
    context_layer(g, p, true)
}

/// Attribute branch per object node; nodes without attributes get a zero row.
pub fn attribute_layer(g: &SceneGraph, p: &IntraFusionParams) -> Result<Matrix> {
    context_layer(g, p, false)
}

pub fn layer_fusion(h_obj: &Matrix, h_rel: &Matrix, h_att: &Matrix, alpha: f64, beta: f64) -> Result<Matrix> {
    let mut tape = Tape::new();
    let obj = tape.constant(h_obj.clone());
    let rel = tape.constant(h_rel.clone());
    let att = tape.constant(h_att.clone());
    let a = tape.constant(Matrix::scalar(alpha));
    let b = tape.constant(Matrix::scalar(beta));
    let out = layer_fusion_on(&mut tape, obj, rel, att, a, b)?;
    Ok(tape.value(out).clone())
}

/// Output of one modality's fusion.
#[derive(Clone, Debug, PartialEq)]
pub struct IntraOutput {
    /// Updated node features, `n × d`.
    pub nodes: Matrix,
    /// Agent row after fusion (`c_R` / `c_T`).
    pub agent: Vec<f64>,
}

pub fn intra_fuse(g: &SceneGraph, p: &IntraFusionParams) -> Result<IntraOutput> {
    let fg = checked(g, p)?;
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, "")?;
    let (nodes, agent) = intra_fuse_on(&mut tape, &fg, &bound)?;
    Ok(IntraOutput {
        nodes: tape.value(nodes).clone(),
        agent: tape.value(agent).as_slice().to_vec(),
    })
}
