//! The full network: both intra-modal stacks, cross fusion, and scoring.

use rand::Rng;
use rayon::prelude::*;

use crate::alignment::{self, hinge_terms, pair_score_on, AlignmentParams, LocalAttention, LossReduction, PairScore};
use crate::cross_fusion::{cross_fuse_on, CrossFusionParams, PairEmbedding};
use crate::error::{Error, Result};
use crate::intra_fusion::{intra_fuse_on, FusionGraph, IntraFusionParams};
use crate::layers::{MapFn, WalkFn};
use crate::numerics::{GradientSet, Matrix, ParamSet, Tape, Var};
use crate::scene_graph::{PairRecord, SceneGraph};

/// Every trainable parameter of the network plus the scoring hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Matrix> {
    pub image: IntraFusionParams<T>,
    pub text: IntraFusionParams<T>,
    pub cross: CrossFusionParams<T>,
    pub align: AlignmentParams<T>,
}

/// Shape and initialization choices for a fresh model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelShape {
    pub d: usize,
    pub heads: usize,
    pub attention_blocks: usize,
    pub alpha_init: f64,
    pub beta_init: f64,
    pub delta: f64,
    pub margin: f64,
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut MapFn<'_, T, U>) -> Result<ModelParams<U>> {
        Ok(ModelParams {
            image: self.image.map("image", f)?,
            text: self.text.map("text", f)?,
            cross: self.cross.map("cross", f)?,
            align: self.align.map("align", f)?,
        })
    }

    pub fn walk_mut(&mut self, f: &mut WalkFn<'_, T>) {
        self.image.walk_mut("image", f);
        self.text.walk_mut("text", f);
        self.cross.walk_mut("cross", f);
        self.align.walk_mut("align", f);
    }
}

impl ModelParams<Matrix> {
    pub fn init(rng: &mut impl Rng, shape: &ModelShape) -> Self {
        let d = shape.d;
        Self {
            image: IntraFusionParams::init(rng, d, shape.heads, shape.alpha_init, shape.beta_init),
            text: IntraFusionParams::init(rng, d, shape.heads, shape.alpha_init, shape.beta_init),
            cross: CrossFusionParams::init(rng, d, shape.attention_blocks),
            align: AlignmentParams::init(rng, d, shape.delta, shape.margin),
        }
    }

    pub fn dim(&self) -> usize {
        self.image.dim()
    }

    pub fn check(&self) -> Result<()> {
        let d = self.dim();
        self.image.check(d)?;
        self.text.check(d)?;
        self.cross.check(d)?;
        self.align.check(d)
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<ModelParams<Var>> {
        self.map(&mut |name, m| tape.param(name, m.clone()))
    }

    /// Object-branch weights `(image, text)`.
    pub fn fusion_ratios(&self) -> (f64, f64) {
        (self.image.fusion_ratio(), self.text.fusion_ratio())
    }

    fn check_graph(&self, g: &SceneGraph) -> Result<()> {
        if g.dim() != self.dim() {
            return Err(Error::Dimension {
                op: "model input",
                left: (g.node_count(), g.dim()),
                right: (g.node_count(), self.dim()),
            });
        }
        Ok(())
    }
}

impl ParamSet for ModelParams<Matrix> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        let _ = self.map(&mut |name, m| {
            f(&name, m);
            Ok(())
        });
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.walk_mut(&mut |name, m| f(&name, m));
    }
}

/// Intra-fused features of one graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    pub nodes: Matrix,
    pub agent: Matrix,
}

fn encode_with(g: &SceneGraph, p: &IntraFusionParams) -> Result<Encoding> {
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, "")?;
    let (nodes, agent) = intra_fuse_on(&mut tape, &FusionGraph::new(g), &bound)?;
    Ok(Encoding {
        nodes: tape.value(nodes).clone(),
        agent: tape.value(agent).clone(),
    })
}

pub fn encode_image(params: &ModelParams, g: &SceneGraph) -> Result<Encoding> {
    params.check_graph(g)?;
    encode_with(g, &params.image)
}

pub fn encode_text(params: &ModelParams, g: &SceneGraph) -> Result<Encoding> {
    params.check_graph(g)?;
    encode_with(g, &params.text)
}

/// Cross-fuses and scores one image/text pair from their encodings.
pub fn fuse_pair(params: &ModelParams, image: &Encoding, text: &Encoding) -> Result<(PairEmbedding, PairScore, Matrix)> {
    let mut tape = Tape::new();
    let cross = params.cross.bind(&mut tape, "cross")?;
    let align = params.align.bind(&mut tape, "align")?;
    let f = tape.constant(image.nodes.clone());
    let p = tape.constant(text.nodes.clone());
    let cr = tape.constant(image.agent.clone());
    let ct = tape.constant(text.agent.clone());
    let pair = cross_fuse_on(&mut tape, f, p, cr, ct, &cross)?;
    let score = pair_score_on(&mut tape, &pair, &align)?;
    let embedding = PairEmbedding::read(&tape, &pair);
    let scores = PairScore {
        global: tape.scalar_value(score.global)?,
        local: tape.scalar_value(score.local)?,
        total: tape.scalar_value(score.total)?,
    };
    Ok((embedding, scores, tape.value(score.affinity).clone()))
}

pub fn score_pair(params: &ModelParams, image: &Encoding, text: &Encoding) -> Result<f64> {
    Ok(fuse_pair(params, image, text)?.1.total)
}

/// Region-word attention for a fused pair, for inspection.
pub fn pair_attention(params: &ModelParams, image: &Encoding, text: &Encoding) -> Result<LocalAttention> {
    let (embedding, _, _) = fuse_pair(params, image, text)?;
    alignment::local_attention(&embedding.f_u, &embedding.p_u, &params.align)
}

pub fn encode_all(params: &ModelParams, graphs: &[&SceneGraph], image_side: bool) -> Result<Vec<Encoding>> {
    graphs
        .par_iter()
        .map(|g| if image_side { encode_image(params, g) } else { encode_text(params, g) })
        .collect()
}

/// `S[i][j]` = score of image `i` against text `j`. Rows are computed in
/// parallel and assembled by index.
pub fn score_matrix(params: &ModelParams, images: &[Encoding], texts: &[Encoding]) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| texts.iter().map(|txt| score_pair(params, img, txt)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    Matrix::from_rows(&rows, texts.len())
}

/// Scores every image of `records` against every text.
pub fn dataset_scores(params: &ModelParams, records: &[PairRecord]) -> Result<Matrix> {
    params.check()?;
    let images: Vec<&SceneGraph> = records.iter().map(|r| &r.image).collect();
    let texts: Vec<&SceneGraph> = records.iter().map(|r| &r.text).collect();
    let img = encode_all(params, &images, true)?;
    let txt = encode_all(params, &texts, false)?;
    score_matrix(params, &img, &txt)
}

/// Batch objective computed without a tape. Used as the finite-difference target.
pub fn batch_loss(params: &ModelParams, batch: &[PairRecord], reduction: LossReduction) -> Result<f64> {
    let s = dataset_scores(params, batch)?;
    alignment::triplet_loss_with(&s, params.align.margin, reduction)
}

/// Loss, gradients, and kink diagnostics for one batch.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub loss: f64,
    pub gradients: GradientSet,
    pub scores: Matrix,
    /// Distance of the nearest hinge, ranking, or LeakyReLU switch point.
    pub kink_margin: f64,
}

/// Smallest gap between the hardest negative and the runner-up in any row or column.
fn ranking_gap(s: &Matrix) -> f64 {
    let b = s.rows();
    if b < 3 {
        return f64::INFINITY;
    }
    let gap = |vals: Vec<f64>| {
        let mut v = vals;
        v.sort_by(|a, b| b.total_cmp(a));
        v[0] - v[1]
    };
    let mut out = f64::INFINITY;
    for i in 0..b {
        out = out.min(gap((0..b).filter(|&j| j != i).map(|j| s.get(i, j)).collect()));
        out = out.min(gap((0..b).filter(|&j| j != i).map(|j| s.get(j, i)).collect()));
    }
    out
}

/// Forward and backward over one batch.
///
/// Every pair is scored to mine hard negatives, but only pairs that enter an
/// active hinge term are rebuilt on the differentiation tape; the rest carry
/// no gradient.
pub fn batch_gradient(params: &ModelParams, batch: &[PairRecord], reduction: LossReduction) -> Result<BatchGradient> {
    params.check()?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;

    let mut image_vars = Vec::with_capacity(batch.len());
    let mut text_vars = Vec::with_capacity(batch.len());
    for r in batch {
        params.check_graph(&r.image)?;
        params.check_graph(&r.text)?;
        image_vars.push(intra_fuse_on(&mut tape, &FusionGraph::new(&r.image), &bound.image)?);
        text_vars.push(intra_fuse_on(&mut tape, &FusionGraph::new(&r.text), &bound.text)?);
    }
    let read = |tape: &Tape, (nodes, agent): (Var, Var)| Encoding {
        nodes: tape.value(nodes).clone(),
        agent: tape.value(agent).clone(),
    };
    let images: Vec<Encoding> = image_vars.iter().map(|&v| read(&tape, v)).collect();
    let texts: Vec<Encoding> = text_vars.iter().map(|&v| read(&tape, v)).collect();
    let scores = score_matrix(params, &images, &texts)?;

    let margin = params.align.margin;
    let terms = hinge_terms(&scores, margin)?;
    let mut kink_margin = ranking_gap(&scores);
    for t in &terms {
        kink_margin = kink_margin.min(t.text_arg.abs()).min(t.image_arg.abs());
    }

    let mut taped: std::collections::BTreeMap<(usize, usize), Var> = Default::default();
    let mut pair_score = |tape: &mut Tape, i: usize, j: usize| -> Result<Var> {
        if let Some(&v) = taped.get(&(i, j)) {
            return Ok(v);
        }
        let (f, cr) = image_vars[i];
        let (p, ct) = text_vars[j];
        let pair = cross_fuse_on(tape, f, p, cr, ct, &bound.cross)?;
        let s = pair_score_on(tape, &pair, &bound.align)?.total;
        taped.insert((i, j), s);
        Ok(s)
    };

    let mut hinges = Vec::new();
    for t in &terms {
        for (arg, (i, j)) in [(t.text_arg, (t.anchor, t.hard_text)), (t.image_arg, (t.hard_image, t.anchor))] {
            if arg <= 0.0 {
                continue;
            }
            let pos = pair_score(&mut tape, t.anchor, t.anchor)?;
            let neg = pair_score(&mut tape, i, j)?;
            let diff = tape.sub(neg, pos)?;
            let h = tape.offset(diff, margin)?;
            hinges.push(tape.relu(h)?);
        }
    }
    let factor = reduction.factor(batch.len());
    let (loss, gradients) = if hinges.is_empty() {
        let zero = params.map(&mut |_, m| Ok(Matrix::zeros(m.rows(), m.cols())))?;
        let mut grads = GradientSet::new();
        zero.visit(&mut |name, m| {
            grads.insert(name.to_string(), m.clone());
        });
        (0.0, grads)
    } else {
        let stacked = tape.concat_rows(&hinges)?;
        let total = tape.sum(stacked)?;
        let loss = tape.scale(total, factor)?;
        (tape.scalar_value(loss)?, tape.backward(loss)?)
    };
    kink_margin = kink_margin.min(tape.kink_margin());
    Ok(BatchGradient {
        loss,
        gradients,
        scores,
        kink_margin,
    })
}
