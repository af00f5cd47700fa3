//! Pair scoring and the ranking objective.
//!
//! A pair's score is `S = S_G + delta · S_L`:
//!
//! * `S_G` is the cosine of the two updated context vectors.
//! * `S_L` attends every region over the words (and every word over the
//!   regions) through the projected affinity matrix
//!   `A = (F_u·W_r)(P_u·W_t)^T`, then averages the cosine between each row
//!   and its attended counterpart in both directions.
//!
//! Training uses a bidirectional hinge on the hardest in-batch negative.

mod metrics;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{recall_at_k, rsum, RetrievalReport};

use crate::cross_fusion::{PairEmbedding, PairVars};
use crate::error::{Error, Result};
use crate::layers::{init_uniform, join, MapFn, WalkFn};
use crate::numerics::{cosine, row_softmax, Matrix, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentParams<T = Matrix> {
    /// Region-side projection `W_r` (`d × d`).
    pub w_region: T,
    /// Word-side projection `W_t` (`d × d`).
    pub w_word: T,
    /// Weight of the local score.
    pub delta: f64,
    /// Hinge margin.
    pub margin: f64,
}

impl<T> AlignmentParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut MapFn<'_, T, U>) -> Result<AlignmentParams<U>> {
        Ok(AlignmentParams {
            w_region: f(join(prefix, "w_region"), &self.w_region)?,
            w_word: f(join(prefix, "w_word"), &self.w_word)?,
            delta: self.delta,
            margin: self.margin,
        })
    }

    pub fn walk_mut(&mut self, prefix: &str, f: &mut WalkFn<'_, T>) {
        f(join(prefix, "w_region"), &mut self.w_region);
        f(join(prefix, "w_word"), &mut self.w_word);
    }
}

impl AlignmentParams<Matrix> {
    pub fn init(rng: &mut impl Rng, d: usize, delta: f64, margin: f64) -> Self {
        Self {
            w_region: init_uniform(rng, d, d, d),
            w_word: init_uniform(rng, d, d, d),
            delta,
            margin,
        }
    }

    pub fn check(&self, d: usize) -> Result<()> {
        for m in [&self.w_region, &self.w_word] {
            if m.shape() != (d, d) {
                return Err(Error::Shape {
                    op: "alignment",
                    detail: format!("projection is {:?}, expected ({d}, {d})", m.shape()),
                });
            }
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Contract(format!("delta {} must be finite and >= 0", self.delta)));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Contract(format!("margin {} must be finite and > 0", self.margin)));
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, prefix: &str) -> Result<AlignmentParams<Var>> {
        self.map(prefix, &mut |name, m| tape.param(name, m.clone()))
    }
}

/// Affinity matrix and the attended rows on a tape: `(A, F*, P*)`.
pub fn local_attention_on(tape: &mut Tape, f_u: Var, p_u: Var, p: &AlignmentParams<Var>) -> Result<(Var, Var, Var)> {
    let fr = tape.matmul(f_u, p.w_region)?;
    let pt = tape.matmul(p_u, p.w_word)?;
    let pt_t = tape.transpose(pt)?;
    let a = tape.matmul(fr, pt_t)?;
    let over_words = tape.row_softmax(a)?;
    let f_star = tape.matmul(over_words, p_u)?;
    let a_t = tape.transpose(a)?;
    let over_regions = tape.row_softmax(a_t)?;
    let p_star = tape.matmul(over_regions, f_u)?;
    Ok((a, f_star, p_star))
}

pub fn local_similarity_on(tape: &mut Tape, f_u: Var, f_star: Var, p_u: Var, p_star: Var) -> Result<Var> {
    let cf = tape.row_cosine(f_u, f_star)?;
    let cp = tape.row_cosine(p_u, p_star)?;
    let mf = tape.mean(cf)?;
    let mp = tape.mean(cp)?;
    tape.add(mf, mp)
}

/// Tape handles for one pair's scores.
#[derive(Clone, Copy, Debug)]
pub struct ScoreVars {
    pub affinity: Var,
    pub global: Var,
    pub local: Var,
    pub total: Var,
}

pub fn pair_score_on(tape: &mut Tape, pair: &PairVars, p: &AlignmentParams<Var>) -> Result<ScoreVars> {
    let global = tape.row_cosine(pair.c_ru, pair.c_tu)?;
    let (affinity, f_star, p_star) = local_attention_on(tape, pair.f_u, pair.p_u, p)?;
    let local = local_similarity_on(tape, pair.f_u, f_star, pair.p_u, p_star)?;
    let weighted = tape.scale(local, p.delta)?;
    let total = tape.add(global, weighted)?;
    Ok(ScoreVars {
        affinity,
        global,
        local,
        total,
    })
}

/// Cosine of the two updated context vectors.
pub fn global_similarity(c_ru: &[f64], c_tu: &[f64]) -> Result<f64> {
    cosine(c_ru, c_tu)
}

/// Result of region-word attention for one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalAttention {
    /// Affinity matrix, `n × m`.
    pub affinity: Matrix,
    /// Word-attended vector for each region, `n × d`.
    pub f_star: Matrix,
    /// Region-attended vector for each word, `m × d`.
    pub p_star: Matrix,
}

pub fn local_attention(f_u: &Matrix, p_u: &Matrix, p: &AlignmentParams) -> Result<LocalAttention> {
    let d = p.w_region.rows();
    p.check(d)?;
    for m in [f_u, p_u] {
        if m.cols() != d || m.rows() == 0 {
            return Err(Error::Dimension {
                op: "local_attention",
                left: m.shape(),
                right: (d, d),
            });
        }
    }
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, "")?;
    let fv = tape.constant(f_u.clone());
    let pv = tape.constant(p_u.clone());
    let (a, fs, ps) = local_attention_on(&mut tape, fv, pv, &bound)?;
    Ok(LocalAttention {
        affinity: tape.value(a).clone(),
        f_star: tape.value(fs).clone(),
        p_star: tape.value(ps).clone(),
    })
}

/// Column-wise attention weights over regions, as stored by `local_attention`
/// (each column of the returned `n × m` matrix sums to one).
pub fn region_weights(affinity: &Matrix) -> Result<Matrix> {
    Ok(row_softmax(&affinity.transpose())?.transpose())
}

pub fn local_similarity(f_u: &Matrix, f_star: &Matrix, p_u: &Matrix, p_star: &Matrix) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = [f_u, f_star, p_u, p_star]
        .into_iter()
        .map(|m| tape.constant(m.clone()))
        .collect();
    let s = local_similarity_on(&mut tape, vars[0], vars[1], vars[2], vars[3])?;
    tape.scalar_value(s)
}

pub fn pair_similarity(s_g: f64, s_l: f64, delta: f64) -> f64 {
    s_g + delta * s_l
}

/// Scores of a fused pair under `p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairScore {
    pub global: f64,
    pub local: f64,
    pub total: f64,
}

pub fn score_embedding(e: &PairEmbedding, p: &AlignmentParams) -> Result<PairScore> {
    let global = global_similarity(&e.c_ru, &e.c_tu)?;
    let la = local_attention(&e.f_u, &e.p_u, p)?;
    let local = local_similarity(&e.f_u, &la.f_star, &e.p_u, &la.p_star)?;
    Ok(PairScore {
        global,
        local,
        total: pair_similarity(global, local, p.delta),
    })
}

/// Hardest in-batch negatives for a `batch × batch` score matrix whose
/// diagonal holds the matched pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HardNegatives {
    /// For image `i`, the best-scoring non-matching text.
    pub text_for_image: Vec<usize>,
    /// For text `j`, the best-scoring non-matching image.
    pub image_for_text: Vec<usize>,
}

fn square(op: &'static str, s: &Matrix) -> Result<usize> {
    if s.rows() != s.cols() {
        return Err(Error::Shape {
            op,
            detail: format!("score matrix is {}x{}, expected square", s.rows(), s.cols()),
        });
    }
    Ok(s.rows())
}

/// Ties go to the smallest index. A batch of one has no negatives.
pub fn mine_hard_negatives(s: &Matrix) -> Result<HardNegatives> {
    let b = square("mine_hard_negatives", s)?;
    if b < 2 {
        return Ok(HardNegatives::default());
    }
    let best = |scores: &mut dyn Iterator<Item = (usize, f64)>| {
        let mut out: Option<(usize, f64)> = None;
        for (idx, v) in scores {
            if out.is_none_or(|(_, bv)| v > bv) {
                out = Some((idx, v));
            }
        }
        out.map(|(i, _)| i).unwrap_or(0)
    };
    let text_for_image = (0..b)
        .map(|i| best(&mut (0..b).filter(|&j| j != i).map(|j| (j, s.get(i, j)))))
        .collect();
    let image_for_text = (0..b)
        .map(|j| best(&mut (0..b).filter(|&i| i != j).map(|i| (i, s.get(i, j)))))
        .collect();
    Ok(HardNegatives {
        text_for_image,
        image_for_text,
    })
}

/// How per-pair hinge terms are combined over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    #[default]
    Sum,
    Mean,
}

impl LossReduction {
    pub fn factor(self, batch: usize) -> f64 {
        match self {
            LossReduction::Sum => 1.0,
            LossReduction::Mean => 1.0 / batch.max(1) as f64,
        }
    }
}

/// One anchor's two hinge arguments, `margin − S(i,i) + S(negative)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HingeTerm {
    pub anchor: usize,
    pub hard_text: usize,
    pub hard_image: usize,
    pub text_arg: f64,
    pub image_arg: f64,
}

pub fn hinge_terms(s: &Matrix, margin: f64) -> Result<Vec<HingeTerm>> {
    let hard = mine_hard_negatives(s)?;
    Ok((0..hard.text_for_image.len())
        .map(|i| {
            let (t, im) = (hard.text_for_image[i], hard.image_for_text[i]);
            HingeTerm {
                anchor: i,
                hard_text: t,
                hard_image: im,
                text_arg: margin - s.get(i, i) + s.get(i, t),
                image_arg: margin - s.get(i, i) + s.get(im, i),
            }
        })
        .collect())
}

/// Bidirectional hard-negative hinge loss, summed over the batch.
pub fn triplet_loss(s: &Matrix, margin: f64) -> Result<f64> {
    triplet_loss_with(s, margin, LossReduction::Sum)
}

pub fn triplet_loss_with(s: &Matrix, margin: f64, reduction: LossReduction) -> Result<f64> {
    let b = square("triplet_loss", s)?;
    let total: f64 = hinge_terms(s, margin)?
        .iter()
        .map(|t| t.text_arg.max(0.0) + t.image_arg.max(0.0))
        .sum();
    Ok(total * reduction.factor(b))
}
