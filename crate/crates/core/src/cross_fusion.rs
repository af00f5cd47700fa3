//! Cross-modal fusion guided by contextual vectors.
//!
//! The two agent rows are mixed by an MLP into contextual vectors, which
//! then gate the queries and keys of a joint attention over the stacked
//! region and word rows:
//!
//! ```text
//! Y   = [F'; P']                   C = [c_R' × n; c_T' × m]
//! G   = C·W_g                      Q = Y·W_q, K = Y·W_k, V = Y·W_v
//! Y_u = softmax((G ⊙ Q)(G ⊙ K)^T / sqrt(d))·V + Y
//! ```
//!
//! `Y_u` is split back into regions and words, mean-pooled, and each pool
//! is combined with its modality's agent row into the updated context.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{init_uniform, join, MapFn, Mlp, WalkFn};
use crate::numerics::{Matrix, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock<T = Matrix> {
    pub w_key: T,
    pub w_query: T,
    pub w_value: T,
    pub w_gate: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossFusionParams<T = Matrix> {
    /// `2d → 2d` mixing of the concatenated agent rows.
    pub context_mlp: Mlp<T>,
    pub blocks: Vec<AttentionBlock<T>>,
    /// `2d → d` update of the image context from `[c_R ‖ f̄]`.
    pub update_image: Mlp<T>,
    /// `2d → d` update of the text context from `[c_T ‖ p̄]`.
    pub update_text: Mlp<T>,
}

impl<T> CrossFusionParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut MapFn<'_, T, U>) -> Result<CrossFusionParams<U>> {
        let context_mlp = self.context_mlp.map(&join(prefix, "context_mlp"), f)?;
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(b, blk)| {
                let p = join(prefix, &format!("blocks.{b}"));
                Ok(AttentionBlock {
                    w_key: f(join(&p, "w_key"), &blk.w_key)?,
                    w_query: f(join(&p, "w_query"), &blk.w_query)?,
                    w_value: f(join(&p, "w_value"), &blk.w_value)?,
                    w_gate: f(join(&p, "w_gate"), &blk.w_gate)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(CrossFusionParams {
            context_mlp,
            blocks,
            update_image: self.update_image.map(&join(prefix, "update_image"), f)?,
            update_text: self.update_text.map(&join(prefix, "update_text"), f)?,
        })
    }

    pub fn walk_mut(&mut self, prefix: &str, f: &mut WalkFn<'_, T>) {
        self.context_mlp.walk_mut(&join(prefix, "context_mlp"), f);
        for (b, blk) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("blocks.{b}"));
            f(join(&p, "w_key"), &mut blk.w_key);
            f(join(&p, "w_query"), &mut blk.w_query);
            f(join(&p, "w_value"), &mut blk.w_value);
            f(join(&p, "w_gate"), &mut blk.w_gate);
        }
        self.update_image.walk_mut(&join(prefix, "update_image"), f);
        self.update_text.walk_mut(&join(prefix, "update_text"), f);
    }
}

impl CrossFusionParams<Matrix> {
    pub fn init(rng: &mut impl Rng, d: usize, blocks: usize) -> Self {
        let context_mlp = Mlp::init(rng, 2 * d, 2 * d, 2 * d);
        let blocks = (0..blocks)
            .map(|_| AttentionBlock {
                w_key: init_uniform(rng, d, d, d),
                w_query: init_uniform(rng, d, d, d),
                w_value: init_uniform(rng, d, d, d),
                w_gate: init_uniform(rng, d, d, d),
            })
            .collect();
        Self {
            context_mlp,
            blocks,
            update_image: Mlp::init(rng, 2 * d, 2 * d, d),
            update_text: Mlp::init(rng, 2 * d, 2 * d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.update_image.output_dim()
    }

    pub fn check(&self, d: usize) -> Result<()> {
        self.context_mlp.check("context_mlp", 2 * d, 2 * d)?;
        self.update_image.check("update_image", 2 * d, d)?;
        self.update_text.check("update_text", 2 * d, d)?;
        if self.blocks.is_empty() {
            return Err(Error::Contract("cross fusion needs at least one attention block".into()));
        }
        for (b, blk) in self.blocks.iter().enumerate() {
            for m in [&blk.w_key, &blk.w_query, &blk.w_value, &blk.w_gate] {
                if m.shape() != (d, d) {
                    return Err(Error::Shape {
                        op: "cross_fusion",
                        detail: format!("block {b} projection is {:?}, expected ({d}, {d})", m.shape()),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, prefix: &str) -> Result<CrossFusionParams<Var>> {
        self.map(prefix, &mut |name, m| tape.param(name, m.clone()))
    }
}

/// Tape handles for everything the cross fusion produces for one pair.
#[derive(Clone, Copy, Debug)]
pub struct PairVars {
    pub f_u: Var,
    pub p_u: Var,
    pub f_bar: Var,
    pub p_bar: Var,
    pub c_ru: Var,
    pub c_tu: Var,
}

pub fn form_context_on(tape: &mut Tape, c_r: Var, c_t: Var, p: &CrossFusionParams<Var>) -> Result<(Var, Var)> {
    let d = tape.value(c_r).cols();
    let joint = tape.concat_cols(&[c_r, c_t])?;
    let mixed = p.context_mlp.apply(tape, joint)?;
    Ok((tape.slice_cols(mixed, 0, d)?, tape.slice_cols(mixed, d, d)?))
}

fn gated_block_on(tape: &mut Tape, y: Var, gate_rows: Var, blk: &AttentionBlock<Var>) -> Result<Var> {
    let d = tape.value(y).cols();
    let k = tape.matmul(y, blk.w_key)?;
    let q = tape.matmul(y, blk.w_query)?;
    let v = tape.matmul(y, blk.w_value)?;
    let g = tape.matmul(gate_rows, blk.w_gate)?;
    let gq = tape.hadamard(g, q)?;
    let gk = tape.hadamard(g, k)?;
    let gk_t = tape.transpose(gk)?;
    let scores = tape.matmul(gq, gk_t)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let attn = tape.row_softmax(scores)?;
    let mixed = tape.matmul(attn, v)?;
    tape.add(mixed, y)
}

/// Joint attention over `[F'; P']`, one residual block per entry of `p.blocks`.
pub fn guided_attention_on(
    tape: &mut Tape,
    f_prime: Var,
    p_prime: Var,
    c_r_prime: Var,
    c_t_prime: Var,
    p: &CrossFusionParams<Var>,
) -> Result<Var> {
    let n = tape.value(f_prime).rows();
    let m = tape.value(p_prime).rows();
    let mut y = tape.concat_rows(&[f_prime, p_prime])?;
    let c_r = tape.repeat_rows(c_r_prime, n)?;
    let c_t = tape.repeat_rows(c_t_prime, m)?;
    let gate_rows = tape.concat_rows(&[c_r, c_t])?;
    for blk in &p.blocks {
        y = gated_block_on(tape, y, gate_rows, blk)?;
    }
    Ok(y)
}

pub fn split_and_pool_on(tape: &mut Tape, y_u: Var, n: usize, m: usize) -> Result<(Var, Var, Var, Var)> {
    let rows = tape.value(y_u).rows();
    if rows != n + m || n == 0 || m == 0 {
        return Err(Error::Shape {
            op: "split_and_pool",
            detail: format!("{rows} rows cannot split into {n} regions and {m} words"),
        });
    }
    let f_u = tape.slice_rows(y_u, 0, n)?;
    let p_u = tape.slice_rows(y_u, n, m)?;
    let f_bar = tape.mean_rows(f_u)?;
    let p_bar = tape.mean_rows(p_u)?;
    Ok((f_u, p_u, f_bar, p_bar))
}

pub fn update_context_on(
    tape: &mut Tape,
    c_r: Var,
    f_bar: Var,
    c_t: Var,
    p_bar: Var,
    p: &CrossFusionParams<Var>,
) -> Result<(Var, Var)> {
    let img = tape.concat_cols(&[c_r, f_bar])?;
    let txt = tape.concat_cols(&[c_t, p_bar])?;
    Ok((p.update_image.apply(tape, img)?, p.update_text.apply(tape, txt)?))
}

/// Full cross fusion for one image/text pair. `c_r`/`c_t` are the agent rows
/// coming out of the intra-modal stage.
pub fn cross_fuse_on(
    tape: &mut Tape,
    f_prime: Var,
    p_prime: Var,
    c_r: Var,
    c_t: Var,
    p: &CrossFusionParams<Var>,
) -> Result<PairVars> {
    let n = tape.value(f_prime).rows();
    let m = tape.value(p_prime).rows();
    let (c_r_prime, c_t_prime) = form_context_on(tape, c_r, c_t, p)?;
    let y_u = guided_attention_on(tape, f_prime, p_prime, c_r_prime, c_t_prime, p)?;
    let (f_u, p_u, f_bar, p_bar) = split_and_pool_on(tape, y_u, n, m)?;
    let (c_ru, c_tu) = update_context_on(tape, c_r, f_bar, c_t, p_bar, p)?;
    Ok(PairVars {
        f_u,
        p_u,
        f_bar,
        p_bar,
        c_ru,
        c_tu,
    })
}

/// Post-fusion state of one image/text pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairEmbedding {
    pub f_u: Matrix,
    pub p_u: Matrix,
    pub f_bar: Vec<f64>,
    pub p_bar: Vec<f64>,
    pub c_ru: Vec<f64>,
    pub c_tu: Vec<f64>,
}

impl PairEmbedding {
    pub(crate) fn read(tape: &Tape, v: &PairVars) -> Self {
        let row = |x: Var| tape.value(x).as_slice().to_vec();
        Self {
            f_u: tape.value(v.f_u).clone(),
            p_u: tape.value(v.p_u).clone(),
            f_bar: row(v.f_bar),
            p_bar: row(v.p_bar),
            c_ru: row(v.c_ru),
            c_tu: row(v.c_tu),
        }
    }
}

fn vector_pair(op: &'static str, a: &[f64], b: &[f64], d: usize) -> Result<()> {
    if a.len() != d || b.len() != d {
        return Err(Error::Dimension {
            op,
            left: (1, a.len()),
            right: (1, b.len()),
        });
    }
    Ok(())
}

pub fn form_context(c_r: &[f64], c_t: &[f64], p: &CrossFusionParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = p.dim();
    vector_pair("form_context", c_r, c_t, d)?;
    p.check(d)?;
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, "")?;
    let cr = tape.constant(Matrix::row_vector(c_r.to_vec()));
    let ct = tape.constant(Matrix::row_vector(c_t.to_vec()));
    let (a, b) = form_context_on(&mut tape, cr, ct, &bound)?;
    Ok((tape.value(a).as_slice().to_vec(), tape.value(b).as_slice().to_vec()))
}

pub fn guided_attention(
    f_prime: &Matrix,
    p_prime: &Matrix,
    c_r_prime: &[f64],
    c_t_prime: &[f64],
    p: &CrossFusionParams,
) -> Result<Matrix> {
    let d = p.dim();
    p.check(d)?;
    vector_pair("guided_attention", c_r_prime, c_t_prime, d)?;
    for m in [f_prime, p_prime] {
        if m.cols() != d || m.rows() == 0 {
            return Err(Error::Dimension {
                op: "guided_attention",
                left: m.shape(),
                right: (m.rows(), d),
            });
        }
    }
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, "")?;
    let f = tape.constant(f_prime.clone());
    let pp = tape.constant(p_prime.clone());
    let cr = tape.constant(Matrix::row_vector(c_r_prime.to_vec()));
    let ct = tape.constant(Matrix::row_vector(c_t_prime.to_vec()));
    let y = guided_attention_on(&mut tape, f, pp, cr, ct, &bound)?;
    Ok(tape.value(y).clone())
}

/// `(F_u, P_u, f̄, p̄)`.
pub fn split_and_pool(y_u: &Matrix, n: usize, m: usize) -> Result<(Matrix, Matrix, Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let y = tape.constant(y_u.clone());
    let (f, p, fb, pb) = split_and_pool_on(&mut tape, y, n, m)?;
    Ok((
        tape.value(f).clone(),
        tape.value(p).clone(),
        tape.value(fb).as_slice().to_vec(),
        tape.value(pb).as_slice().to_vec(),
    ))
}

pub fn update_context(
    c_r: &[f64],
    f_bar: &[f64],
    c_t: &[f64],
    p_bar: &[f64],
    p: &CrossFusionParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = p.dim();
    p.check(d)?;
    vector_pair("update_context", c_r, f_bar, d)?;
    vector_pair("update_context", c_t, p_bar, d)?;
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, "")?;
    let mut row = |v: &[f64]| tape.constant(Matrix::row_vector(v.to_vec()));
    let (cr, fb, ct, pb) = (row(c_r), row(f_bar), row(c_t), row(p_bar));
    let (a, b) = update_context_on(&mut tape, cr, fb, ct, pb, &bound)?;
    Ok((tape.value(a).as_slice().to_vec(), tape.value(b).as_slice().to_vec()))
}

/// Cross fusion of one pair from the intra-modal outputs.
pub fn cross_fuse(f_prime: &Matrix, p_prime: &Matrix, c_r: &[f64], c_t: &[f64], p: &CrossFusionParams) -> Result<PairEmbedding> {
    let d = p.dim();
    p.check(d)?;
    vector_pair("cross_fuse", c_r, c_t, d)?;
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape, "")?;
    let f = tape.constant(f_prime.clone());
    let pp = tape.constant(p_prime.clone());
    let cr = tape.constant(Matrix::row_vector(c_r.to_vec()));
    let ct = tape.constant(Matrix::row_vector(c_t.to_vec()));
    let vars = cross_fuse_on(&mut tape, f, pp, cr, ct, &bound)?;
    Ok(PairEmbedding::read(&tape, &vars))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_mlp(input: usize, output: usize) -> Mlp {
        Mlp {
            w1: Matrix::identity(input),
            b1: Matrix::zeros(1, input),
            w2: Matrix::from_fn(input, output, |r, c| if r == c { 1.0 } else { 0.0 }),
            b2: Matrix::zeros(1, output),
        }
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        init_uniform(rng, rows, cols, 1)
    }

    #[test]
    fn identity_context_mlp_passes_agents_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = CrossFusionParams::init(&mut rng, 3, 1);
        p.context_mlp = identity_mlp(6, 6);
        let (a, b) = form_context(&[0.1, 0.2, 0.3], &[0.4, 0.5, 0.6], &p).unwrap();
        assert_eq!(a, vec![0.1, 0.2, 0.3]);
        assert_eq!(b, vec![0.4, 0.5, 0.6]);
    }

    #[test]
    fn zero_context_mlp_gives_zero_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = CrossFusionParams::init(&mut rng, 3, 1);
        p.context_mlp.walk_mut("", &mut |_, m| *m = Matrix::zeros(m.rows(), m.cols()));
        let (a, b) = form_context(&[1.0, -2.0, 3.0], &[0.5, 0.5, 0.5], &p).unwrap();
        assert_eq!(a, vec![0.0; 3]);
        assert_eq!(b, vec![0.0; 3]);
    }

    #[test]
    fn zero_value_projection_is_pure_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = CrossFusionParams::init(&mut rng, 4, 2);
        for blk in &mut p.blocks {
            blk.w_value = Matrix::zeros(4, 4);
        }
        let f = random(&mut rng, 2, 4);
        let t = random(&mut rng, 3, 4);
        let y = guided_attention(&f, &t, &[0.3; 4], &[-0.2; 4], &p).unwrap();
        for r in 0..2 {
            assert_eq!(y.row(r), f.row(r));
        }
        for r in 0..3 {
            assert_eq!(y.row(2 + r), t.row(r));
        }
    }

    #[test]
    fn split_and_pool_examples() {
        let v = vec![0.5, -1.0, 2.0];
        let y = Matrix::from_rows(&vec![v.clone(); 5], 3).unwrap();
        let (f, p, fb, pb) = split_and_pool(&y, 2, 3).unwrap();
        assert_eq!((f.rows(), p.rows()), (2, 3));
        assert_eq!(fb, v);
        assert_eq!(pb, v);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = random(&mut rng, 4, 3);
        let (f, _, fb, _) = split_and_pool(&y, 1, 3).unwrap();
        assert_eq!(fb, f.row(0).to_vec());
        assert!(split_and_pool(&y, 2, 3).is_err());
    }

    #[test]
    fn stack_then_split_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random(&mut rng, 3, 4);
        let p = random(&mut rng, 2, 4);
        let mut tape = Tape::new();
        let fv = tape.constant(f.clone());
        let pv = tape.constant(p.clone());
        let y = tape.concat_rows(&[fv, pv]).unwrap();
        let (fu, pu, _, _) = split_and_pool_on(&mut tape, y, 3, 2).unwrap();
        assert_eq!(tape.value(fu), &f);
        assert_eq!(tape.value(pu), &p);
    }

    #[test]
    fn update_context_constant_and_identity_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = 3;
        let mut p = CrossFusionParams::init(&mut rng, d, 1);
        p.update_image.walk_mut("", &mut |_, m| *m = Matrix::zeros(m.rows(), m.cols()));
        p.update_image.b2 = Matrix::row_vector(vec![0.7, -0.1, 0.2]);
        p.update_text = identity_mlp(2 * d, d);
        let c_r = [0.3, 0.1, 0.9];
        let c_t = [0.2, 0.4, 0.6];
        let (c_ru, c_tu) = update_context(&c_r, &[1.0, 1.0, 1.0], &c_t, &[5.0, 5.0, 5.0], &p).unwrap();
        assert_eq!(c_ru, vec![0.7, -0.1, 0.2]);
        assert_eq!(c_tu, c_t.to_vec());
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = CrossFusionParams::init(&mut rng, 3, 1);
        assert!(form_context(&[1.0, 2.0], &[1.0, 2.0, 3.0], &p).is_err());
        assert!(update_context(&[1.0; 3], &[1.0; 4], &[1.0; 3], &[1.0; 3], &p).is_err());
    }
}
