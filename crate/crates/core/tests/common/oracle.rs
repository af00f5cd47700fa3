//! Direct loop implementations of each layer, compared against the library.

use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgfn::alignment::{local_attention, local_similarity, mine_hard_negatives, AlignmentParams};
use sgfn::cross_fusion::{form_context, guided_attention, split_and_pool, update_context, CrossFusionParams};
use sgfn::intra_fusion::{attribute_layer, intra_fuse, object_layer, relation_layer, IntraFusionParams};
use sgfn::layers::Mlp;
use sgfn::numerics::Matrix;

pub const TOL: f64 = 1e-10;

type Rows = Vec<Vec<f64>>;

fn vec_mat(v: &[f64], m: &Matrix) -> Vec<f64> {
    (0..m.cols()).map(|c| (0..m.rows()).map(|r| v[r] * m.get(r, c)).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.2 * x
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let top = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn mlp(x: &[f64], p: &Mlp) -> Vec<f64> {
    let h: Vec<f64> = vec_mat(x, &p.w1).iter().zip(p.b1.as_slice()).map(|(a, b)| elu(a + b)).collect();
    vec_mat(&h, &p.w2).iter().zip(p.b2.as_slice()).map(|(a, b)| a + b).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Randomizes every entry of a parameter set, biases included.
fn perturb_intra(rng: &mut ChaCha8Rng, p: &mut IntraFusionParams) {
    p.walk_mut("", &mut |_, m| {
        for v in m.as_mut_slice() {
            *v = rng.gen_range(-0.8..0.8);
        }
    });
    p.alpha = Matrix::scalar(rng.gen_range(-3.0..3.0));
    p.beta = Matrix::scalar(rng.gen_range(-3.0..3.0));
}

fn object_oracle(raw: &RawGraph, h: &Rows, p: &IntraFusionParams) -> Rows {
    let n = raw.nodes.len();
    let d = h[0].len();
    let neighbors = |i: usize| -> Vec<usize> {
        if i == n {
            (0..=n).collect()
        } else {
            let mut out: Vec<usize> = (0..n).filter(|&j| j == i || raw.adjacency[i][j] == 1).collect();
            out.push(n);
            out
        }
    };
    let mut acc = vec![vec![0.0; d]; n + 1];
    for head in &p.heads {
        let wh: Rows = h.iter().map(|row| vec_mat(row, &head.weight)).collect();
        for i in 0..=n {
            let nb = neighbors(i);
            let logits: Vec<f64> = nb
                .iter()
                .map(|&j| leaky(dot(head.attn_self.as_slice(), &wh[i]) + dot(head.attn_neighbor.as_slice(), &wh[j])))
                .collect();
            let w = softmax(&logits);
            for (k, &j) in nb.iter().enumerate() {
                for c in 0..d {
                    acc[i][c] += w[k] * wh[j][c];
                }
            }
        }
    }
    let k = p.heads.len() as f64;
    acc.iter().map(|r| r.iter().map(|v| elu(v / k)).collect()).collect()
}

fn context_oracle(features: &Rows, incidence: &[Vec<usize>], p: &Mlp, d: usize) -> Rows {
    incidence
        .iter()
        .map(|list| {
            if list.is_empty() {
                return vec![0.0; d];
            }
            let mut mean = vec![0.0; d];
            for &r in list {
                for c in 0..d {
                    mean[c] += features[r][c] / list.len() as f64;
                }
            }
            mlp(&mean, p)
        })
        .collect()
}

fn setup_intra(seed: u64) -> (ChaCha8Rng, RawGraph, IntraFusionParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=6);
    let d = rng.gen_range(2..=6);
    let heads = rng.gen_range(1..=3);
    let raw = random_graph(&mut rng, n, d);
    let mut p = IntraFusionParams::init(&mut rng, d, heads, 5.0, 0.0);
    perturb_intra(&mut rng, &mut p);
    (rng, raw, p)
}

pub fn check_object_layer(instances: u64) {
    for seed in 0..instances {
        let (mut rng, raw, p) = setup_intra(seed);
        let n = raw.nodes.len();
        let d = raw.nodes[0].len();
        let mut h = raw.nodes.clone();
        h.push(vec![1.0; d]);
        if seed % 2 == 1 {
            h = rows(&mut rng, n + 1, d, 2.0);
        }
        let got = object_layer(&raw.graph, &to_matrix(&h, d), &p).unwrap();
        assert_close_matrix(&format!("object_layer seed {seed}"), &got, &object_oracle(&raw, &h, &p), TOL);
    }
}

pub fn check_context_layers(instances: u64) {
    for seed in 0..instances {
        let (_, raw, p) = setup_intra(1000 + seed);
        let d = raw.nodes[0].len();
        let rel = relation_layer(&raw.graph, &p).unwrap();
        let att = attribute_layer(&raw.graph, &p).unwrap();
        let want_rel = context_oracle(&raw.relations, &raw.rel_incidence, &p.relation_mlp, d);
        let want_att = context_oracle(&raw.attributes, &raw.attr_incidence, &p.attribute_mlp, d);
        assert_close_matrix(&format!("relation_layer seed {seed}"), &rel, &want_rel, TOL);
        assert_close_matrix(&format!("attribute_layer seed {seed}"), &att, &want_att, TOL);
    }
}

pub fn check_intra_fuse(instances: u64) {
    for seed in 0..instances {
        let (_, raw, p) = setup_intra(2000 + seed);
        let n = raw.nodes.len();
        let d = raw.nodes[0].len();
        let mut h = raw.nodes.clone();
        h.push(vec![1.0; d]);
        let obj = object_oracle(&raw, &h, &p);
        let mut rel = context_oracle(&raw.relations, &raw.rel_incidence, &p.relation_mlp, d);
        let mut att = context_oracle(&raw.attributes, &raw.attr_incidence, &p.attribute_mlp, d);
        rel.push(vec![0.0; d]);
        att.push(vec![0.0; d]);
        let (a, b) = (p.alpha.get(0, 0), p.beta.get(0, 0));
        let w_obj = a.exp() / (a.exp() + b.exp());
        let w_ctx = b.exp() / (a.exp() + b.exp());
        let fused: Rows = (0..=n)
            .map(|i| (0..d).map(|c| w_obj * obj[i][c] + w_ctx * (rel[i][c] + att[i][c])).collect())
            .collect();
        let out = intra_fuse(&raw.graph, &p).unwrap();
        assert_close_matrix(&format!("intra_fuse nodes seed {seed}"), &out.nodes, &fused[..n], TOL);
        assert_close(&format!("intra_fuse agent seed {seed}"), &[out.agent], &fused[n..], TOL);
    }
}

fn cross_params(rng: &mut ChaCha8Rng, d: usize, blocks: usize) -> CrossFusionParams {
    let mut p = CrossFusionParams::init(rng, d, blocks);
    p.walk_mut("", &mut |_, m| {
        for v in m.as_mut_slice() {
            *v = rng.gen_range(-0.7..0.7);
        }
    });
    p
}

fn guided_oracle(f: &Rows, pp: &Rows, cr: &[f64], ct: &[f64], p: &CrossFusionParams) -> Rows {
    let n = f.len();
    let d = cr.len();
    let mut y: Rows = f.iter().chain(pp).cloned().collect();
    for blk in &p.blocks {
        let gates: Rows = (0..y.len()).map(|r| vec_mat(if r < n { cr } else { ct }, &blk.w_gate)).collect();
        let q: Rows = y.iter().map(|r| vec_mat(r, &blk.w_query)).collect();
        let k: Rows = y.iter().map(|r| vec_mat(r, &blk.w_key)).collect();
        let v: Rows = y.iter().map(|r| vec_mat(r, &blk.w_value)).collect();
        let mut next = y.clone();
        for r in 0..y.len() {
            let scores: Vec<f64> = (0..y.len())
                .map(|s| (0..d).map(|c| gates[r][c] * q[r][c] * gates[s][c] * k[s][c]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let w = softmax(&scores);
            for s in 0..y.len() {
                for c in 0..d {
                    next[r][c] += w[s] * v[s][c];
                }
            }
        }
        y = next;
    }
    y
}

pub fn check_guided_attention(instances: u64) {
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let (n, m, d) = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(2..=6));
        let blocks = rng.gen_range(1..=3);
        let p = cross_params(&mut rng, d, blocks);
        let f = rows(&mut rng, n, d, 1.5);
        let pp = rows(&mut rng, m, d, 1.5);
        let cr = rows(&mut rng, 1, d, 1.5).remove(0);
        let ct = rows(&mut rng, 1, d, 1.5).remove(0);
        let got = guided_attention(&to_matrix(&f, d), &to_matrix(&pp, d), &cr, &ct, &p).unwrap();
        let want = guided_oracle(&f, &pp, &cr, &ct, &p);
        assert_close_matrix(&format!("guided_attention seed {seed}"), &got, &want, TOL);
    }
}

pub fn check_context_update(instances: u64) {
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let d = rng.gen_range(1..=6);
        let p = cross_params(&mut rng, d, 1);
        let v: Rows = rows(&mut rng, 4, d, 2.0);

        let joint: Vec<f64> = v[0].iter().chain(&v[1]).cloned().collect();
        let mixed = mlp(&joint, &p.context_mlp);
        let (a, b) = form_context(&v[0], &v[1], &p).unwrap();
        assert_close(&format!("form_context seed {seed}"), &[a, b], &[mixed[..d].to_vec(), mixed[d..].to_vec()], TOL);

        let img: Vec<f64> = v[0].iter().chain(&v[2]).cloned().collect();
        let txt: Vec<f64> = v[1].iter().chain(&v[3]).cloned().collect();
        let (cu, tu) = update_context(&v[0], &v[2], &v[1], &v[3], &p).unwrap();
        assert_close(
            &format!("update_context seed {seed}"),
            &[cu, tu],
            &[mlp(&img, &p.update_image), mlp(&txt, &p.update_text)],
            TOL,
        );
    }
}

pub fn check_split_and_pool(instances: u64) {
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let (n, m, d) = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=5));
        let y = rows(&mut rng, n + m, d, 3.0);
        let (f, p, fb, pb) = split_and_pool(&to_matrix(&y, d), n, m).unwrap();
        let mean = |rs: &[Vec<f64>]| -> Vec<f64> {
            (0..d).map(|c| rs.iter().map(|r| r[c]).sum::<f64>() / rs.len() as f64).collect()
        };
        assert_eq!(from_matrix(&f), y[..n].to_vec());
        assert_eq!(from_matrix(&p), y[n..].to_vec());
        assert_close(&format!("pool seed {seed}"), &[fb, pb], &[mean(&y[..n]), mean(&y[n..])], TOL);
    }
}

pub fn check_local_attention(instances: u64) {
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + seed);
        let (n, m, d) = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=6));
        let p = AlignmentParams {
            w_region: random_matrix(&mut rng, d, d, 1.0),
            w_word: random_matrix(&mut rng, d, d, 1.0),
            delta: 0.3,
            margin: 0.2,
        };
        let f = rows(&mut rng, n, d, 1.5);
        let w = rows(&mut rng, m, d, 1.5);
        let fr: Rows = f.iter().map(|r| vec_mat(r, &p.w_region)).collect();
        let wt: Rows = w.iter().map(|r| vec_mat(r, &p.w_word)).collect();
        let a: Rows = (0..n).map(|i| (0..m).map(|j| dot(&fr[i], &wt[j])).collect()).collect();
        let f_star: Rows = (0..n)
            .map(|i| {
                let s = softmax(&a[i]);
                (0..d).map(|c| (0..m).map(|j| s[j] * w[j][c]).sum()).collect()
            })
            .collect();
        let p_star: Rows = (0..m)
            .map(|j| {
                let s = softmax(&(0..n).map(|i| a[i][j]).collect::<Vec<_>>());
                (0..d).map(|c| (0..n).map(|i| s[i] * f[i][c]).sum()).collect()
            })
            .collect();
        let got = local_attention(&to_matrix(&f, d), &to_matrix(&w, d), &p).unwrap();
        let tag = format!("local_attention seed {seed}");
        assert_close_matrix(&tag, &got.affinity, &a, TOL);
        assert_close_matrix(&tag, &got.f_star, &f_star, TOL);
        assert_close_matrix(&tag, &got.p_star, &p_star, TOL);

        let s_l = f.iter().zip(&f_star).map(|(x, y)| cosine(x, y)).sum::<f64>() / n as f64
            + w.iter().zip(&p_star).map(|(x, y)| cosine(x, y)).sum::<f64>() / m as f64;
        let got_l = local_similarity(&to_matrix(&f, d), &got.f_star, &to_matrix(&w, d), &got.p_star).unwrap();
        assert!(rel_err(got_l, s_l) <= TOL, "{tag}: S_L {got_l} vs {s_l}");
    }
}

fn hardest(values: &[(usize, f64)]) -> usize {
    let top = values.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    values.iter().filter(|&&(_, v)| v == top).map(|&(i, _)| i).min().unwrap()
}

pub fn check_hard_negatives(instances: u64) {
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let b = rng.gen_range(2..=9);
        // Coarse values force frequent ties.
        let levels = if seed % 2 == 0 { 3 } else { 1000 };
        let s = Matrix::from_fn(b, b, |_, _| rng.gen_range(0..levels) as f64 / levels as f64);
        let got = mine_hard_negatives(&s).unwrap();
        for i in 0..b {
            let row: Vec<(usize, f64)> = (0..b).filter(|&j| j != i).map(|j| (j, s.get(i, j))).collect();
            let col: Vec<(usize, f64)> = (0..b).filter(|&j| j != i).map(|j| (j, s.get(j, i))).collect();
            assert_eq!(got.text_for_image[i], hardest(&row), "seed {seed} image {i}");
            assert_eq!(got.image_for_text[i], hardest(&col), "seed {seed} text {i}");
        }
    }
}
