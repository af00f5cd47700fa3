//! Seeded generator of matched image/text graph pairs.
//!
//! Both graphs of a pair mix one shared latent direction into every node,
//! relation, and attribute row, so matched pairs are more similar than
//! mismatched ones. Every row has norm `sqrt(d)`, the norm of the all-ones
//! agent node, so the agent does not swamp the graph features.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PairRecord, SceneGraph};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const LATENT_WEIGHT: f64 = 0.8;
const NOISE_WEIGHT: f64 = 0.6;
const CONTEXT_LATENT_WEIGHT: f64 = 0.5;
const EXTRA_EDGE_PROB: f64 = 0.3;

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn mixed_rows(rng: &mut ChaCha8Rng, rows: usize, latent: &[f64], weight: f64) -> Matrix {
    let d = latent.len();
    let scale = (d as f64).sqrt();
    let mut m = Matrix::zeros(rows, d);
    for r in 0..rows {
        let noise = unit_vector(rng, d);
        let row: Vec<f64> = latent
            .iter()
            .zip(&noise)
            .map(|(z, u)| weight * z + NOISE_WEIGHT * u)
            .collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt() / scale;
        for (dst, v) in m.row_mut(r).iter_mut().zip(row) {
            *dst = v / norm;
        }
    }
    m
}

fn synth_graph(
    rng: &mut ChaCha8Rng,
    latent: &[f64],
    nodes: usize,
    n_rel: usize,
    n_attr: usize,
) -> Result<SceneGraph> {
    let features = mixed_rows(rng, nodes, latent, LATENT_WEIGHT);
    let relations = mixed_rows(rng, n_rel, latent, CONTEXT_LATENT_WEIGHT);
    let attributes = mixed_rows(rng, n_attr, latent, CONTEXT_LATENT_WEIGHT);

    // A random spanning path keeps the graph connected; extra edges are sprinkled on top.
    let mut adjacency = vec![vec![0i64; nodes]; nodes];
    let mut order: Vec<usize> = (0..nodes).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for w in order.windows(2) {
        edges.push((w[0], w[1]));
    }
    for i in 0..nodes {
        for j in i + 1..nodes {
            let on_path = edges.iter().any(|&(a, b)| (a, b) == (i, j) || (a, b) == (j, i));
            if !on_path && rng.gen_bool(EXTRA_EDGE_PROB) {
                edges.push((i, j));
            }
        }
    }
    for &(a, b) in &edges {
        adjacency[a][b] = 1;
        adjacency[b][a] = 1;
    }

    let mut rel_incidence = vec![Vec::new(); nodes];
    for r in 0..n_rel {
        if edges.is_empty() {
            rel_incidence[0].push(r);
        } else {
            let (a, b) = edges[rng.gen_range(0..edges.len())];
            rel_incidence[a].push(r);
            rel_incidence[b].push(r);
        }
    }
    let mut attr_incidence = vec![Vec::new(); nodes];
    for a in 0..n_attr {
        attr_incidence[rng.gen_range(0..nodes)].push(a);
    }

    SceneGraph::new(features, relations, attributes, &adjacency, rel_incidence, attr_incidence)
}

/// One matched pair: an `n`-region image graph and an `m`-word text graph,
/// each with `n_rel` relations and `n_attr` attributes.
pub fn synth_pair(seed: u64, n: usize, m: usize, d: usize, n_rel: usize, n_attr: usize) -> Result<PairRecord> {
    if n == 0 || m == 0 || n_rel == 0 || n_attr == 0 {
        return Err(Error::Contract("synth_pair counts must be at least 1".into()));
    }
    if d < 4 {
        return Err(Error::Contract(format!("synth_pair needs d >= 4, got {d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = unit_vector(&mut rng, d);
    let image = synth_graph(&mut rng, &latent, n, n_rel, n_attr)?;
    let text = synth_graph(&mut rng, &latent, m, n_rel, n_attr)?;
    PairRecord::new(format!("synth-{seed:016x}"), image, text)
}

/// `pairs` independent matched pairs derived from one master seed.
pub fn synth_dataset(
    seed: u64,
    pairs: usize,
    n: usize,
    m: usize,
    d: usize,
    n_rel: usize,
    n_attr: usize,
) -> Result<Vec<PairRecord>> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|_| synth_pair(master.gen(), n, m, d, n_rel, n_attr))
        .collect()
}
