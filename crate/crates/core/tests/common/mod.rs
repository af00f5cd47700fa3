#![allow(dead_code)]

pub mod oracle;
pub mod toy;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sgfn::numerics::Matrix;
use sgfn::scene_graph::SceneGraph;

/// A graph together with the raw inputs it was built from.
pub struct RawGraph {
    pub graph: SceneGraph,
    pub nodes: Vec<Vec<f64>>,
    pub relations: Vec<Vec<f64>>,
    pub attributes: Vec<Vec<f64>>,
    pub adjacency: Vec<Vec<i64>>,
    pub rel_incidence: Vec<Vec<usize>>,
    pub attr_incidence: Vec<Vec<usize>>,
}

pub fn rows(rng: &mut ChaCha8Rng, count: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..d).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect()
}

pub fn to_matrix(rows: &[Vec<f64>], cols: usize) -> Matrix {
    Matrix::from_rows(rows, cols).unwrap()
}

pub fn from_matrix(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    to_matrix(&rows(rng, r, c, scale), c)
}

/// Random directed graph; nodes may be isolated and may lack relations or attributes.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, d: usize) -> RawGraph {
    let nodes = rows(rng, n, d, 1.5);
    let adjacency: Vec<Vec<i64>> = (0..n)
        .map(|i| (0..n).map(|j| i64::from(i != j && rng.gen_bool(0.4))).collect())
        .collect();
    let n_rel = rng.gen_range(0..=3);
    let relations = rows(rng, n_rel, d, 1.0);
    let mut rel_incidence = vec![Vec::new(); n];
    for r in 0..n_rel {
        let a = rng.gen_range(0..n);
        rel_incidence[a].push(r);
        let b = rng.gen_range(0..n);
        if b != a {
            rel_incidence[b].push(r);
        }
    }
    let n_attr = rng.gen_range(0..=3);
    let attributes = rows(rng, n_attr, d, 1.0);
    let mut attr_incidence = vec![Vec::new(); n];
    for a in 0..n_attr {
        attr_incidence[rng.gen_range(0..n)].push(a);
    }
    let graph = SceneGraph::new(
        to_matrix(&nodes, d),
        to_matrix(&relations, d),
        to_matrix(&attributes, d),
        &adjacency,
        rel_incidence.clone(),
        attr_incidence.clone(),
    )
    .unwrap();
    RawGraph {
        graph,
        nodes,
        relations,
        attributes,
        adjacency,
        rel_incidence,
        attr_incidence,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn assert_close(what: &str, got: &[Vec<f64>], want: &[Vec<f64>], tol: f64) {
    assert_eq!(got.len(), want.len(), "{what}: row count");
    for (r, (g, w)) in got.iter().zip(want).enumerate() {
        assert_eq!(g.len(), w.len(), "{what}: width of row {r}");
        for (c, (x, y)) in g.iter().zip(w).enumerate() {
            assert!(rel_err(*x, *y) <= tol, "{what}[{r}][{c}]: {x} vs {y}");
        }
    }
}

pub fn assert_close_matrix(what: &str, got: &Matrix, want: &[Vec<f64>], tol: f64) {
    assert_close(what, &from_matrix(got), want, tol);
}
