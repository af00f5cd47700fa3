//! Heterogeneous scene graphs for both modalities.
//!
//! Object nodes carry the per-region (image) or per-word (text) features.
//! Relations and attributes are feature-bearing decorations attached to
//! nodes through incidence lists. A global agent node is not stored as a
//! graph row; the fusion stage appends it from [`SceneGraph::agent_init`].

mod io;
mod synth;

use std::collections::BTreeSet;

pub use io::{load_dataset, parse_dataset, save_dataset, to_json, DatasetFile, GraphFile, RecordFile};
pub use synth::{synth_dataset, synth_pair};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    node_features: Matrix,
    relation_features: Matrix,
    attribute_features: Matrix,
    adjacency: Vec<bool>,
    rel_incidence: Vec<Vec<usize>>,
    attr_incidence: Vec<Vec<usize>>,
    agent_init: Vec<f64>,
}

/// The three neighbor sets of one object node.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Neighborhood {
    pub nodes: BTreeSet<usize>,
    pub relations: BTreeSet<usize>,
    pub attributes: BTreeSet<usize>,
}

fn invalid(rule: impl Into<String>) -> Error {
    Error::Validation {
        pair_id: String::new(),
        modality: "graph",
        rule: rule.into(),
    }
}

impl SceneGraph {
    /// Builds a graph and checks every structural invariant.
    ///
    /// `adjacency` is given row by row; entries must be 0 or 1.
    pub fn new(
        node_features: Matrix,
        relation_features: Matrix,
        attribute_features: Matrix,
        adjacency: &[Vec<i64>],
        rel_incidence: Vec<Vec<usize>>,
        attr_incidence: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let n = node_features.rows();
        let d = node_features.cols();
        if n == 0 {
            return Err(invalid("graph has no object nodes"));
        }
        if d == 0 {
            return Err(invalid("feature dimension is zero"));
        }
        for (what, m) in [("relation", &relation_features), ("attribute", &attribute_features)] {
            if m.cols() != d {
                return Err(invalid(format!(
                    "{what} features have width {}, node features have width {d}",
                    m.cols()
                )));
            }
        }
        for (what, m) in [
            ("node", &node_features),
            ("relation", &relation_features),
            ("attribute", &attribute_features),
        ] {
            if !m.is_finite() {
                return Err(invalid(format!("{what} features contain a non-finite value")));
            }
        }

        if adjacency.len() != n {
            return Err(invalid(format!("adjacency has {} rows for {n} nodes", adjacency.len())));
        }
        let mut adj = Vec::with_capacity(n * n);
        for (i, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(invalid(format!(
                    "adjacency is not square: row {i} has {} entries for {n} nodes",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => adj.push(false),
                    1 => adj.push(true),
                    other => {
                        return Err(invalid(format!("adjacency[{i}][{j}] = {other}, expected 0 or 1")))
                    }
                }
            }
        }

        let n_rel = relation_features.rows();
        let n_attr = attribute_features.rows();
        for (what, inc) in [("rel_incidence", &rel_incidence), ("attr_incidence", &attr_incidence)] {
            if inc.len() != n {
                return Err(invalid(format!("{what} has {} entries for {n} nodes", inc.len())));
            }
        }
        let mut rel_hits = vec![0usize; n_rel];
        for (i, list) in rel_incidence.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for &r in list {
                if r >= n_rel {
                    return Err(invalid(format!("node {i} references relation {r}, only {n_rel} exist")));
                }
                if !seen.insert(r) {
                    return Err(invalid(format!("node {i} lists relation {r} twice")));
                }
                rel_hits[r] += 1;
            }
        }
        if let Some(r) = rel_hits.iter().position(|&c| c == 0) {
            return Err(invalid(format!("relation {r} is not incident to any node")));
        }
        let mut attr_hits = vec![0usize; n_attr];
        for (i, list) in attr_incidence.iter().enumerate() {
            for &a in list {
                if a >= n_attr {
                    return Err(invalid(format!("node {i} references attribute {a}, only {n_attr} exist")));
                }
                attr_hits[a] += 1;
            }
        }
        if let Some(a) = attr_hits.iter().position(|&c| c != 1) {
            return Err(invalid(format!(
                "attribute {a} is attached to {} nodes, expected exactly one",
                attr_hits[a]
            )));
        }

        Ok(Self {
            node_features,
            relation_features,
            attribute_features,
            adjacency: adj,
            rel_incidence,
            attr_incidence,
            agent_init: vec![1.0; d],
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_features.rows()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_features.rows()
    }

    pub fn attribute_count(&self) -> usize {
        self.attribute_features.rows()
    }

    pub fn dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn node_features(&self) -> &Matrix {
        &self.node_features
    }

    pub fn relation_features(&self) -> &Matrix {
        &self.relation_features
    }

    pub fn attribute_features(&self) -> &Matrix {
        &self.attribute_features
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.node_count() + j]
    }

    pub fn rel_incidence(&self) -> &[Vec<usize>] {
        &self.rel_incidence
    }

    pub fn attr_incidence(&self) -> &[Vec<usize>] {
        &self.attr_incidence
    }

    pub fn agent_init(&self) -> &[f64] {
        &self.agent_init
    }

    /// Adjacency as 0/1 rows.
    pub fn adjacency_rows(&self) -> Vec<Vec<i64>> {
        let n = self.node_count();
        (0..n)
            .map(|i| (0..n).map(|j| i64::from(self.is_adjacent(i, j))).collect())
            .collect()
    }

    /// Object neighbors (always including `i` itself), adjacent relations,
    /// and attached attributes of node `i`.
    pub fn neighbors(&self, i: usize) -> Result<Neighborhood> {
        let n = self.node_count();
        if i >= n {
            return Err(Error::Contract(format!("node {i} out of range for {n} nodes")));
        }
        let mut nodes: BTreeSet<usize> = (0..n).filter(|&j| self.is_adjacent(i, j)).collect();
        nodes.insert(i);
        Ok(Neighborhood {
            nodes,
            relations: self.rel_incidence[i].iter().copied().collect(),
            attributes: self.attr_incidence[i].iter().copied().collect(),
        })
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Self> {
        let n = self.node_count();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if perm.len() != n || check.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(Error::Contract(format!("not a permutation of 0..{n}")));
        }
        let mut features = Matrix::zeros(n, self.dim());
        let mut adjacency = vec![vec![0i64; n]; n];
        let mut rel = vec![Vec::new(); n];
        let mut attr = vec![Vec::new(); n];
        for i in 0..n {
            features.row_mut(perm[i]).copy_from_slice(self.node_features.row(i));
            for j in 0..n {
                adjacency[perm[i]][perm[j]] = i64::from(self.is_adjacent(i, j));
            }
            rel[perm[i]] = self.rel_incidence[i].clone();
            attr[perm[i]] = self.attr_incidence[i].clone();
        }
        Self::new(
            features,
            self.relation_features.clone(),
            self.attribute_features.clone(),
            &adjacency,
            rel,
            attr,
        )
    }
}

/// A matched image-text pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord {
    pub pair_id: String,
    pub image: SceneGraph,
    pub text: SceneGraph,
}

impl PairRecord {
    pub fn new(pair_id: impl Into<String>, image: SceneGraph, text: SceneGraph) -> Result<Self> {
        let pair_id = pair_id.into();
        if image.dim() != text.dim() {
            return Err(Error::Validation {
                pair_id,
                modality: "pair",
                rule: format!("image dimension {} differs from text dimension {}", image.dim(), text.dim()),
            });
        }
        Ok(Self { pair_id, image, text })
    }

    pub fn dim(&self) -> usize {
        self.image.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(rows: usize, d: usize) -> Matrix {
        Matrix::from_fn(rows, d, |r, c| (r + c) as f64 * 0.1 + 0.05)
    }

    fn two_nodes_one_relation() -> SceneGraph {
        SceneGraph::new(
            feats(2, 4),
            feats(1, 4),
            Matrix::zeros(0, 4),
            &[vec![0, 1], vec![1, 0]],
            vec![vec![0], vec![0]],
            vec![vec![], vec![]],
        )
        .unwrap()
    }

    #[test]
    fn neighbors_of_joined_pair() {
        let g = two_nodes_one_relation();
        let nb = g.neighbors(0).unwrap();
        assert_eq!(nb.nodes, BTreeSet::from([0, 1]));
        assert_eq!(nb.relations, BTreeSet::from([0]));
        assert!(nb.attributes.is_empty());
    }

    #[test]
    fn isolated_node_has_only_itself() {
        let g = SceneGraph::new(
            feats(2, 4),
            Matrix::zeros(0, 4),
            feats(1, 4),
            &[vec![0, 0], vec![0, 0]],
            vec![vec![], vec![]],
            vec![vec![], vec![0]],
        )
        .unwrap();
        let nb = g.neighbors(0).unwrap();
        assert_eq!(nb.nodes, BTreeSet::from([0]));
        assert!(nb.relations.is_empty() && nb.attributes.is_empty());
        assert_eq!(g.neighbors(1).unwrap().attributes, BTreeSet::from([0]));
    }

    #[test]
    fn neighbors_out_of_range() {
        assert!(matches!(two_nodes_one_relation().neighbors(2), Err(Error::Contract(_))));
    }

    #[test]
    fn agent_starts_as_ones() {
        assert_eq!(two_nodes_one_relation().agent_init(), &[1.0; 4]);
    }

    #[test]
    fn non_square_adjacency_is_rejected() {
        let err = SceneGraph::new(
            feats(2, 4),
            Matrix::zeros(0, 4),
            Matrix::zeros(0, 4),
            &[vec![0, 1, 0], vec![1, 0, 0]],
            vec![vec![], vec![]],
            vec![vec![], vec![]],
        )
        .unwrap_err();
        assert!(err.to_string().contains("not square"), "{err}");
    }

    #[test]
    fn permutation_moves_rows_and_incidences() {
        let g = SceneGraph::new(
            feats(3, 4),
            feats(1, 4),
            feats(1, 4),
            &[vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 0]],
            vec![vec![0], vec![0], vec![]],
            vec![vec![], vec![], vec![0]],
        )
        .unwrap();
        let p = g.permute_nodes(&[2, 0, 1]).unwrap();
        assert_eq!(p.node_features().row(2), g.node_features().row(0));
        assert!(p.is_adjacent(2, 0));
        assert_eq!(p.attr_incidence()[1], vec![0]);
        assert!(g.permute_nodes(&[0, 0, 1]).is_err());
    }
}
