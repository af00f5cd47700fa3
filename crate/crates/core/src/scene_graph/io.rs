//! JSON dataset format.
//!
//! ```text
//! { "dimension": d,
//!   "records": [ { "pair_id": "...", "image": GRAPH, "text": GRAPH } ] }
//! GRAPH = { "nodes": [[d reals]..], "relations": [[..]], "attributes": [[..]],
//!           "adjacency": [[0|1 ..]..], "rel_incidence": [[idx..] per node],
//!           "attr_incidence": [[idx..] per node] }
//! ```
//!
//! Reals are written in shortest round-trip form and parsed with exact
//! rounding, so save/load preserves every bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PairRecord, SceneGraph};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub nodes: Vec<Vec<f64>>,
    #[serde(default)]
    pub relations: Vec<Vec<f64>>,
    #[serde(default)]
    pub attributes: Vec<Vec<f64>>,
    pub adjacency: Vec<Vec<i64>>,
    pub rel_incidence: Vec<Vec<usize>>,
    pub attr_incidence: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordFile {
    pub pair_id: String,
    pub image: GraphFile,
    pub text: GraphFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub dimension: usize,
    pub records: Vec<RecordFile>,
}

fn rows_to_matrix(rows: &[Vec<f64>], d: usize, what: &str) -> std::result::Result<Matrix, String> {
    Matrix::from_rows(rows, d).map_err(|_| {
        let bad = rows.iter().position(|r| r.len() != d).unwrap_or(0);
        format!("{what} row {bad} has {} values, dataset dimension is {d}", rows[bad].len())
    })
}

impl GraphFile {
    pub fn from_graph(g: &SceneGraph) -> Self {
        let rows = |m: &Matrix| (0..m.rows()).map(|r| m.row(r).to_vec()).collect();
        Self {
            nodes: rows(g.node_features()),
            relations: rows(g.relation_features()),
            attributes: rows(g.attribute_features()),
            adjacency: g.adjacency_rows(),
            rel_incidence: g.rel_incidence().to_vec(),
            attr_incidence: g.attr_incidence().to_vec(),
        }
    }

    /// Validates against dimension `d`; errors carry the pair and modality.
    pub fn to_graph(&self, d: usize, pair_id: &str, modality: &'static str) -> Result<SceneGraph> {
        let fail = |rule: String| Error::Validation {
            pair_id: pair_id.to_string(),
            modality,
            rule,
        };
        let nodes = rows_to_matrix(&self.nodes, d, "node").map_err(fail)?;
        let relations = rows_to_matrix(&self.relations, d, "relation").map_err(fail)?;
        let attributes = rows_to_matrix(&self.attributes, d, "attribute").map_err(fail)?;
        SceneGraph::new(
            nodes,
            relations,
            attributes,
            &self.adjacency,
            self.rel_incidence.clone(),
            self.attr_incidence.clone(),
        )
        .map_err(|e| match e {
            Error::Validation { rule, .. } => fail(rule),
            other => other,
        })
    }
}

impl DatasetFile {
    pub fn from_records(records: &[PairRecord]) -> Result<Self> {
        let dimension = records.first().map_or(0, PairRecord::dim);
        if let Some(r) = records.iter().find(|r| r.dim() != dimension) {
            return Err(Error::Validation {
                pair_id: r.pair_id.clone(),
                modality: "pair",
                rule: format!("dimension {} differs from dataset dimension {dimension}", r.dim()),
            });
        }
        Ok(Self {
            dimension,
            records: records
                .iter()
                .map(|r| RecordFile {
                    pair_id: r.pair_id.clone(),
                    image: GraphFile::from_graph(&r.image),
                    text: GraphFile::from_graph(&r.text),
                })
                .collect(),
        })
    }

    pub fn into_records(self) -> Result<Vec<PairRecord>> {
        let d = self.dimension;
        self.records
            .iter()
            .map(|r| {
                let image = r.image.to_graph(d, &r.pair_id, "image")?;
                let text = r.text.to_graph(d, &r.pair_id, "text")?;
                PairRecord::new(r.pair_id.clone(), image, text)
            })
            .collect()
    }
}

/// Parses and validates a dataset document.
pub fn parse_dataset(text: &str) -> Result<Vec<PairRecord>> {
    let file: DatasetFile = serde_json::from_str(text).map_err(|e| Error::from_json(&e))?;
    file.into_records()
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn to_json(records: &[PairRecord]) -> Result<String> {
    let file = DatasetFile::from_records(records)?;
    serde_json::to_string(&file).map_err(|e| Error::from_json(&e))
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[PairRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json(records)?).map_err(|e| Error::io(path, e))
}
