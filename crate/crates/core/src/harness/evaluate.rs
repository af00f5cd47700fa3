use log::warn;

use crate::alignment::{recall_at_k, RetrievalReport};
use crate::error::{Error, Result};
use crate::model::{dataset_scores, ModelParams};
use crate::numerics::Matrix;
use crate::scene_graph::PairRecord;

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

/// Indices sorted by descending score; equal scores keep index order.
pub fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Recalls from a square score matrix whose diagonal holds the true pairs.
pub fn report_from_scores(s: &Matrix) -> Result<RetrievalReport> {
    let n = s.rows();
    if n == 0 || s.cols() != n {
        return Err(Error::Shape {
            op: "evaluate",
            detail: format!("score matrix must be square and nonempty, got {:?}", s.shape()),
        });
    }
    if n < RECALL_KS[2] {
        warn!("gallery of {n} is smaller than k = {}; recall covers the whole gallery", RECALL_KS[2]);
    }
    let truth: Vec<usize> = (0..n).collect();
    let by_image: Vec<Vec<usize>> = (0..n).map(|i| rank_desc(s.row(i))).collect();
    let by_text: Vec<Vec<usize>> = (0..n)
        .map(|j| rank_desc(&(0..n).map(|i| s.get(i, j)).collect::<Vec<_>>()))
        .collect();
    let mut i2t = [0.0; 3];
    let mut t2i = [0.0; 3];
    for (slot, &k) in RECALL_KS.iter().enumerate() {
        i2t[slot] = recall_at_k(&by_image, &truth, k)?;
        t2i[slot] = recall_at_k(&by_text, &truth, k)?;
    }
    Ok(RetrievalReport::new(i2t, t2i))
}

/// Scores all images against all texts of `dataset` and reports recall.
pub fn evaluate(params: &ModelParams, dataset: &[PairRecord]) -> Result<RetrievalReport> {
    if dataset.is_empty() {
        return Err(Error::Contract("evaluation over an empty dataset".into()));
    }
    report_from_scores(&dataset_scores(params, dataset)?)
}
