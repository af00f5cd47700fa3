use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Percentage of queries whose true match is within the first `k` results.
pub fn recall_at_k(rank_lists: &[Vec<usize>], truth: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Contract("recall@k needs k >= 1".into()));
    }
    if rank_lists.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} ranked lists for {} ground-truth ids",
            rank_lists.len(),
            truth.len()
        )));
    }
    if rank_lists.is_empty() {
        return Err(Error::Contract("recall@k over zero queries".into()));
    }
    let mut hits = 0usize;
    for (q, (ranked, &target)) in rank_lists.iter().zip(truth).enumerate() {
        let pos = ranked
            .iter()
            .position(|&id| id == target)
            .ok_or_else(|| Error::Contract(format!("query {q}: match {target} missing from its gallery")))?;
        if pos < k {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / rank_lists.len() as f64)
}

/// Sum of R@1/5/10 for image queries followed by text queries, added in that order.
pub fn rsum(recalls: &[f64; 6]) -> f64 {
    recalls.iter().fold(0.0, |acc, r| acc + r)
}

/// Recall@{1,5,10} in both retrieval directions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    /// Image as query, texts ranked.
    pub image_to_text: [f64; 3],
    /// Text as query, images ranked.
    pub text_to_image: [f64; 3],
    pub rsum: f64,
}

impl RetrievalReport {
    pub fn new(image_to_text: [f64; 3], text_to_image: [f64; 3]) -> Self {
        let all = [
            image_to_text[0],
            image_to_text[1],
            image_to_text[2],
            text_to_image[0],
            text_to_image[1],
            text_to_image[2],
        ];
        Self {
            image_to_text,
            text_to_image,
            rsum: rsum(&all),
        }
    }
}

impl std::fmt::Display for RetrievalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [a, b, c] = self.image_to_text;
        let [x, y, z] = self.text_to_image;
        write!(
            f,
            "i2t R@1 {a:.1} R@5 {b:.1} R@10 {c:.1} | t2i R@1 {x:.1} R@5 {y:.1} R@10 {z:.1} | rSum {:.1}",
            self.rsum
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking() {
        let ranks = vec![vec![0, 1, 2], vec![1, 0, 2], vec![2, 1, 0]];
        assert_eq!(recall_at_k(&ranks, &[0, 1, 2], 1).unwrap(), 100.0);
    }

    #[test]
    fn one_of_four_hits_at_one() {
        let ranks = vec![vec![0, 1, 2, 3], vec![0, 1, 2, 3], vec![3, 1, 0, 2], vec![2, 0, 1, 3]];
        assert_eq!(recall_at_k(&ranks, &[0, 1, 2, 3], 1).unwrap(), 25.0);
        let mut prev = 0.0;
        for k in 1..=5 {
            let r = recall_at_k(&ranks, &[0, 1, 2, 3], k).unwrap();
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn missing_truth_is_an_error() {
        assert!(recall_at_k(&[vec![1, 2]], &[0], 1).is_err());
        assert!(recall_at_k(&[vec![0]], &[0], 0).is_err());
    }

    #[test]
    fn rsum_reproduces_reported_totals() {
        assert_eq!(rsum(&[81.5, 97.6, 98.4, 58.2, 82.5, 91.8]), 510.0);
        assert_eq!(rsum(&[81.1, 96.9, 99.0, 63.1, 90.2, 97.1]), 527.4);
        assert_eq!(rsum(&[0.0; 6]), 0.0);
    }

    #[test]
    fn report_rsum_is_sum_of_its_recalls() {
        let r = RetrievalReport::new([50.0, 75.0, 100.0], [25.0, 62.5, 87.5]);
        assert_eq!(r.rsum, 400.0);
    }
}
