use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::rank_desc;
use crate::error::{Error, Result};
use crate::model::{encode_image, encode_text, pair_attention, score_pair, Encoding, ModelParams};
use crate::scene_graph::{PairRecord, SceneGraph};

/// Which side of a pair the query graph comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    pub rank: usize,
    pub index: usize,
    pub pair_id: String,
    pub score: f64,
}

/// One region-word entry of the affinity matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionWord {
    pub region: usize,
    pub word: usize,
    pub affinity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Retrieval {
    pub hits: Vec<Hit>,
    /// Strongest region-word pairs of the top hit, when requested.
    pub explanation: Vec<RegionWord>,
}

/// Ranks the other modality of every gallery record against `query`.
pub fn retrieve(
    params: &ModelParams,
    query: &SceneGraph,
    modality: Modality,
    gallery: &[PairRecord],
    topk: usize,
    explain: usize,
) -> Result<Retrieval> {
    if gallery.is_empty() {
        return Err(Error::Contract("retrieval needs a nonempty gallery".into()));
    }
    if topk == 0 {
        return Err(Error::Contract("topk must be at least 1".into()));
    }
    params.check()?;
    let q = match modality {
        Modality::Image => encode_image(params, query)?,
        Modality::Text => encode_text(params, query)?,
    };
    let candidates: Vec<Encoding> = gallery
        .par_iter()
        .map(|r| match modality {
            Modality::Image => encode_text(params, &r.text),
            Modality::Text => encode_image(params, &r.image),
        })
        .collect::<Result<_>>()?;
    let ordered = |c: &Encoding| match modality {
        Modality::Image => (q.clone(), c.clone()),
        Modality::Text => (c.clone(), q.clone()),
    };
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|c| {
            let (img, txt) = ordered(c);
            score_pair(params, &img, &txt)
        })
        .collect::<Result<_>>()?;
    let hits: Vec<Hit> = rank_desc(&scores)
        .into_iter()
        .take(topk)
        .enumerate()
        .map(|(r, i)| Hit {
            rank: r + 1,
            index: i,
            pair_id: gallery[i].pair_id.clone(),
            score: scores[i],
        })
        .collect();

    let mut explanation = Vec::new();
    if explain > 0 {
        let (img, txt) = ordered(&candidates[hits[0].index]);
        let a = pair_attention(params, &img, &txt)?.affinity;
        let flat: Vec<f64> = a.as_slice().to_vec();
        explanation = rank_desc(&flat)
            .into_iter()
            .take(explain)
            .map(|k| RegionWord {
                region: k / a.cols(),
                word: k % a.cols(),
                affinity: flat[k],
            })
            .collect();
    }
    Ok(Retrieval { hits, explanation })
}
