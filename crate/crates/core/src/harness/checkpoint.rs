//! Checkpoint format: a JSON document followed by a final line
//! `checksum crc32:XXXXXXXX` covering every byte before that line.

use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::train::{Adam, TrainState};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::{Matrix, ParamSet};

pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_PREFIX: &str = "checksum crc32:";

/// A saved training run.
pub type Checkpoint = TrainState;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Tensor {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format_version: u32,
    config: TrainConfig,
    epoch: usize,
    rng: RngState,
    adam_step: u64,
    params: Vec<Tensor>,
    adam_m: Vec<Tensor>,
    adam_v: Vec<Tensor>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn tensors(set: &impl ParamSet) -> Vec<Tensor> {
    let mut out = Vec::new();
    set.visit(&mut |name, m| {
        out.push(Tensor {
            name: name.to_string(),
            shape: [m.rows(), m.cols()],
            values: m.as_slice().to_vec(),
        })
    });
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

/// Serializes `cp` to the checkpoint text format.
pub fn to_text(cp: &Checkpoint) -> Result<String> {
    let doc = Document {
        format_version: FORMAT_VERSION,
        config: cp.config.clone(),
        epoch: cp.epoch,
        rng: RngState {
            seed: hex(&cp.rng.get_seed()),
            stream: cp.rng.get_stream(),
            word_pos: cp.rng.get_word_pos().to_string(),
        },
        adam_step: cp.optimizer.step,
        params: tensors(&cp.params),
        adam_m: tensors(&cp.optimizer.m),
        adam_v: tensors(&cp.optimizer.v),
    };
    let mut body = serde_json::to_string_pretty(&doc).map_err(|e| Error::Contract(e.to_string()))?;
    body.push('\n');
    let crc = crc32fast::hash(body.as_bytes());
    Ok(format!("{body}{CHECKSUM_PREFIX}{crc:08x}\n"))
}

fn corrupt(path: &str, detail: impl Into<String>) -> Error {
    Error::Checksum {
        path: path.into(),
        detail: detail.into(),
    }
}

fn fill(set: &mut impl ParamSet, tensors: Vec<Tensor>, what: &str, path: &str) -> Result<()> {
    let expected: BTreeSet<String> = set.names().into_iter().collect();
    let found: BTreeSet<String> = tensors.iter().map(|t| t.name.clone()).collect();
    if expected != found || tensors.len() != expected.len() {
        let missing: Vec<_> = expected.difference(&found).collect();
        let extra: Vec<_> = found.difference(&expected).collect();
        return Err(Error::Format {
            line: 0,
            column: 0,
            message: format!("{path}: {what} tensors do not match the model (missing {missing:?}, unexpected {extra:?})"),
        });
    }
    let mut by_name: std::collections::BTreeMap<String, Tensor> = tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let mut failure = None;
    set.visit_mut(&mut |name, m| {
        let t = by_name.remove(name).expect("name sets checked above");
        if t.shape != [m.rows(), m.cols()] {
            failure.get_or_insert_with(|| Error::Shape {
                op: "checkpoint",
                detail: format!("{what} {name} has shape {:?}, model expects {:?}", t.shape, m.shape()),
            });
            return;
        }
        match Matrix::new(t.shape[0], t.shape[1], t.values) {
            Ok(v) => *m = v,
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    });
    failure.map_or(Ok(()), Err)
}

/// Parses checkpoint text. `path` is used only for error messages.
pub fn from_text(text: &str, path: &str) -> Result<Checkpoint> {
    let body_end = text
        .trim_end_matches('\n')
        .rfind('\n')
        .map(|i| i + 1)
        .ok_or_else(|| corrupt(path, "no checksum line"))?;
    let (body, tail) = text.split_at(body_end);
    let stated = tail
        .trim_end()
        .strip_prefix(CHECKSUM_PREFIX)
        .and_then(|h| u32::from_str_radix(h, 16).ok())
        .ok_or_else(|| corrupt(path, "missing or malformed checksum line"))?;
    let actual = crc32fast::hash(body.as_bytes());
    if stated != actual {
        return Err(corrupt(path, format!("stored crc32 {stated:08x}, content hashes to {actual:08x}")));
    }

    let probe: VersionProbe = serde_json::from_str(body).map_err(|e| Error::from_json(&e))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: probe.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let doc: Document = serde_json::from_str(body).map_err(|e| Error::from_json(&e))?;
    doc.config.validate()?;

    let mut skeleton_rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ModelParams::init(&mut skeleton_rng, &doc.config.model_shape());
    fill(&mut params, doc.params, "parameter", path)?;
    let mut optimizer = Adam::new(&params);
    optimizer.step = doc.adam_step;
    fill(&mut optimizer.m, doc.adam_m, "adam_m", path)?;
    fill(&mut optimizer.v, doc.adam_v, "adam_v", path)?;

    let seed = unhex(&doc.rng.seed).ok_or_else(|| Error::Format {
        line: 0,
        column: 0,
        message: format!("{path}: rng seed must be 64 hex digits"),
    })?;
    let word_pos: u128 = doc.rng.word_pos.parse().map_err(|_| Error::Format {
        line: 0,
        column: 0,
        message: format!("{path}: rng word_pos {:?} is not an integer", doc.rng.word_pos),
    })?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(doc.rng.stream);
    rng.set_word_pos(word_pos);

    Ok(TrainState {
        config: doc.config,
        params,
        optimizer,
        epoch: doc.epoch,
        rng,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, cp: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let text = to_text(cp)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, &path.display().to_string())
}
