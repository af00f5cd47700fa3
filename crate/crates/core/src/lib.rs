//! Scene-graph fusion network for image-text retrieval.
//!
//! Pipeline per image/text pair:
//!
//! 1. [`intra_fusion`]: hierarchical attention over each modality's scene
//!    graph (object neighbors, relations, attributes) plus a global agent node.
//! 2. [`cross_fusion`]: the two agent rows become contextual vectors that
//!    gate a joint attention over regions and words.
//! 3. [`alignment`]: global (context cosine) and local (region-word
//!    attention) scores, the hard-negative hinge loss, and recall metrics.
//!
//! Everything runs on the dense [`numerics`] kernel, whose reverse-mode tape
//! drives training in [`harness`].

pub mod alignment;
pub mod cross_fusion;
pub mod error;
pub mod harness;
pub mod intra_fusion;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod scene_graph;

pub use error::{Error, Result};
