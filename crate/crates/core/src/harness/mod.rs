//! Configuration, training, evaluation, retrieval, checkpoints and gradient checks.

mod checkpoint;
mod config;
mod evaluate;
mod gradcheck;
mod retrieve;
mod train;

pub use checkpoint::{from_text, load_checkpoint, save_checkpoint, to_text, Checkpoint, FORMAT_VERSION};
pub use config::TrainConfig;
pub use evaluate::{evaluate, rank_desc, report_from_scores, RECALL_KS};
pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use retrieve::{retrieve, Hit, Modality, RegionWord, Retrieval};
pub use train::{prepare, split_dataset, train, Adam, EpochLog, Split, TrainState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
