//! The separable toy retrieval setup shared by the training tests.

use sgfn::harness::TrainConfig;
use sgfn::scene_graph::{synth_dataset, PairRecord};

pub const PAIRS: usize = 64;
pub const DIM: usize = 16;
pub const EPOCHS: usize = 200;
pub const LEARNING_RATE: f64 = 2e-3;

pub fn dataset() -> Vec<PairRecord> {
    synth_dataset(7, PAIRS, 4, 5, DIM, 2, 2).unwrap()
}

/// Defaults everywhere except the learning rate, epoch count and split.
pub fn config() -> TrainConfig {
    let mut cfg = TrainConfig::new(DIM);
    cfg.epochs = EPOCHS;
    cfg.learning_rate = LEARNING_RATE;
    cfg.val_fraction = 0.0;
    cfg.seed = 1;
    cfg
}
