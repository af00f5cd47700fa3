use std::fmt;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::evaluate::evaluate;
use crate::error::{Error, Result};
use crate::model::{batch_gradient, ModelParams};
use crate::numerics::{GradientSet, Matrix, ParamSet};
use crate::scene_graph::PairRecord;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment estimates, keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: GradientSet,
    pub v: GradientSet,
}

impl Adam {
    pub fn new(params: &impl ParamSet) -> Self {
        let mut zeros = GradientSet::new();
        params.visit(&mut |name, p| {
            zeros.insert(name.to_string(), Matrix::zeros(p.rows(), p.cols()));
        });
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut impl ParamSet, grads: &GradientSet, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - ADAM_BETA1.powf(t);
        let c2 = 1.0 - ADAM_BETA2.powf(t);
        let mut failure = None;
        params.visit_mut(&mut |name, p| {
            let (Some(g), Some(m), Some(v)) = (grads.get(name), self.m.get_mut(name), self.v.get_mut(name)) else {
                failure.get_or_insert_with(|| Error::Contract(format!("no gradient or moment for {name}")));
                return;
            };
            if g.shape() != p.shape() {
                failure.get_or_insert_with(|| Error::Shape {
                    op: "adam",
                    detail: format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.shape()),
                });
                return;
            }
            let (m, v, p) = (m.as_mut_slice(), v.as_mut_slice(), p.as_mut_slice());
            for (k, &gk) in g.as_slice().iter().enumerate() {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gk;
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gk * gk;
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
            }
        });
        failure.map_or(Ok(()), Err)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    /// Object-branch weight `e^α/(e^α+e^β)` at the start of the epoch.
    pub ratio_image: f64,
    pub ratio_text: f64,
    pub val_rsum: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tmean_loss\tlr\tratio_image\tratio_text\tval_rsum";
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch, self.mean_loss, self.learning_rate, self.ratio_image, self.ratio_text, self.val_rsum
        )
    }
}

/// Training and held-out records.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<PairRecord>,
    pub val: Vec<PairRecord>,
}

/// Holds out `floor(val_fraction · N)` records, chosen by a generator
/// independent of the training stream.
pub fn split_dataset(records: &[PairRecord], val_fraction: f64, seed: u64) -> Result<Split> {
    if records.is_empty() {
        return Err(Error::Contract("training needs a nonempty dataset".into()));
    }
    let held = (val_fraction * records.len() as f64).floor() as usize;
    if held >= records.len() {
        return Err(Error::Config(format!(
            "val_fraction {val_fraction} leaves no training pairs out of {}",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    order.shuffle(&mut rng);
    let (val_idx, train_idx) = order.split_at(held);
    let mut val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok(Split {
        train: train_idx.iter().map(|&i| records[i].clone()).collect(),
        val: val_idx.iter().map(|&i| records[i].clone()).collect(),
    })
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub optimizer: Adam,
    /// Next epoch to run.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(&mut rng, &config.model_shape());
        let optimizer = Adam::new(&params);
        Ok(Self {
            config,
            params,
            optimizer,
            epoch: 0,
            rng,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn run_epoch(&mut self, split: &Split) -> Result<EpochLog> {
        let epoch = self.epoch;
        let (ratio_image, ratio_text) = self.params.fusion_ratios();
        let lr = self.config.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        order.shuffle(&mut self.rng);

        let mut losses = Vec::new();
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<PairRecord> = chunk.iter().map(|&i| split.train[i].clone()).collect();
            let step = batch_gradient(&self.params, &batch, self.config.loss_reduction)
                .and_then(|g| {
                    if g.loss.is_finite() {
                        Ok(g)
                    } else {
                        Err(Error::Numeric(format!("loss is {}", g.loss)))
                    }
                })
                .map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {b}: {msg}")),
                    other => other,
                })?;
            debug!("epoch {epoch} batch {b}: loss {}", step.loss);
            self.optimizer.update(&mut self.params, &step.gradients, lr)?;
            losses.push(step.loss);
        }
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let eval_set = if split.val.is_empty() { &split.train } else { &split.val };
        let val_rsum = evaluate(&self.params, eval_set)?.rsum;
        self.epoch += 1;
        let log = EpochLog {
            epoch,
            mean_loss,
            learning_rate: lr,
            ratio_image,
            ratio_text,
            val_rsum,
        };
        info!("{log}");
        Ok(log)
    }

    /// Runs the remaining epochs, handing each log to `on_epoch` as it completes.
    pub fn run(&mut self, split: &Split, mut on_epoch: impl FnMut(&Self, &EpochLog) -> Result<()>) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while !self.is_finished() {
            let log = self.run_epoch(split)?;
            on_epoch(self, &log)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

fn check_dimension(config: &TrainConfig, dataset: &[PairRecord]) -> Result<()> {
    for r in dataset {
        if r.dim() != config.d {
            return Err(Error::Validation {
                pair_id: r.pair_id.clone(),
                modality: "pair",
                rule: format!("feature dimension {} does not match config d = {}", r.dim(), config.d),
            });
        }
    }
    Ok(())
}

/// Splits `dataset` by `config.val_fraction` and trains for `config.epochs`.
pub fn train(config: &TrainConfig, dataset: &[PairRecord]) -> Result<(ModelParams, Vec<EpochLog>)> {
    config.validate()?;
    check_dimension(config, dataset)?;
    let split = split_dataset(dataset, config.val_fraction, config.seed)?;
    let mut state = TrainState::new(config.clone())?;
    let logs = state.run(&split, |_, _| Ok(()))?;
    Ok((state.params, logs))
}

/// Prepares the split for a state that may be partway through its run.
pub fn prepare(config: &TrainConfig, dataset: &[PairRecord]) -> Result<Split> {
    config.validate()?;
    check_dimension(config, dataset)?;
    split_dataset(dataset, config.val_fraction, config.seed)
}
