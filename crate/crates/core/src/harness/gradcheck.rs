use std::fmt;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::LossReduction;
use crate::error::{Error, Result};
use crate::model::{batch_gradient, batch_loss, ModelParams, ModelShape};
use crate::numerics::{finite_diff_grad, group_relative_error, GradientSet};
use crate::scene_graph::synth_dataset;

/// Instance sizes and tolerances for a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub heads: usize,
    pub batch: usize,
    pub relations: usize,
    pub attributes: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Instances whose nearest kink is closer than this are resampled.
    pub kink_threshold: f64,
    pub attempts: usize,
    pub reduction: LossReduction,
    /// Adds a known error to one analytic gradient entry.
    pub inject_fault: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            n: 4,
            m: 5,
            d: 8,
            heads: 2,
            batch: 4,
            relations: 2,
            attributes: 2,
            eps: 1e-5,
            tolerance: 1e-5,
            kink_threshold: 1e-4,
            attempts: 10,
            reduction: LossReduction::Sum,
            inject_fault: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub attempts: usize,
    pub loss: f64,
    pub kink_margin: f64,
    /// `(parameter, max relative error)` in name order.
    pub per_parameter: Vec<(String, f64)>,
    pub max_error: f64,
    pub worst: String,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "seed {} (attempt {}), loss {}, kink margin {:.3e}",
            self.seed, self.attempts, self.loss, self.kink_margin
        )?;
        for (name, err) in &self.per_parameter {
            writeln!(f, "  {name:<40} {err:.3e}")?;
        }
        write!(
            f,
            "max relative error {:.3e} at {} (tolerance {:.0e}): {}",
            self.max_error,
            self.worst,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Per-parameter errors, the maximum, and the parameter where it occurs.
type Comparison = (Vec<(String, f64)>, f64, String);

fn compare(analytic: &GradientSet, oracle: &GradientSet) -> Result<Comparison> {
    let mut per = Vec::new();
    let (mut max, mut worst) = (0.0f64, String::new());
    for (name, fd) in oracle {
        let ad = analytic
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no analytic gradient for {name}")))?;
        let err = group_relative_error(ad, fd)?;
        if err > max || worst.is_empty() {
            max = err;
            worst = name.clone();
        }
        per.push((name.clone(), err));
    }
    Ok((per, max, worst))
}

/// Backward pass against central finite differences on the full ranking loss.
pub fn gradcheck(cfg: &GradcheckConfig, seed: u64) -> Result<GradcheckReport> {
    if cfg.attempts == 0 {
        return Err(Error::Config("gradcheck needs at least one attempt".into()));
    }
    let shape = ModelShape {
        d: cfg.d,
        heads: cfg.heads,
        attention_blocks: 1,
        alpha_init: 5.0,
        beta_init: 0.0,
        delta: 0.3,
        margin: 0.2,
    };
    for attempt in 0..cfg.attempts {
        let s = seed.wrapping_add(attempt as u64);
        let batch = synth_dataset(s, cfg.batch, cfg.n, cfg.m, cfg.d, cfg.relations, cfg.attributes)?;
        let params = ModelParams::init(&mut ChaCha8Rng::seed_from_u64(s), &shape);
        let g = batch_gradient(&params, &batch, cfg.reduction)?;
        if g.kink_margin < cfg.kink_threshold || g.loss == 0.0 {
            warn!(
                "seed {s}: kink margin {:.3e}, loss {}; resampling",
                g.kink_margin, g.loss
            );
            continue;
        }
        let oracle = finite_diff_grad(|p: &ModelParams| batch_loss(p, &batch, cfg.reduction), &params, cfg.eps)?;
        let mut analytic = g.gradients;
        if cfg.inject_fault {
            if let Some(m) = analytic.get_mut("align.w_region") {
                let v = m.get(0, 0);
                m.set(0, 0, v + 1e-2 * (1.0 + v.abs()));
            }
        }
        let (per_parameter, max_error, worst) = compare(&analytic, &oracle)?;
        return Ok(GradcheckReport {
            seed: s,
            attempts: attempt + 1,
            loss: g.loss,
            kink_margin: g.kink_margin,
            per_parameter,
            max_error,
            worst,
            tolerance: cfg.tolerance,
        });
    }
    Err(Error::Numeric(format!(
        "every one of {} instances starting at seed {seed} sits within {:.0e} of a kink",
        cfg.attempts, cfg.kink_threshold
    )))
}
