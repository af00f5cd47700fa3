//! Central-difference gradient oracle, independent of the tape.

use std::collections::BTreeMap;

use super::matrix::Matrix;
use super::tape::GradientSet;
use crate::error::{Error, Result};

/// A named collection of parameter matrices that can be walked in a fixed order.
pub trait ParamSet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix));

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |name, _| out.push(name.to_string()));
        out
    }

    fn parameter_count(&self) -> usize {
        let mut count = 0;
        self.visit(&mut |_, m| count += m.len());
        count
    }
}

impl ParamSet for BTreeMap<String, Matrix> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        for (k, v) in self {
            f(k, v);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        for (k, v) in self.iter_mut() {
            f(k, v);
        }
    }
}

fn nudge<P: ParamSet + ?Sized>(params: &mut P, target: usize, coord: usize, value: f64) {
    let mut seen = 0;
    params.visit_mut(&mut |_, m| {
        if seen == target {
            m.as_mut_slice()[coord] = value;
        }
        seen += 1;
    });
}

/// `(f(p + eps·e) − f(p − eps·e)) / (2·eps)` for every coordinate of every parameter.
pub fn finite_diff_grad<P, F>(f: F, params: &P, eps: f64) -> Result<GradientSet>
where
    P: ParamSet + Clone,
    F: Fn(&P) -> Result<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Contract(format!("finite-difference step {eps} must be positive")));
    }
    let mut shapes: Vec<(String, Matrix)> = Vec::new();
    params.visit(&mut |name, m| shapes.push((name.to_string(), m.clone())));

    let mut work = params.clone();
    let mut grads = GradientSet::new();
    for (target, (name, original)) in shapes.iter().enumerate() {
        let mut g = Matrix::zeros(original.rows(), original.cols());
        for coord in 0..original.len() {
            let x = original.as_slice()[coord];
            nudge(&mut work, target, coord, x + eps);
            let plus = f(&work)?;
            nudge(&mut work, target, coord, x - eps);
            let minus = f(&work)?;
            nudge(&mut work, target, coord, x);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "objective not finite while perturbing {name}[{coord}]"
                )));
            }
            g.as_mut_slice()[coord] = (plus - minus) / (2.0 * eps);
        }
        grads.insert(name.clone(), g);
    }
    Ok(grads)
}

/// Worst `|a − b| / max(1, |b|)` over all coordinates, with the offending name.
pub fn max_relative_error(analytic: &GradientSet, oracle: &GradientSet) -> Result<(f64, String)> {
    let mut worst = (0.0, String::new());
    for (name, fd) in oracle {
        let ad = analytic
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no analytic gradient for {name}")))?;
        let err = group_relative_error(ad, fd)?;
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, name.clone());
        }
    }
    Ok(worst)
}

/// Worst relative error within a single parameter.
pub fn group_relative_error(analytic: &Matrix, oracle: &Matrix) -> Result<f64> {
    if analytic.shape() != oracle.shape() {
        return Err(Error::Dimension {
            op: "gradient comparison",
            left: analytic.shape(),
            right: oracle.shape(),
        });
    }
    Ok(analytic
        .as_slice()
        .iter()
        .zip(oracle.as_slice())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max))
}
