//! Parameter containers shared by the fusion stages.
//!
//! Every parameter struct is generic over its leaf type: `Matrix` for
//! stored weights, [`Var`] once the weights are registered on a tape.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

/// Callback used to rebuild a parameter tree with a new leaf type.
pub type MapFn<'a, T, U> = dyn FnMut(String, &T) -> Result<U> + 'a;
/// Callback used to walk a parameter tree mutably.
pub type WalkFn<'a, T> = dyn FnMut(String, &mut T) + 'a;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform in `±1/sqrt(fan_in)`.
pub fn init_uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

/// One-hidden-layer perceptron `ELU(x·w1 + b1)·w2 + b2`, applied row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T = Matrix> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

impl<T> Mlp<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut MapFn<'_, T, U>) -> Result<Mlp<U>> {
        Ok(Mlp {
            w1: f(join(prefix, "w1"), &self.w1)?,
            b1: f(join(prefix, "b1"), &self.b1)?,
            w2: f(join(prefix, "w2"), &self.w2)?,
            b2: f(join(prefix, "b2"), &self.b2)?,
        })
    }

    pub fn walk_mut(&mut self, prefix: &str, f: &mut WalkFn<'_, T>) {
        f(join(prefix, "w1"), &mut self.w1);
        f(join(prefix, "b1"), &mut self.b1);
        f(join(prefix, "w2"), &mut self.w2);
        f(join(prefix, "b2"), &mut self.b2);
    }
}

impl Mlp<Matrix> {
    pub fn init(rng: &mut impl Rng, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: init_uniform(rng, input, hidden, input),
            b1: Matrix::zeros(1, hidden),
            w2: init_uniform(rng, hidden, output, hidden),
            b2: Matrix::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn check(&self, what: &str, input: usize, output: usize) -> Result<()> {
        let hidden = self.w1.cols();
        let ok = self.w1.rows() == input
            && self.b1.shape() == (1, hidden)
            && self.w2.rows() == hidden
            && self.w2.cols() == output
            && self.b2.shape() == (1, output);
        if !ok {
            return Err(Error::Shape {
                op: "mlp",
                detail: format!(
                    "{what}: w1 {:?}, b1 {:?}, w2 {:?}, b2 {:?} for {input} -> {output}",
                    self.w1.shape(),
                    self.b1.shape(),
                    self.w2.shape(),
                    self.b2.shape()
                ),
            });
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, prefix: &str) -> Result<Mlp<Var>> {
        self.map(prefix, &mut |name, m| tape.param(name, m.clone()))
    }
}

impl Mlp<Var> {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = tape.matmul(x, self.w1)?;
        let h = tape.add_row(h, self.b1)?;
        let h = tape.elu(h)?;
        let y = tape.matmul(h, self.w2)?;
        tape.add_row(y, self.b2)
    }
}
