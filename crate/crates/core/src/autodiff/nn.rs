use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Affine map `x·W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add_glorot(format!("{name}.w"), in_dim, out_dim, rng)?;
        let bias = store.add_zeros(format!("{name}.b"), &[1, out_dim])?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }

    /// `x·W` without the bias.
    pub fn forward_no_bias(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        tape.matmul(x, w)
    }
}

/// Two-layer perceptron `W₂·ReLU(W₁x + b₁) + b₂`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            first: Linear::new(store, &format!("{name}.0"), in_dim, hidden, rng)?,
            second: Linear::new(store, &format!("{name}.1"), hidden, out_dim, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.first.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.second.forward(tape, store, h)
    }

    pub fn out_dim(&self) -> usize {
        self.second.out_dim
    }
}
