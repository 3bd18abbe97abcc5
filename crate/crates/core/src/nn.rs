//! Parameterized layers shared by both ensemble members.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Binding, Graph, Var};
use crate::tensor::{ParamId, ParamSet, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// `x W + b` with `W: [in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = params.add(format!("{name}.w"), Tensor::uniform(&[fan_in, fan_out], -bound, bound, rng));
        let b = params.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        g.linear(x, b.var(self.w), b.var(self.b))
    }

    pub fn dims(&self, params: &ParamSet) -> (usize, usize) {
        let s = params.get(self.w).shape();
        (s[0], s[1])
    }
}

/// Square-kernel convolution followed by a bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// He-normal weights, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (k * k * cin) as f64).sqrt();
        let w = params.add(format!("{name}.w"), Tensor::randn(&[k, k, cin, cout], std, rng));
        let b = params.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self { w, b, stride, pad }
    }

    pub fn forward(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        let y = g.conv2d(x, b.var(self.w), self.stride, self.pad)?;
        g.add_row(y, b.var(self.b))
    }

    pub fn in_channels(&self, params: &ParamSet) -> usize {
        params.get(self.w).shape()[2]
    }
}

/// Row-wise layer norm with a learned gain and shift.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize) -> Self {
        let gamma = params.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
        let beta = params.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        let n = g.layer_norm_rows(x, LN_EPS);
        let s = g.mul_row(n, b.var(self.gamma))?;
        g.add_row(s, b.var(self.beta))
    }
}

/// `softmax(x W + b)` over a `[1, in]` row, returned as a flat `[out]` vector.
pub fn softmax_head(g: &mut Graph, b: &Binding, head: &Linear, x: Var) -> Result<Var> {
    let logits = head.forward(g, b, x)?;
    let p = g.softmax_rows(logits)?;
    let n = g.value(p).len();
    g.reshape(p, &[n])
}

/// The classifier weight matrix with one row per class, for the diversity term.
pub fn class_rows(g: &mut Graph, b: &Binding, head: &Linear) -> Result<Var> {
    g.transpose(b.var(head.w))
}
