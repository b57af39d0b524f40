//! Dual-head base classifiers, the recurrent halting selector, and the
//! straight-through Gumbel binarization of halt probabilities.

mod base;
mod gumbel;
mod selector;

use rand::Rng as _;

use crate::error::Result;
use crate::numgraph::{Graph, Tensor, Var};
use crate::rng::Rng;

pub use base::{
    base_forward, base_forward_batch, encode_selector_input, BaseBinding, BaseConfig, BaseGraphOutput, BaseModel, BaseOutput,
    KL_EPS,
};
pub use gumbel::{gumbel_binarize, gumbel_binarize_graph, relaxed_halt, sample_logistic};
pub use selector::{selector_step, Selector, SelectorBinding, SelectorConfig, CELL_VARIANT};

/// Whether halting decisions are sampled (training) or thresholded (evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Anything that owns trainable tensors in a fixed, named order.
pub trait Parameterized {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.named_params_mut().into_iter().map(|(_, t)| t).collect()
    }

    fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    fn zero_grad(&mut self) {
        for t in self.params_mut() {
            t.zero_grad();
        }
    }

    fn clear_grads(&mut self) {
        for t in self.params_mut() {
            t.clear_grad();
        }
    }

    /// Rounds every parameter to the nearest `f32`.
    fn quantize_f32(&mut self) {
        for t in self.params_mut() {
            for v in t.data_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }

    /// Adds the graph gradients of `vars` (same order as `named_params`).
    fn pull_grads(&mut self, g: &Graph, vars: &[Var]) -> Result<()> {
        for (t, v) in self.params_mut().into_iter().zip(vars) {
            g.accumulate_into(*v, t)?;
        }
        Ok(())
    }
}

/// Affine map `x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect();
        Self {
            weight: Tensor::param(vec![inputs, outputs], w).expect("sized"),
            bias: Tensor::param(vec![outputs], vec![0.0; outputs]).expect("sized"),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::param(vec![inputs, outputs], vec![0.0; inputs * outputs]).expect("sized"),
            bias: Tensor::param(vec![outputs], vec![0.0; outputs]).expect("sized"),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> LinearVars {
        LinearVars {
            weight: bind_tensor(g, &self.weight, trainable),
            bias: bind_tensor(g, &self.bias, trainable),
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

impl LinearVars {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.weight)?;
        g.add_bias(y, self.bias)
    }

    fn push(&self, out: &mut Vec<Var>) {
        out.push(self.weight);
        out.push(self.bias);
    }
}

pub(crate) fn bind_tensor(g: &mut Graph, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        g.param(t)
    } else {
        g.constant(t.shape().to_vec(), t.data().to_vec())
            .expect("tensor shape is consistent")
    }
}
