use rand::Rng as _;

use super::{bind_tensor, Linear, LinearVars, Parameterized};
use crate::error::{Error, Result};
use crate::numgraph::{Graph, Tensor, Var};
use crate::rng::Rng;

/// Recorded in checkpoint manifests.
pub const CELL_VARIANT: &str = "gru";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectorConfig {
    /// Width of the encoded base output, `2K + 1`.
    pub input_dim: usize,
    pub hidden: usize,
}

impl SelectorConfig {
    pub fn for_classes(num_classes: usize, hidden: usize) -> Self {
        Self {
            input_dim: 2 * num_classes + 1,
            hidden,
        }
    }
}

/// Gated recurrent cell followed by a sigmoid halt head.
///
/// `z = σ(e Wz + d Uz)`, `r = σ(e Wr + d Ur)`, `n = tanh(e Wn + (r∘d) Un)`,
/// `d' = (1 - z)∘n + z∘d`, `h = σ(d' w + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Selector {
    config: SelectorConfig,
    input_update: Linear,
    input_reset: Linear,
    input_new: Linear,
    hidden_update: Tensor,
    hidden_reset: Tensor,
    hidden_new: Tensor,
    halt_head: Linear,
}

#[derive(Debug, Clone)]
pub struct SelectorBinding {
    input_update: LinearVars,
    input_reset: LinearVars,
    input_new: LinearVars,
    hidden_update: Var,
    hidden_reset: Var,
    hidden_new: Var,
    halt_head: LinearVars,
    hidden: usize,
}

fn square(n: usize, rng: &mut Rng) -> Tensor {
    let limit = (3.0 / n as f64).sqrt();
    let data = (0..n * n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::param(vec![n, n], data).expect("sized")
}

fn zero_square(n: usize) -> Tensor {
    Tensor::param(vec![n, n], vec![0.0; n * n]).expect("sized")
}

impl Selector {
    pub fn new(config: SelectorConfig, rng: &mut Rng) -> Result<Self> {
        if config.input_dim == 0 || config.hidden == 0 {
            return Err(Error::invalid(format!("degenerate selector config {config:?}")));
        }
        let (i, h) = (config.input_dim, config.hidden);
        Ok(Self {
            input_update: Linear::init(i, h, rng),
            input_reset: Linear::init(i, h, rng),
            input_new: Linear::init(i, h, rng),
            hidden_update: square(h, rng),
            hidden_reset: square(h, rng),
            hidden_new: square(h, rng),
            halt_head: Linear::init(h, 1, rng),
            config,
        })
    }

    pub fn zeros(config: SelectorConfig) -> Result<Self> {
        if config.input_dim == 0 || config.hidden == 0 {
            return Err(Error::invalid(format!("degenerate selector config {config:?}")));
        }
        let (i, h) = (config.input_dim, config.hidden);
        Ok(Self {
            input_update: Linear::zeros(i, h),
            input_reset: Linear::zeros(i, h),
            input_new: Linear::zeros(i, h),
            hidden_update: zero_square(h),
            hidden_reset: zero_square(h),
            hidden_new: zero_square(h),
            halt_head: Linear::zeros(h, 1),
            config,
        })
    }

    pub fn config(&self) -> &SelectorConfig {
        &self.config
    }

    pub fn halt_head_mut(&mut self) -> &mut Linear {
        &mut self.halt_head
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> SelectorBinding {
        SelectorBinding {
            input_update: self.input_update.bind(g, trainable),
            input_reset: self.input_reset.bind(g, trainable),
            input_new: self.input_new.bind(g, trainable),
            hidden_update: bind_tensor(g, &self.hidden_update, trainable),
            hidden_reset: bind_tensor(g, &self.hidden_reset, trainable),
            hidden_new: bind_tensor(g, &self.hidden_new, trainable),
            halt_head: self.halt_head.bind(g, trainable),
            hidden: self.config.hidden,
        }
    }
}

impl Parameterized for Selector {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.input_update.named("input_update", &mut out);
        self.input_reset.named("input_reset", &mut out);
        self.input_new.named("input_new", &mut out);
        out.push(("hidden_update".into(), &self.hidden_update));
        out.push(("hidden_reset".into(), &self.hidden_reset));
        out.push(("hidden_new".into(), &self.hidden_new));
        self.halt_head.named("halt_head", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.input_update.named_mut("input_update", &mut out);
        self.input_reset.named_mut("input_reset", &mut out);
        self.input_new.named_mut("input_new", &mut out);
        out.push(("hidden_update".into(), &mut self.hidden_update));
        out.push(("hidden_reset".into(), &mut self.hidden_reset));
        out.push(("hidden_new".into(), &mut self.hidden_new));
        self.halt_head.named_mut("halt_head", &mut out);
        out
    }
}

impl SelectorBinding {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.input_update.push(&mut out);
        self.input_reset.push(&mut out);
        self.input_new.push(&mut out);
        out.extend([self.hidden_update, self.hidden_reset, self.hidden_new]);
        self.halt_head.push(&mut out);
        out
    }

    /// `d_0`: zeros of shape `[rows, hidden]`.
    pub fn initial_state(&self, g: &mut Graph, rows: usize) -> Var {
        g.full(vec![rows, self.hidden], 0.0)
    }

    /// One recurrent step on a `[n, input_dim]` batch. Returns `h: [n]` and `d: [n, hidden]`.
    pub fn step(&self, g: &mut Graph, e: Var, d_prev: Var) -> Result<(Var, Var)> {
        let xz = self.input_update.forward(g, e)?;
        let hz = g.matmul(d_prev, self.hidden_update)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);

        let xr = self.input_reset.forward(g, e)?;
        let hr = g.matmul(d_prev, self.hidden_reset)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);

        let xn = self.input_new.forward(g, e)?;
        let rd = g.mul(r, d_prev)?;
        let hn = g.matmul(rd, self.hidden_new)?;
        let n = g.add(xn, hn)?;
        let n = g.tanh(n);

        let keep = g.mul(z, d_prev)?;
        let one_minus_z = g.one_minus(z);
        let fresh = g.mul(one_minus_z, n)?;
        let d = g.add(fresh, keep)?;

        let logit = self.halt_head.forward(g, d)?;
        let rows = g.shape(logit)[0];
        let logit = g.reshape(logit, vec![rows])?;
        let h = g.sigmoid(logit);
        Ok((h, d))
    }
}

/// One selector step for a single sample.
pub fn selector_step(sel: &Selector, e: &[f64], d_prev: &[f64]) -> Result<(f64, Vec<f64>)> {
    let cfg = sel.config();
    if e.len() != cfg.input_dim || d_prev.len() != cfg.hidden {
        return Err(Error::shape(
            "selector_step",
            &[e.len(), d_prev.len()],
            &[cfg.input_dim, cfg.hidden],
        ));
    }
    let mut g = Graph::new();
    let b = sel.bind(&mut g, false);
    let ev = g.constant(vec![1, e.len()], e.to_vec())?;
    let dv = g.constant(vec![1, d_prev.len()], d_prev.to_vec())?;
    let (h, d) = b.step(&mut g, ev, dv)?;
    Ok((g.value(h)[0], g.value(d).to_vec()))
}
