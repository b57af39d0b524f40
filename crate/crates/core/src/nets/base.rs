use super::{Linear, LinearVars, Parameterized};
use crate::error::{Error, Result};
use crate::numgraph::{Graph, Tensor, Var};
use crate::rng::Rng;

/// Floor added to probabilities inside every logarithm of the KL term.
pub const KL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseConfig {
    pub input_dim: usize,
    /// Trunk widths; the last one is the shared feature width.
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

impl BaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 || self.hidden.contains(&0) {
            return Err(Error::invalid(format!("degenerate base model config {self:?}")));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }
}

/// Tanh MLP trunk shared by a main and an auxiliary linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseModel {
    config: BaseConfig,
    trunk: Vec<Linear>,
    main_head: Linear,
    aux_head: Linear,
}

/// Graph handles for one bound copy of a [`BaseModel`].
#[derive(Debug, Clone)]
pub struct BaseBinding {
    trunk: Vec<LinearVars>,
    main_head: LinearVars,
    aux_head: LinearVars,
}

#[derive(Debug, Clone, Copy)]
pub struct BaseGraphOutput {
    pub main_logits: Var,
    pub aux_logits: Var,
    pub main_probs: Var,
    pub aux_probs: Var,
    /// `[n]` per-sample KL(main || aux).
    pub kl: Var,
}

/// Per-sample result of running one base model.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseOutput {
    pub main_probs: Vec<f64>,
    pub aux_probs: Vec<f64>,
    pub kl_uncertainty: f64,
}

impl BaseModel {
    pub fn new(config: BaseConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![config.input_dim];
        widths.extend(&config.hidden);
        let trunk = widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        let f = config.feature_dim();
        let main_head = Linear::init(f, config.num_classes, rng);
        let aux_head = Linear::init(f, config.num_classes, rng);
        Ok(Self {
            config,
            trunk,
            main_head,
            aux_head,
        })
    }

    /// All-zero parameters with the right shapes, used when loading checkpoints.
    pub fn zeros(config: BaseConfig) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![config.input_dim];
        widths.extend(&config.hidden);
        let trunk = widths.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        let f = config.feature_dim();
        Ok(Self {
            main_head: Linear::zeros(f, config.num_classes),
            aux_head: Linear::zeros(f, config.num_classes),
            config,
            trunk,
        })
    }

    pub fn config(&self) -> &BaseConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn main_head(&self) -> &Linear {
        &self.main_head
    }

    pub fn aux_head_mut(&mut self) -> &mut Linear {
        &mut self.aux_head
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BaseBinding {
        BaseBinding {
            trunk: self.trunk.iter().map(|l| l.bind(g, trainable)).collect(),
            main_head: self.main_head.bind(g, trainable),
            aux_head: self.aux_head.bind(g, trainable),
        }
    }
}

impl Parameterized for BaseModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.trunk.iter().enumerate() {
            l.named(&format!("trunk.{i}"), &mut out);
        }
        self.main_head.named("main_head", &mut out);
        self.aux_head.named("aux_head", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.trunk.iter_mut().enumerate() {
            l.named_mut(&format!("trunk.{i}"), &mut out);
        }
        self.main_head.named_mut("main_head", &mut out);
        self.aux_head.named_mut("aux_head", &mut out);
        out
    }
}

impl BaseBinding {
    /// Leaves in `named_params` order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.trunk {
            l.push(&mut out);
        }
        self.main_head.push(&mut out);
        self.aux_head.push(&mut out);
        out
    }

    /// Forward pass for a `[n, input_dim]` batch.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<BaseGraphOutput> {
        let mut h = x;
        for layer in &self.trunk {
            let z = layer.forward(g, h)?;
            h = g.tanh(z);
        }
        let main_logits = self.main_head.forward(g, h)?;
        let aux_logits = self.aux_head.forward(g, h)?;
        let main_probs = g.softmax(main_logits)?;
        let aux_probs = g.softmax(aux_logits)?;

        let lp = g.add_scalar(main_probs, KL_EPS);
        let lp = g.log(lp);
        let lq = g.add_scalar(aux_probs, KL_EPS);
        let lq = g.log(lq);
        let ratio = g.sub(lp, lq)?;
        let terms = g.mul(main_probs, ratio)?;
        let kl = g.sum_rows(terms)?;
        // the epsilon floor can push KL(p||p) a hair below zero
        let kl = g.relu(kl);

        Ok(BaseGraphOutput {
            main_logits,
            aux_logits,
            main_probs,
            aux_probs,
            kl,
        })
    }
}

fn check_dim(model: &BaseModel, len: usize) -> Result<()> {
    if len != model.config.input_dim {
        return Err(Error::invalid(format!(
            "input has {len} features, model expects {}",
            model.config.input_dim
        )));
    }
    Ok(())
}

/// Runs one model on one feature vector.
pub fn base_forward(model: &BaseModel, x: &[f64]) -> Result<BaseOutput> {
    check_dim(model, x.len())?;
    let mut out = base_forward_batch(model, x, 1)?;
    Ok(out.pop().expect("one row"))
}

/// Runs one model on `rows` samples stored row-major in `x`.
pub fn base_forward_batch(model: &BaseModel, x: &[f64], rows: usize) -> Result<Vec<BaseOutput>> {
    let d = model.config.input_dim;
    if rows == 0 || x.len() != rows * d {
        return Err(Error::shape("base_forward", &[rows, d], &[x.len()]));
    }
    let mut g = Graph::new();
    let xv = g.constant(vec![rows, d], x.to_vec())?;
    let b = model.bind(&mut g, false);
    let o = b.forward(&mut g, xv)?;
    let k = model.config.num_classes;
    let (mp, ap, kl) = (g.value(o.main_probs), g.value(o.aux_probs), g.value(o.kl));
    Ok((0..rows)
        .map(|i| BaseOutput {
            main_probs: mp[i * k..(i + 1) * k].to_vec(),
            aux_probs: ap[i * k..(i + 1) * k].to_vec(),
            kl_uncertainty: kl[i],
        })
        .collect())
}

/// Selector input `[main_probs | aux_probs | kl]`, length `2K + 1`.
pub fn encode_selector_input(out: &BaseOutput) -> Vec<f64> {
    let mut e = Vec::with_capacity(out.main_probs.len() * 2 + 1);
    e.extend_from_slice(&out.main_probs);
    e.extend_from_slice(&out.aux_probs);
    e.push(out.kl_uncertainty);
    e
}
