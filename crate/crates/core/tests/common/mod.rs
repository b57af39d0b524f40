//! Test-side oracles shared by the integration suites.

#![allow(dead_code)]

use cascade_core::losses::{stage_objective, LossWeights, Relaxation, StageInputs};
use cascade_core::nets::{BaseConfig, BaseModel, Parameterized, Selector, SelectorConfig};
use cascade_core::numgraph::{Graph, Var};
use cascade_core::rng::{substream, Rng};
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_FLOOR: f64 = 1e-8;

/// Central difference of `f` around `x[i]`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    up[i] += FD_STEP;
    down[i] -= FD_STEP;
    (f(&up) - f(&down)) / (2.0 * FD_STEP)
}

/// Relative agreement with an absolute floor for vanishing gradients.
pub fn grads_agree(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= FD_ABS_FLOOR || diff <= FD_REL_TOL * analytic.abs().max(numeric.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Base,
    Ens,
    Cost,
    Rank,
    Total,
}

pub const TERMS: [Term; 5] = [Term::Base, Term::Ens, Term::Cost, Term::Rank, Term::Total];

/// Small cascade plus one batch, all models and the selector trainable.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub models: Vec<BaseModel>,
    pub selector: Selector,
    pub x: Vec<f64>,
    pub labels: Vec<usize>,
    pub weights: LossWeights,
    pub lambda_dis: f64,
}

pub const FIXTURE_DIM: usize = 3;
pub const FIXTURE_CLASSES: usize = 3;

impl Fixture {
    pub fn new(stages: usize, rows: usize, seed: u64) -> Self {
        let mut rng = substream(seed, "fixture");
        let cfg = BaseConfig {
            input_dim: FIXTURE_DIM,
            hidden: vec![5],
            num_classes: FIXTURE_CLASSES,
        };
        let models = (0..stages).map(|_| BaseModel::new(cfg.clone(), &mut rng).unwrap()).collect();
        let selector = Selector::new(SelectorConfig::for_classes(FIXTURE_CLASSES, 4), &mut rng).unwrap();
        let x = (0..rows * FIXTURE_DIM).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..rows).map(|_| rng.random_range(0..FIXTURE_CLASSES)).collect();
        Self {
            models,
            selector,
            x,
            labels,
            weights: LossWeights {
                ens: 0.7,
                cost: 0.3,
                rank: 0.9,
            },
            lambda_dis: 0.05,
        }
    }

    /// Flat view of every parameter: models in order, then the selector.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for m in &self.models {
            for (_, t) in m.named_params() {
                out.extend_from_slice(t.data());
            }
        }
        for (_, t) in self.selector.named_params() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn with_params(&self, flat: &[f64]) -> Self {
        let mut next = self.clone();
        let mut k = 0;
        let mut fill = |p: &mut dyn Parameterized| {
            for t in p.params_mut() {
                for v in t.data_mut() {
                    *v = flat[k];
                    k += 1;
                }
            }
        };
        for m in &mut next.models {
            fill(m);
        }
        fill(&mut next.selector);
        next
    }

    /// Range of the flat parameter vector owned by model `i` (0-based) or,
    /// for `i == models.len()`, by the selector.
    pub fn owner_range(&self, i: usize) -> std::ops::Range<usize> {
        let sizes: Vec<usize> = self
            .models
            .iter()
            .map(|m| m.num_params())
            .chain(std::iter::once(self.selector.num_params()))
            .collect();
        let start: usize = sizes[..i].iter().sum();
        start..start + sizes[i]
    }

    /// Value of `term` and its gradient w.r.t. every parameter.
    pub fn evaluate(&self, term: Term) -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let bindings: Vec<_> = self.models.iter().map(|m| m.bind(&mut g, true)).collect();
        let sel = self.selector.bind(&mut g, true);
        let rows = self.labels.len();
        let x = g.constant(vec![rows, FIXTURE_DIM], self.x.clone()).unwrap();
        let inputs = StageInputs {
            models: &bindings,
            selector: &sel,
            x,
            labels: &self.labels,
            weights: self.weights,
            lambda_dis: self.lambda_dis,
            relaxation: Relaxation::Soft,
        };
        let mut rng: Rng = substream(0, "unused");
        let losses = stage_objective(&mut g, &inputs, &mut rng).unwrap();
        let root: Var = match term {
            Term::Base => losses.base,
            Term::Ens => losses.ens.expect("stage >= 2"),
            Term::Cost => losses.cost.expect("stage >= 2"),
            Term::Rank => losses.rank.expect("stage >= 2"),
            Term::Total => losses.total,
        };
        let value = g.scalar(root);
        let mut grads = Vec::new();
        let mut vars: Vec<Var> = bindings.iter().flat_map(|b| b.vars()).collect();
        vars.extend(sel.vars());
        if g.requires_grad(root) {
            g.backward(root).unwrap();
        }
        for v in vars {
            match g.grad(v) {
                Some(d) => grads.extend_from_slice(d),
                None => grads.extend(std::iter::repeat_n(0.0, g.value(v).len())),
            }
        }
        (value, grads)
    }

    pub fn value(&self, term: Term) -> f64 {
        self.evaluate(term).0
    }
}
