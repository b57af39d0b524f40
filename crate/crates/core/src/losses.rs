//! Training objectives for one cascade stage.
//!
//! At stage `t` the objective is
//! `base_t + w_ens * ens_t + w_cost * cost_t + w_rank * rank_t`, where only
//! the base term applies at `t = 1`. Gradient routing is structural:
//! frozen models and the selector inputs enter through `detach`, so
//! the ensemble and cost terms only reach the selector and the base term only
//! reaches the current model.

use crate::error::{Error, Result};
use crate::halting::{pmf_graph, soft_ensemble_graph, survival_graph};
use crate::nets::{gumbel_binarize_graph, BaseBinding, BaseGraphOutput, SelectorBinding};
use crate::numgraph::{Graph, Var};
use crate::rng::Rng;

/// Floor inside the logarithm of the probability-space cross-entropy.
pub const PROB_EPS: f64 = 1e-12;

/// Cross-entropy of a probability vector: `-ln(probs[y] + 1e-12)`.
pub fn task_loss(y: usize, probs: &[f64]) -> Result<f64> {
    let p = probs
        .get(y)
        .ok_or_else(|| Error::invalid(format!("label {y} outside 0..{}", probs.len())))?;
    Ok(-(p + PROB_EPS).ln())
}

/// Expected halting step `sum_t t p_t`.
pub fn cost_loss(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(i, pi)| (i + 1) as f64 * pi).sum()
}

/// `max(0, S(t) (loss_t - reference))`.
pub fn rank_loss(survival_t: f64, loss_t: f64, reference: f64) -> f64 {
    (survival_t * (loss_t - reference)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub ens: f64,
    pub cost: f64,
    pub rank: f64,
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            ens: 0.0,
            cost: 0.0,
            rank: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("ens", self.ens), ("cost", self.cost), ("rank", self.rank)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!(
                    "loss weight {name} must be a non-negative number, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Numeric values of one stage objective (batch means).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub base: f64,
    pub ens: f64,
    pub cost: f64,
    pub rank: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [self.base, self.ens, self.cost, self.rank, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Name of the first non-finite component.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("base", self.base),
            ("ens", self.ens),
            ("cost", self.cost),
            ("rank", self.rank),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Per-sample `-ln(probs[y] + eps)` for `[n, K]` probabilities, giving `[n]`.
pub fn task_loss_graph(g: &mut Graph, probs: Var, labels: &[usize]) -> Result<Var> {
    let picked = g.gather(probs, labels)?;
    let shifted = g.add_scalar(picked, PROB_EPS);
    let logp = g.log(shifted);
    Ok(g.neg(logp))
}

/// Per-sample cross-entropy from logits via log-softmax, giving `[n]`.
pub fn cross_entropy_logits(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let ls = g.log_softmax(logits)?;
    let picked = g.gather(ls, labels)?;
    Ok(g.neg(picked))
}

/// Mean over the batch of `CE(main) + CE(aux) - lambda * |main - aux|_1`.
pub fn base_loss_graph(g: &mut Graph, out: &BaseGraphOutput, labels: &[usize], lambda_dis: f64) -> Result<Var> {
    let main = cross_entropy_logits(g, out.main_logits, labels)?;
    let aux = cross_entropy_logits(g, out.aux_logits, labels)?;
    let mut per_sample = g.add(main, aux)?;
    if lambda_dis != 0.0 {
        let diff = g.abs_diff(out.main_probs, out.aux_probs)?;
        let l1 = g.sum_rows(diff)?;
        let scaled = g.scale(l1, lambda_dis);
        per_sample = g.sub(per_sample, scaled)?;
    }
    Ok(g.mean(per_sample))
}

/// Mean task loss of the survival-weighted ensemble.
pub fn ensemble_loss_graph(g: &mut Graph, soft_ens: Var, labels: &[usize]) -> Result<Var> {
    let l = task_loss_graph(g, soft_ens, labels)?;
    Ok(g.mean(l))
}

/// Batch mean of `sum_t t p_t`.
pub fn cost_loss_graph(g: &mut Graph, p: &[Var]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (i, pi) in p.iter().enumerate() {
        let term = g.scale(*pi, (i + 1) as f64);
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    let acc = acc.ok_or_else(|| Error::invalid("empty halting pmf"))?;
    Ok(g.mean(acc))
}

/// Batch mean of `max(0, S(t) (loss_t - reference))`; `reference` is detached here.
pub fn rank_loss_graph(g: &mut Graph, survival_t: Var, loss_t: Var, reference: Var) -> Result<Var> {
    let reference = g.detach(reference);
    let gap = g.sub(loss_t, reference)?;
    let weighted = g.mul(survival_t, gap)?;
    let hinge = g.hinge(weighted);
    Ok(g.mean(hinge))
}

/// How halt probabilities enter the stage objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Relaxation {
    /// Soft `h_t` from the selector.
    Soft,
    /// Straight-through Gumbel samples at the given temperature.
    Gumbel { temperature: f64 },
}

pub struct StageInputs<'a> {
    /// Bindings for models `1..=t`; the last one is the model being trained.
    pub models: &'a [BaseBinding],
    pub selector: &'a SelectorBinding,
    /// `[n, input_dim]` batch.
    pub x: Var,
    pub labels: &'a [usize],
    pub weights: LossWeights,
    pub lambda_dis: f64,
    pub relaxation: Relaxation,
}

/// Graph handles for the assembled stage objective.
#[derive(Debug, Clone, Copy)]
pub struct StageLosses {
    pub stage: usize,
    pub base: Var,
    pub ens: Option<Var>,
    pub cost: Option<Var>,
    pub rank: Option<Var>,
    pub total: Var,
    pub weights: LossWeights,
}

impl StageLosses {
    pub fn bundle(&self, g: &Graph) -> LossBundle {
        let val = |v: Option<Var>| v.map_or(0.0, |v| g.scalar(v));
        LossBundle {
            base: g.scalar(self.base),
            ens: val(self.ens),
            cost: val(self.cost),
            rank: val(self.rank),
            total: g.scalar(self.total),
            weights: self.weights,
        }
    }
}

/// Builds the stage-`t` objective where `t = inputs.models.len()`.
pub fn stage_objective(g: &mut Graph, inputs: &StageInputs<'_>, rng: &mut Rng) -> Result<StageLosses> {
    inputs.weights.validate()?;
    let t = inputs.models.len();
    if t == 0 {
        return Err(Error::invalid("stage objective needs at least one model"));
    }
    let rows = inputs.labels.len();
    if g.shape(inputs.x).first() != Some(&rows) {
        return Err(Error::shape("stage_objective", g.shape(inputs.x), &[rows]));
    }

    let mut outputs = Vec::with_capacity(t);
    for (i, binding) in inputs.models.iter().enumerate() {
        let mut out = binding.forward(g, inputs.x)?;
        if i + 1 < t {
            // earlier stages are frozen
            out.main_probs = g.detach(out.main_probs);
            out.aux_probs = g.detach(out.aux_probs);
            out.kl = g.detach(out.kl);
        }
        outputs.push(out);
    }
    let current = outputs[t - 1];
    let base = base_loss_graph(g, &current, inputs.labels, inputs.lambda_dis)?;

    if t == 1 {
        return Ok(StageLosses {
            stage: 1,
            base,
            ens: None,
            cost: None,
            rank: None,
            total: base,
            weights: inputs.weights,
        });
    }

    // halt probabilities for steps 1..t-1; step t is the terminal halt
    let mut d = inputs.selector.initial_state(g, rows);
    let mut h = Vec::with_capacity(t);
    for out in &outputs[..t - 1] {
        let e = g.concat_cols(&[out.main_probs, out.aux_probs, out.kl])?;
        let e = g.detach(e);
        let (ht, next) = inputs.selector.step(g, e, d)?;
        d = next;
        let ht = match inputs.relaxation {
            Relaxation::Soft => ht,
            Relaxation::Gumbel { temperature } => gumbel_binarize_graph(g, ht, temperature, rng)?,
        };
        h.push(ht);
    }
    let terminal = g.full(vec![rows], 1.0);
    h.push(terminal);

    let s = survival_graph(g, &h, rows)?;
    let p = pmf_graph(g, &h, &s)?;

    let preds: Vec<Var> = outputs.iter().map(|o| g.detach(o.main_probs)).collect();
    let ens_t = soft_ensemble_graph(g, &preds, &s)?;
    let ens = ensemble_loss_graph(g, ens_t, inputs.labels)?;

    let cost = cost_loss_graph(g, &p)?;

    let s_prev: Vec<Var> = s[..t - 1].iter().map(|v| g.detach(*v)).collect();
    let ens_prev = soft_ensemble_graph(g, &preds[..t - 1], &s_prev)?;
    let reference = task_loss_graph(g, ens_prev, inputs.labels)?;
    let loss_t = task_loss_graph(g, current.main_probs, inputs.labels)?;
    let rank = rank_loss_graph(g, s[t - 1], loss_t, reference)?;

    let w = inputs.weights;
    let we = g.scale(ens, w.ens);
    let wc = g.scale(cost, w.cost);
    let wr = g.scale(rank, w.rank);
    let total = g.add(base, we)?;
    let total = g.add(total, wc)?;
    let total = g.add(total, wr)?;

    Ok(StageLosses {
        stage: t,
        base,
        ens: Some(ens),
        cost: Some(cost),
        rank: Some(rank),
        total,
        weights: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_loss_examples() {
        assert!(task_loss(0, &[1.0, 0.0]).unwrap().abs() < 1e-11);
        let k = 5;
        let uniform = vec![1.0 / k as f64; k];
        assert!((task_loss(2, &uniform).unwrap() - (k as f64).ln()).abs() < 1e-10);
        let l = task_loss(1, &[0.5, 0.25, 0.25]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-10);
        assert!((l - 1.3863).abs() < 1e-4);
        assert!(task_loss(3, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn cost_loss_examples() {
        assert_eq!(cost_loss(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(cost_loss(&[0.0, 0.0, 1.0]), 3.0);
        assert!((cost_loss(&[0.2, 0.4, 0.4]) - 2.2).abs() < 1e-12);
    }

    #[test]
    fn rank_loss_examples() {
        assert_eq!(rank_loss(0.0, 5.0, 0.1), 0.0);
        assert_eq!(rank_loss(1.0, 0.3, 0.4), 0.0);
        assert!((rank_loss(1.0, 0.9, 0.4) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn negative_weights_rejected() {
        let w = LossWeights {
            ens: 0.1,
            cost: -1.0,
            rank: 0.0,
        };
        assert!(w.validate().is_err());
        assert!(LossWeights::zero().validate().is_ok());
    }

    #[test]
    fn ensemble_loss_of_degenerate_weighting_is_first_model_loss() {
        let mut g = Graph::new();
        let y1 = g.constant(vec![1, 2], vec![0.8, 0.2]).unwrap();
        let y2 = g.constant(vec![1, 2], vec![0.1, 0.9]).unwrap();
        let s1 = g.constant(vec![1], vec![1.0]).unwrap();
        let s2 = g.constant(vec![1], vec![0.0]).unwrap();
        let ens = soft_ensemble_graph(&mut g, &[y1, y2], &[s1, s2]).unwrap();
        let l = ensemble_loss_graph(&mut g, ens, &[0]).unwrap();
        assert!((g.scalar(l) - task_loss(0, &[0.8, 0.2]).unwrap()).abs() < 1e-15);

        let perfect = g.constant(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let l = ensemble_loss_graph(&mut g, perfect, &[1]).unwrap();
        assert!(g.scalar(l).abs() < 1e-11);
    }
}
