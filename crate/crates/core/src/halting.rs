//! Halting-probability calculus and sequential cascade inference.
//!
//! With conditional halt probabilities `h_t`, the survival probability is
//! `S(t) = prod_{i<t} (1 - h_i)` and the halting pmf is `p_t = h_t S(t)`.
//! The last step always halts (`h_T := 1`) so `p` sums to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{base_forward, encode_selector_input, gumbel_binarize, selector_step, BaseModel, Mode, Selector};
use crate::numgraph::{Graph, Var};
use crate::rng::Rng;

/// Per-sample record of the halting computation. Steps are 1-based in `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaltingTrace {
    /// Halt probabilities (soft) or decisions (binary), terminal forced to 1.
    /// In lazy evaluation the entries after `z` were never computed and hold 0.
    pub h: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<f64>,
    pub p: Vec<f64>,
    pub z: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub probs: Vec<f64>,
    pub steps_used: usize,
    /// Number of base models actually executed.
    pub executed: usize,
    /// Survival-weighted ensembles after each step (train mode only).
    pub per_step_probs: Option<Vec<Vec<f64>>>,
}

fn check_h(h: &[f64]) -> Result<()> {
    if h.is_empty() {
        return Err(Error::invalid("empty halt vector"));
    }
    if let Some(bad) = h.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("halt probability {bad} outside [0, 1]")));
    }
    Ok(())
}

/// Copy of `h` with the last entry set to 1.
pub fn force_terminal(h: &[f64]) -> Vec<f64> {
    let mut out = h.to_vec();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

/// `S(t) = prod_{i=1}^{t-1} (1 - h_i)` for 1-based `t` in `1..=T`.
pub fn survival(h: &[f64], t: usize) -> Result<f64> {
    check_h(h)?;
    if t == 0 || t > h.len() {
        return Err(Error::invalid(format!("step {t} outside 1..={}", h.len())));
    }
    Ok(h[..t - 1].iter().map(|hi| 1.0 - hi).product())
}

/// `[S(1), ..., S(T)]`.
pub fn survival_curve(h: &[f64]) -> Vec<f64> {
    let mut s = Vec::with_capacity(h.len());
    let mut acc = 1.0;
    for hi in h {
        s.push(acc);
        acc *= 1.0 - hi;
    }
    s
}

/// Halting pmf after forcing the terminal halt.
pub fn halting_pmf(h: &[f64]) -> Result<Vec<f64>> {
    check_h(h)?;
    let h = force_terminal(h);
    let s = survival_curve(&h);
    Ok(h.iter().zip(&s).map(|(hi, si)| hi * si).collect())
}

/// First step whose binary decision is 1 (terminal forced), 1-based.
pub fn halting_step(decisions: &[f64]) -> Result<usize> {
    check_h(decisions)?;
    if let Some(bad) = decisions.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(Error::invalid(format!("halting decision {bad} is not binary")));
    }
    let forced = force_terminal(decisions);
    Ok(forced.iter().position(|v| *v == 1.0).expect("terminal forced") + 1)
}

/// Mean of the first `z` predictions.
pub fn ensemble_predict(preds: &[Vec<f64>], z: usize) -> Result<Vec<f64>> {
    if preds.is_empty() {
        return Err(Error::invalid("no predictions to aggregate"));
    }
    if z == 0 || z > preds.len() {
        return Err(Error::invalid(format!("halting step {z} outside 1..={}", preds.len())));
    }
    let k = preds[0].len();
    let mut out = vec![0.0; k];
    for p in &preds[..z] {
        if p.len() != k {
            return Err(Error::shape("ensemble_predict", &[k], &[p.len()]));
        }
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= z as f64);
    Ok(out)
}

/// `sum_i S(i) y_i / sum_i S(i)` over the given prefix.
pub fn soft_ensemble_at(preds: &[Vec<f64>], s: &[f64]) -> Result<Vec<f64>> {
    if preds.is_empty() || preds.len() != s.len() {
        return Err(Error::shape("soft_ensemble_at", &[preds.len()], &[s.len()]));
    }
    let k = preds[0].len();
    let mut out = vec![0.0; k];
    let mut total = 0.0;
    for (p, w) in preds.iter().zip(s) {
        if p.len() != k {
            return Err(Error::shape("soft_ensemble_at", &[k], &[p.len()]));
        }
        for (o, v) in out.iter_mut().zip(p) {
            *o += w * v;
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::invalid("survival weights sum to zero"));
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(out)
}

/// Graph form of the survival curve over `[n]` halt probabilities.
/// The terminal entry of `h` is not used.
pub fn survival_graph(g: &mut Graph, h: &[Var], rows: usize) -> Result<Vec<Var>> {
    let mut s = Vec::with_capacity(h.len() + 1);
    let mut acc = g.full(vec![rows], 1.0);
    s.push(acc);
    for hi in h.iter().take(h.len().saturating_sub(1)) {
        let keep = g.one_minus(*hi);
        acc = g.mul(acc, keep)?;
        s.push(acc);
    }
    Ok(s)
}

/// Graph form of the halting pmf for a prefix of `t` steps where step `t` is
/// terminal: `p_i = h_i S(i)` for `i < t`, `p_t = S(t)`.
pub fn pmf_graph(g: &mut Graph, h: &[Var], s: &[Var]) -> Result<Vec<Var>> {
    let t = s.len();
    let mut p = Vec::with_capacity(t);
    for i in 0..t {
        if i + 1 == t {
            p.push(s[i]);
        } else {
            p.push(g.mul(h[i], s[i])?);
        }
    }
    Ok(p)
}

/// Graph form of the survival-weighted ensemble: `preds` are `[n, K]`, `s` are `[n]`.
pub fn soft_ensemble_graph(g: &mut Graph, preds: &[Var], s: &[Var]) -> Result<Var> {
    if preds.is_empty() || preds.len() != s.len() {
        return Err(Error::shape("soft_ensemble_graph", &[preds.len()], &[s.len()]));
    }
    let k = g.shape(preds[0])[1];
    let mut num: Option<Var> = None;
    let mut den: Option<Var> = None;
    for (p, si) in preds.iter().zip(s) {
        let w = g.expand_cols(*si, k)?;
        let term = g.mul(w, *p)?;
        num = Some(match num {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
        den = Some(match den {
            Some(acc) => g.add(acc, *si)?,
            None => *si,
        });
    }
    let den = g.expand_cols(den.expect("non-empty"), k)?;
    g.div(num.expect("non-empty"), den)
}

#[derive(Debug, Clone, Copy)]
pub struct InferOptions {
    pub mode: Mode,
    /// Gumbel temperature for train-mode sampling.
    pub temperature: f64,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Eval,
            temperature: 1.0,
        }
    }
}

/// Runs the cascade on one sample.
///
/// Eval mode executes models lazily and stops at the first step whose
/// thresholded halt decision is 1. Train mode runs every model, records the
/// soft halting calculus, and samples the halting step with Gumbel noise.
pub fn infer(
    models: &[BaseModel],
    sel: &Selector,
    x: &[f64],
    opts: InferOptions,
    rng: &mut Rng,
) -> Result<(EnsemblePrediction, HaltingTrace)> {
    let t_max = models.len();
    if t_max == 0 {
        return Err(Error::invalid("cascade has no models"));
    }
    let mut d = vec![0.0; sel.config().hidden];
    let mut preds = Vec::with_capacity(t_max);

    match opts.mode {
        Mode::Eval => {
            let mut decisions = vec![0.0; t_max];
            for (t, model) in models.iter().enumerate() {
                let out = base_forward(model, x)?;
                preds.push(out.main_probs.clone());
                if t + 1 == t_max {
                    decisions[t] = 1.0;
                    break;
                }
                let (h, next) = selector_step(sel, &encode_selector_input(&out), &d)?;
                d = next;
                let hard = gumbel_binarize(h, opts.temperature, Mode::Eval, rng)?;
                decisions[t] = hard;
                if hard == 1.0 {
                    break;
                }
            }
            let z = halting_step(&decisions)?;
            let probs = ensemble_predict(&preds, z)?;
            let s = survival_curve(&decisions);
            let p = halting_pmf(&decisions)?;
            Ok((
                EnsemblePrediction {
                    probs,
                    steps_used: z,
                    executed: preds.len(),
                    per_step_probs: None,
                },
                HaltingTrace { h: decisions, s, p, z },
            ))
        }
        Mode::Train => {
            let mut soft = vec![1.0; t_max];
            for (t, model) in models.iter().enumerate() {
                let out = base_forward(model, x)?;
                preds.push(out.main_probs.clone());
                if t + 1 < t_max {
                    let (h, next) = selector_step(sel, &encode_selector_input(&out), &d)?;
                    d = next;
                    soft[t] = h;
                }
            }
            let s = survival_curve(&soft);
            let p = halting_pmf(&soft)?;
            let mut sampled = Vec::with_capacity(t_max);
            for h in &soft {
                sampled.push(gumbel_binarize(*h, opts.temperature, Mode::Train, rng)?);
            }
            let z = halting_step(&sampled)?;
            let per_step = (1..=t_max)
                .map(|t| soft_ensemble_at(&preds[..t], &s[..t]))
                .collect::<Result<Vec<_>>>()?;
            let probs = ensemble_predict(&preds, z)?;
            Ok((
                EnsemblePrediction {
                    probs,
                    steps_used: z,
                    executed: t_max,
                    per_step_probs: Some(per_step),
                },
                HaltingTrace { h: soft, s, p, z },
            ))
        }
    }
}
