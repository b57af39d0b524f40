use rand::Rng as _;

use super::Mode;
use crate::error::{Error, Result};
use crate::numgraph::{sigmoid, Graph, Var};
use crate::rng::Rng;

const LOG_EPS: f64 = 1e-12;

fn gumbel(rng: &mut Rng) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// `g_halt - g_continue` for two independent standard Gumbel draws.
pub fn sample_logistic(rng: &mut Rng) -> f64 {
    gumbel(rng) - gumbel(rng)
}

/// Halt coordinate of the two-way Gumbel-Softmax sample over {halt, continue}
/// with logits `(ln h, ln(1 - h))` and the given perturbation.
pub fn relaxed_halt(h: f64, temperature: f64, noise: f64) -> f64 {
    sigmoid((h.ln() - (1.0 - h).ln() + noise) / temperature)
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "Gumbel temperature must be positive, got {temperature}"
        )));
    }
    Ok(())
}

/// Binary halting decision for one probability.
///
/// Eval mode thresholds at 0.5. Train mode thresholds the relaxed sample at
/// 0.5, so it returns 1 with probability exactly `h` for any temperature.
pub fn gumbel_binarize(h: f64, temperature: f64, mode: Mode, rng: &mut Rng) -> Result<f64> {
    check_temperature(temperature)?;
    if !(0.0..=1.0).contains(&h) {
        return Err(Error::invalid(format!("halt probability {h} outside [0, 1]")));
    }
    let soft = match mode {
        Mode::Eval => h,
        Mode::Train => relaxed_halt(h, temperature, sample_logistic(rng)),
    };
    Ok(if soft >= 0.5 { 1.0 } else { 0.0 })
}

/// Straight-through version over a `[n]` batch: the forward value is the hard
/// sample, the gradient is that of the relaxed sample.
pub fn gumbel_binarize_graph(g: &mut Graph, h: Var, temperature: f64, rng: &mut Rng) -> Result<Var> {
    check_temperature(temperature)?;
    let n = g.value(h).len();
    let noise: Vec<f64> = (0..n).map(|_| sample_logistic(rng)).collect();
    let noise = g.constant(g.shape(h).to_vec(), noise)?;

    let lh = g.add_scalar(h, LOG_EPS);
    let lh = g.log(lh);
    let rest = g.one_minus(h);
    let lr = g.add_scalar(rest, LOG_EPS);
    let lr = g.log(lr);
    let logit = g.sub(lh, lr)?;
    let logit = g.add(logit, noise)?;
    let logit = g.scale(logit, 1.0 / temperature);
    let soft = g.sigmoid(logit);
    Ok(g.straight_through(soft))
}
