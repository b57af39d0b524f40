use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cost exponent.
pub const TAU_COST: f64 = 0.01;

/// Weighted-product trade-off `(top1 / v)^tau_v / (cost / c)^tau_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityConfig {
    pub v: f64,
    pub c: f64,
    pub tau_v: f64,
    pub tau_c: f64,
    /// Raw utility of the single-model anchor.
    pub single_ref_utility: f64,
}

impl UtilityConfig {
    /// Solves `tau_v` so the single model `(single_top1, 1)` and the full
    /// ensemble `(full_top1, stages)` score the same, and anchors on the former.
    pub fn calibrated(single_top1: f64, full_top1: f64, stages: usize, tau_c: f64) -> Result<Self> {
        let tau_v = calibrate_tau(single_top1, full_top1, stages, tau_c)?;
        let mut cfg = Self {
            v: 1.0,
            c: 1.0,
            tau_v,
            tau_c,
            single_ref_utility: 0.0,
        };
        cfg.single_ref_utility = raw_utility(single_top1, 1.0, &cfg)?;
        Ok(cfg)
    }
}

pub fn calibrate_tau(single_top1: f64, full_top1: f64, stages: usize, tau_c: f64) -> Result<f64> {
    if !(tau_c > 0.0 && tau_c.is_finite()) {
        return Err(Error::invalid(format!("cost exponent must be positive, got {tau_c}")));
    }
    if stages < 2 {
        return Err(Error::invalid("calibration needs a full ensemble of at least two models"));
    }
    if single_top1.is_nan() || full_top1.is_nan() || single_top1 <= 0.0 || full_top1 <= single_top1 {
        return Err(Error::invalid(format!(
            "calibration undefined: full ensemble top-1 {full_top1:.4} does not improve on single model {single_top1:.4}"
        )));
    }
    Ok(tau_c * (stages as f64).ln() / (full_top1 / single_top1).ln())
}

/// `top1` is in percent.
pub fn raw_utility(top1: f64, cost: f64, cfg: &UtilityConfig) -> Result<f64> {
    if cost.is_nan() || cost <= 0.0 {
        return Err(Error::invalid(format!("cost must be positive, got {cost}")));
    }
    if top1 < 0.0 {
        return Err(Error::invalid(format!("top-1 must be non-negative, got {top1}")));
    }
    Ok((top1 / cfg.v).powf(cfg.tau_v) / (cost / cfg.c).powf(cfg.tau_c))
}

pub fn reported_utility(raw: f64, cfg: &UtilityConfig) -> f64 {
    (raw - cfg.single_ref_utility).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_anchors_calibrate() {
        let tau = calibrate_tau(93.10, 94.46, 3, TAU_COST).unwrap();
        assert!((tau - 0.7576).abs() < 5e-4, "{tau}");
        let cfg = UtilityConfig::calibrated(93.10, 94.46, 3, TAU_COST).unwrap();
        let a = raw_utility(93.10, 1.0, &cfg).unwrap();
        let b = raw_utility(94.46, 3.0, &cfg).unwrap();
        assert!((a - b).abs() < 1e-9);
        assert_eq!(reported_utility(a, &cfg), 1.0);
        assert!((reported_utility(b, &cfg) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unit_cost_drops_denominator() {
        let cfg = UtilityConfig::calibrated(80.0, 85.0, 4, TAU_COST).unwrap();
        let raw = raw_utility(77.0, 1.0, &cfg).unwrap();
        assert!((raw - 77f64.powf(cfg.tau_v)).abs() < 1e-12);
    }

    #[test]
    fn tau_is_linear_in_cost_exponent() {
        let a = calibrate_tau(90.0, 92.0, 3, 0.01).unwrap();
        let b = calibrate_tau(90.0, 92.0, 3, 0.02).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn shifted_exponential() {
        let cfg = UtilityConfig {
            v: 1.0,
            c: 1.0,
            tau_v: 1.0,
            tau_c: 0.01,
            single_ref_utility: 2.0,
        };
        assert!((reported_utility(2.1, &cfg) - 1.105_170_918).abs() < 1e-8);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(calibrate_tau(90.0, 90.0, 3, 0.01).is_err());
        assert!(calibrate_tau(90.0, 89.0, 3, 0.01).is_err());
        assert!(calibrate_tau(90.0, 91.0, 1, 0.01).is_err());
        assert!(calibrate_tau(90.0, 91.0, 3, 0.0).is_err());
        let cfg = UtilityConfig::calibrated(90.0, 91.0, 3, 0.01).unwrap();
        assert!(raw_utility(90.0, 0.0, &cfg).is_err());
    }
}
