//! Reference methods: one model, the full average ensemble, and the
//! confidence-threshold cascade over the same pool.

use serde::Serialize;

use crate::datahub::Samples;
use crate::error::{Error, Result};
use crate::evalkit::{argmax, prefix_averages, raw_utility, Decision, PoolPredictions, Predictor, UtilityConfig};
use crate::nets::{base_forward, BaseModel};

fn member_probs(pool: &[BaseModel], x: &[f64], upto: usize) -> Result<Vec<Vec<f64>>> {
    pool[..upto]
        .iter()
        .map(|m| base_forward(m, x).map(|o| o.main_probs))
        .collect()
}

/// Mean of every member's main-head probabilities.
pub fn average_ensemble_predict(pool: &[BaseModel], x: &[f64]) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Err(Error::invalid("average ensemble needs a non-empty pool"));
    }
    let preds = member_probs(pool, x, pool.len())?;
    Ok(prefix_averages(&preds).pop().expect("non-empty"))
}

pub struct SingleModel<'a>(pub &'a BaseModel);

impl Predictor for SingleModel<'_> {
    fn max_steps(&self) -> usize {
        1
    }

    fn predict(&self, x: &[f64]) -> Result<Decision> {
        Ok(Decision {
            probs: base_forward(self.0, x)?.main_probs,
            steps_used: 1,
            halting: None,
        })
    }
}

pub struct AverageEnsemble<'a>(pub &'a [BaseModel]);

impl Predictor for AverageEnsemble<'_> {
    fn max_steps(&self) -> usize {
        self.0.len()
    }

    fn predict(&self, x: &[f64]) -> Result<Decision> {
        Ok(Decision {
            probs: average_ensemble_predict(self.0, x)?,
            steps_used: self.0.len(),
            halting: None,
        })
    }
}

/// Stops once the running average's top class probability reaches `threshold`.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdPolicy<'a> {
    threshold: f64,
    pool: &'a [BaseModel],
}

impl<'a> ThresholdPolicy<'a> {
    pub fn new(threshold: f64, pool: &'a [BaseModel]) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::invalid(format!("threshold must lie in [0, 1], got {threshold}")));
        }
        if pool.is_empty() {
            return Err(Error::invalid("threshold cascade needs a non-empty pool"));
        }
        Ok(Self { threshold, pool })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Cascade decision from already computed member predictions.
pub fn cascade_from_predictions(preds: &[Vec<f64>], threshold: f64) -> (Vec<f64>, usize) {
    let averages = prefix_averages(preds);
    let last = averages.len();
    let stop = averages
        .iter()
        .position(|avg| avg.iter().copied().fold(f64::NEG_INFINITY, f64::max) >= threshold)
        .map_or(last, |k| k + 1);
    (averages[stop - 1].clone(), stop)
}

/// Runs members lazily; returns the prediction and the number of models used.
pub fn threshold_cascade(policy: &ThresholdPolicy<'_>, x: &[f64]) -> Result<(Vec<f64>, usize)> {
    let mut preds = Vec::with_capacity(policy.pool.len());
    for m in policy.pool {
        preds.push(base_forward(m, x)?.main_probs);
        let (avg, steps) = cascade_from_predictions(&preds, policy.threshold);
        if steps < preds.len() || preds.len() == policy.pool.len() {
            return Ok((avg, steps));
        }
    }
    unreachable!("loop returns at the last member")
}

impl Predictor for ThresholdPolicy<'_> {
    fn max_steps(&self) -> usize {
        self.pool.len()
    }

    fn predict(&self, x: &[f64]) -> Result<Decision> {
        let (probs, steps_used) = threshold_cascade(self, x)?;
        Ok(Decision {
            probs,
            steps_used,
            halting: None,
        })
    }
}

pub const GRID_POINTS: usize = 101;

/// `0.00, 0.01, ..., 1.00`.
pub fn threshold_grid() -> Vec<f64> {
    (0..GRID_POINTS).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub threshold: f64,
    pub top1: f64,
    pub avg_cost: f64,
    pub raw_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearch {
    pub points: Vec<GridPoint>,
    pub best: usize,
}

impl GridSearch {
    pub fn best_threshold(&self) -> f64 {
        self.points[self.best].threshold
    }
}

/// Top-1 (percent) and mean cost of the cascade at each threshold.
pub fn sweep_thresholds(preds: &PoolPredictions, thresholds: &[f64]) -> Vec<(f64, f64, f64)> {
    let n = preds.len().max(1) as f64;
    thresholds
        .iter()
        .map(|&th| {
            let (mut correct, mut cost) = (0usize, 0usize);
            for (p, &y) in preds.probs.iter().zip(&preds.labels) {
                let (avg, steps) = cascade_from_predictions(p, th);
                correct += usize::from(argmax(&avg) == y);
                cost += steps;
            }
            (th, 100.0 * correct as f64 / n, cost as f64 / n)
        })
        .collect()
}

/// Scores all 101 thresholds on cached predictions; ties go to the lowest threshold.
pub fn grid_search_predictions(preds: &PoolPredictions, utility: &UtilityConfig) -> Result<GridSearch> {
    if preds.is_empty() {
        return Err(Error::invalid("grid search needs validation samples"));
    }
    let points = sweep_thresholds(preds, &threshold_grid())
        .into_iter()
        .map(|(threshold, top1, avg_cost)| {
            Ok(GridPoint {
                threshold,
                top1,
                avg_cost,
                raw_utility: raw_utility(top1, avg_cost, utility)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.raw_utility > points[best].raw_utility {
            best = i;
        }
    }
    Ok(GridSearch { points, best })
}

pub fn threshold_grid_search(pool: &[BaseModel], val: &Samples, utility: &UtilityConfig) -> Result<GridSearch> {
    grid_search_predictions(&PoolPredictions::compute(pool, val)?, utility)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::BaseConfig;
    use crate::rng::substream;

    fn pool(n: usize) -> Vec<BaseModel> {
        let cfg = BaseConfig {
            input_dim: 3,
            hidden: vec![6],
            num_classes: 3,
        };
        let mut rng = substream(2, "pool");
        (0..n).map(|_| BaseModel::new(cfg.clone(), &mut rng).unwrap()).collect()
    }

    #[test]
    fn pool_of_one_is_that_model() {
        let p = pool(1);
        let x = [0.3, -0.2, 0.9];
        assert_eq!(
            average_ensemble_predict(&p, &x).unwrap(),
            base_forward(&p[0], &x).unwrap().main_probs
        );
        assert!(average_ensemble_predict(&[], &x).is_err());
    }

    #[test]
    fn opposite_members_average_to_uniform() {
        let avg = prefix_averages(&[vec![1.0, 0.0], vec![0.0, 1.0]]).pop().unwrap();
        assert_eq!(avg, vec![0.5, 0.5]);
        // a degenerate first member already meets the top threshold
        let (_, steps) = cascade_from_predictions(&[vec![1.0, 0.0], vec![0.0, 1.0]], 1.0);
        assert_eq!(steps, 1);
    }

    #[test]
    fn threshold_limits() {
        let p = pool(3);
        let x = [0.1, 0.5, -0.4];
        let zero = ThresholdPolicy::new(0.0, &p).unwrap();
        let (probs, steps) = threshold_cascade(&zero, &x).unwrap();
        assert_eq!(steps, 1);
        assert_eq!(probs, base_forward(&p[0], &x).unwrap().main_probs);
        let one = ThresholdPolicy::new(1.0, &p).unwrap();
        let (probs, steps) = threshold_cascade(&one, &x).unwrap();
        assert_eq!(steps, 3);
        assert_eq!(probs, average_ensemble_predict(&p, &x).unwrap());
        assert!(ThresholdPolicy::new(1.5, &p).is_err());
    }

    #[test]
    fn grid_has_101_points() {
        let g = threshold_grid();
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[100], 1.0);
        assert_eq!(g[37], 0.37);
    }

    #[test]
    fn redundant_pool_prefers_zero_threshold() {
        let one = pool(1).remove(0);
        let same = vec![one.clone(), one.clone(), one];
        let val = Samples {
            features: (0..60).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect(),
            labels: (0..20).map(|i| i % 3).collect(),
            tiers: None,
            dim: 3,
            num_classes: 3,
        };
        let utility = UtilityConfig::calibrated(50.0, 55.0, 3, 0.01).unwrap();
        let gs = threshold_grid_search(&same, &val, &utility).unwrap();
        assert_eq!(gs.best_threshold(), 0.0);
        let best = gs.points[gs.best].raw_utility;
        assert!(best >= gs.points[0].raw_utility && best >= gs.points[100].raw_utility);
    }
}
