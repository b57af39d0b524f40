use rand::seq::IndexedRandom;
use rand::Rng as _;
use rayon::prelude::*;

use super::{TrainConfig, SELECTOR_DECAY_CHOICES};
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

pub const SEARCH_TRIALS: usize = 24;

const SELECTOR_LR: (f64, f64) = (1e-5, 1e-1);
const ENS_WEIGHT: (f64, f64) = (1e-4, 1e-1);
const COST_WEIGHT: (f64, f64) = (1e-5, 1e-1);
const RANK_WEIGHT: (f64, f64) = (1e-4, 1e-1);

fn log_uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo.ln()..=hi.ln()).exp()
}

/// Draws `trials` variants of `base`, resampling the selector learning rate,
/// its decay factor and the three loss weights. Each trial gets its own seed.
pub fn sample_trials(base: &TrainConfig, trials: usize, seed: u64) -> Vec<TrainConfig> {
    let mut rng = substream(seed, "search");
    (0..trials)
        .map(|i| {
            let mut cfg = base.clone();
            cfg.selector_optim.lr = log_uniform(&mut rng, SELECTOR_LR);
            cfg.selector_optim.decay = *SELECTOR_DECAY_CHOICES.choose(&mut rng).expect("non-empty");
            cfg.weights.ens = log_uniform(&mut rng, ENS_WEIGHT);
            cfg.weights.cost = log_uniform(&mut rng, COST_WEIGHT);
            cfg.weights.rank = log_uniform(&mut rng, RANK_WEIGHT);
            cfg.seed = base.seed.wrapping_add(i as u64);
            cfg
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub config: TrainConfig,
    /// `Err` carries the failure message of a diverged or invalid trial.
    pub score: std::result::Result<f64, String>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub trials: Vec<TrialResult>,
    /// Index of the highest finite score; ties go to the earliest trial.
    pub best: usize,
}

impl SearchOutcome {
    pub fn best_trial(&self) -> &TrialResult {
        &self.trials[self.best]
    }
}

/// Scores every sampled trial (in parallel) and keeps the best.
pub fn random_search<F>(base: &TrainConfig, trials: usize, seed: u64, objective: F) -> Result<SearchOutcome>
where
    F: Fn(&TrainConfig) -> Result<f64> + Sync,
{
    let configs = sample_trials(base, trials, seed);
    let trials: Vec<TrialResult> = configs
        .into_par_iter()
        .map(|config| {
            let score = match objective(&config) {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(v) => Err(format!("non-finite score {v}")),
                Err(e) => Err(e.to_string()),
            };
            TrialResult { config, score }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in trials.iter().enumerate() {
        if let Ok(v) = t.score {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    let (best, _) = best.ok_or_else(|| Error::invalid("every search trial failed"))?;
    Ok(SearchOutcome { trials, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trials_respect_ranges() {
        let base = TrainConfig::new(3, 10);
        let trials = sample_trials(&base, SEARCH_TRIALS, 4);
        assert_eq!(trials.len(), 24);
        for c in &trials {
            assert!((1e-5..=1e-1).contains(&c.selector_optim.lr));
            assert!(SELECTOR_DECAY_CHOICES.contains(&c.selector_optim.decay));
            assert!((1e-4..=1e-1).contains(&c.weights.ens));
            assert!((1e-5..=1e-1).contains(&c.weights.cost));
            assert!((1e-4..=1e-1).contains(&c.weights.rank));
            assert!(c.validate().is_ok());
        }
        assert_eq!(trials, sample_trials(&base, SEARCH_TRIALS, 4));
    }

    #[test]
    fn log_uniform_spreads_over_decades() {
        let mut rng = substream(0, "t");
        let draws: Vec<f64> = (0..4000).map(|_| log_uniform(&mut rng, (1e-5, 1e-1))).collect();
        let below = draws.iter().filter(|v| **v < 1e-3).count() as f64 / draws.len() as f64;
        assert!((below - 0.5).abs() < 0.05, "{below}");
    }

    #[test]
    fn best_is_argmax_and_failures_are_kept() {
        let base = TrainConfig::new(2, 4);
        let out = random_search(&base, 6, 1, |c| {
            if c.seed % 3 == 0 {
                Err(Error::invalid("boom"))
            } else {
                Ok(-c.weights.cost)
            }
        })
        .unwrap();
        assert_eq!(out.trials.len(), 6);
        let best = out.best_trial().score.clone().unwrap();
        for t in &out.trials {
            if let Ok(v) = t.score {
                assert!(v <= best);
            }
        }
        assert!(out.trials.iter().any(|t| t.score.is_err()));
        assert!(random_search(&base, 3, 1, |_| Err(Error::invalid("x"))).is_err());
    }
}
