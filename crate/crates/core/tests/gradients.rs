//! Finite-difference checks of every loss term and the detach contract.
//!
//! Detached inputs are constants to the numeric oracle, so each term is
//! probed only on the parameters it trains.

mod common;

use common::{central_difference, grads_agree, Fixture, Term, TERMS};
use rand::Rng as _;

const PROBES: u64 = 24;
const ROWS: usize = 4;

/// Parameter ranges (`owner_range` indices) on which `term` is exact at `stage`.
fn probe_owners(term: Term, stage: usize) -> Vec<usize> {
    let current = stage - 1;
    let selector = stage;
    match term {
        Term::Base => vec![current],
        Term::Ens | Term::Cost => vec![selector],
        // the bootstrapped reference depends on the selector from stage 3 on
        Term::Rank if stage == 2 => vec![current, selector],
        Term::Rank => vec![current],
        Term::Total if stage == 2 => vec![selector],
        Term::Total => vec![],
    }
}

/// Returns the worst `(analytic, numeric)` pair that failed, if any.
fn check(term: Term, stage: usize, owners: &[usize], tweak: impl Fn(&mut Fixture)) -> Result<usize, String> {
    let mut checked = 0;
    for probe in 0..PROBES {
        let mut fx = Fixture::new(stage, ROWS, 100 + probe);
        tweak(&mut fx);
        let owner = owners[probe as usize % owners.len()];
        let range = fx.owner_range(owner);
        let mut rng = cascade_core::rng::substream(probe, "probe");
        let i = rng.random_range(range);
        let params = fx.params();
        let (_, grads) = fx.evaluate(term);
        let numeric = central_difference(|p| fx.with_params(p).value(term), &params, i);
        if !grads_agree(grads[i], numeric) {
            return Err(format!(
                "{term:?} stage {stage} probe {probe} param {i}: analytic {} numeric {numeric}",
                grads[i]
            ));
        }
        checked += 1;
    }
    Ok(checked)
}

#[test]
fn every_term_matches_finite_differences() {
    for stage in [2, 3] {
        for term in TERMS {
            let owners = probe_owners(term, stage);
            if owners.is_empty() {
                continue;
            }
            let n = check(term, stage, &owners, |_| {}).unwrap();
            assert!(n >= 20);
        }
    }
}

#[test]
fn total_matches_on_current_model_without_ensemble_term() {
    // the ensemble term reads detached predictions of the current model
    for stage in [2, 3] {
        check(Term::Total, stage, &[stage - 1], |fx| fx.weights.ens = 0.0).unwrap();
    }
}

#[test]
fn first_stage_total_is_base() {
    let fx = Fixture::new(1, ROWS, 5);
    let (base, gb) = fx.evaluate(Term::Base);
    let (total, gt) = fx.evaluate(Term::Total);
    assert_eq!(base, total);
    assert_eq!(gb, gt);
    check(Term::Base, 1, &[0], |_| {}).unwrap();
}

fn all_zero(grads: &[f64], range: std::ops::Range<usize>) -> bool {
    grads[range].iter().all(|g| *g == 0.0)
}

#[test]
fn detach_paths_route_gradients() {
    for seed in 0..5 {
        let fx = Fixture::new(2, ROWS, seed);
        let (first, second, selector) = (fx.owner_range(0), fx.owner_range(1), fx.owner_range(2));
        let (_, total) = fx.evaluate(Term::Total);
        assert!(all_zero(&total, first.clone()), "total reaches the frozen model");
        let (_, ens) = fx.evaluate(Term::Ens);
        assert!(all_zero(&ens, first.clone()) && all_zero(&ens, second.clone()));
        let (_, cost) = fx.evaluate(Term::Cost);
        assert!(all_zero(&cost, first) && all_zero(&cost, second.clone()));
        let (_, base) = fx.evaluate(Term::Base);
        assert!(all_zero(&base, selector.clone()));
        // the selector and the current model are actually trained
        assert!(!all_zero(&total, second) && !all_zero(&total, selector));
    }
}
