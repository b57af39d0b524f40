//! Trains the cascade and the average-ensemble pool on the tiered benchmark
//! and prints accuracy, cost and utility for each method.
//!
//! Usage: `cargo run --release --example desk_benchmark -- [first_seed] [seeds]`

use std::time::Instant;

use cascade_core::baselines::{grid_search_predictions, AverageEnsemble, SingleModel, ThresholdPolicy};
use cascade_core::datahub::{gen_tiered, Split, TieredSpec};
use cascade_core::evalkit::{
    evaluate, min_ensemble_size_histogram, records_tsv, LearnedCascade, PoolPredictions, UtilityConfig, TAU_COST,
};
use cascade_core::training::{train_pool, train_sequential, TrainConfig};

fn main() -> cascade_core::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let first = args.first().copied().unwrap_or(0);
    let count = args.get(1).copied().unwrap_or(3);

    for seed in first..first + count {
        let start = Instant::now();
        let data = gen_tiered(&TieredSpec {
            seed,
            ..Default::default()
        })?;
        let (train, val, test) = (data.split(Split::Train), data.split(Split::Val), data.split(Split::Test));
        let cfg = TrainConfig::desk_benchmark(seed);
        let (pool, _) = train_pool(&cfg, &train)?;
        let cascade = train_sequential(&cfg, &train)?;

        let single = evaluate("single", &SingleModel(&pool[0]), &test, None)?.record;
        let full = evaluate("average", &AverageEnsemble(&pool), &test, None)?.record;
        let utility = UtilityConfig::calibrated(single.top1, full.top1, pool.len(), TAU_COST);
        let learned = LearnedCascade {
            models: &cascade.models,
            selector: &cascade.selector,
        };
        let mut records = vec![single, full, evaluate("learned", &learned, &test, None)?.record];
        match &utility {
            Ok(u) => {
                let gs = grid_search_predictions(&PoolPredictions::compute(&pool, &val)?, u)?;
                let woc = ThresholdPolicy::new(gs.best_threshold(), &pool)?;
                records.push(evaluate("woc", &woc, &test, None)?.record);
                records = records.into_iter().map(|r| r.with_utility(u)).collect::<Result<_, _>>()?;
            }
            Err(e) => println!("utility: {e}"),
        }
        println!("seed {seed} ({:.1?})", start.elapsed());
        print!("{}", records_tsv(&records));
        let hist = min_ensemble_size_histogram(&PoolPredictions::compute(&pool, &test)?);
        println!("size-1 share of solvable: {:.3}", hist.solvable_fraction(1));
    }
    Ok(())
}
