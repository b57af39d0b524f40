use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

/// Synthetic K-class Gaussian-mixture benchmark stratified by difficulty.
///
/// Every tier lives in its own region of feature space. Tier 1 has one
/// well-separated component per class, later tiers have several interleaved
/// components per class with growing overlap. In the hardest tier part of
/// each class is drawn from the other classes' components, so labels stay
/// balanced while the Bayes error is bounded away from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TieredSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub tiers: usize,
    pub classes: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for TieredSpec {
    fn default() -> Self {
        Self {
            train: 3000,
            val: 1000,
            test: 1000,
            tiers: 3,
            classes: 3,
            dim: 16,
            seed: 0,
        }
    }
}

/// Geometry of one difficulty tier.
struct TierShape {
    components_per_class: usize,
    /// Scale of the component means within the tier plane.
    spread: f64,
    /// Per-coordinate standard deviation around a component mean.
    noise: f64,
    /// Share of samples whose features come from another class's components.
    foreign: f64,
}

const LAYOUT: [TierShape; 3] = [
    TierShape {
        components_per_class: 1,
        spread: 4.0,
        noise: 1.0,
        foreign: 0.0,
    },
    TierShape {
        components_per_class: 4,
        spread: 2.5,
        noise: 0.5,
        foreign: 0.0,
    },
    TierShape {
        components_per_class: 10,
        spread: 3.0,
        noise: 0.3,
        foreign: 0.3,
    },
];
const TIER_RADIUS: f64 = 6.0;

struct Component {
    mean: Vec<f64>,
    noise: f64,
}

fn unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random orthonormal pair spanning a plane.
fn plane(dim: usize, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let a = unit(dim, rng);
    loop {
        let mut b = unit(dim, rng);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        b.iter_mut().zip(&a).for_each(|(bi, ai)| *bi -= dot * ai);
        let n = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            b.iter_mut().for_each(|x| *x /= n);
            return (a, b);
        }
    }
}

fn tier_components(tier: usize, spec: &TieredSpec, rng: &mut Rng) -> Vec<Vec<Component>> {
    let d = spec.dim;
    let center: Vec<f64> = unit(d, rng).into_iter().map(|x| x * TIER_RADIUS * tier as f64).collect();
    let (a, b) = plane(d, rng);
    let TierShape {
        components_per_class: per_class,
        spread,
        noise,
        ..
    } = LAYOUT[tier];
    let at = |u: f64, v: f64| -> Vec<f64> { (0..d).map(|i| center[i] + u * a[i] + v * b[i]).collect() };
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    (0..spec.classes)
        .map(|k| {
            if per_class == 1 {
                let angle = phase + std::f64::consts::TAU * k as f64 / spec.classes as f64;
                vec![Component {
                    mean: at(spread * angle.cos(), spread * angle.sin()),
                    noise,
                }]
            } else {
                (0..per_class)
                    .map(|_| {
                        let u: f64 = StandardNormal.sample(rng);
                        let v: f64 = StandardNormal.sample(rng);
                        Component {
                            mean: at(spread * u, spread * v),
                            noise,
                        }
                    })
                    .collect()
            }
        })
        .collect()
}

/// Generates the tiered benchmark. Within each split, samples cycle through
/// the `(tier, class)` cells so cell counts differ by at most one. Features
/// are standardized per column to zero mean and unit variance.
pub fn gen_tiered(spec: &TieredSpec) -> Result<Dataset> {
    if spec.train + spec.val + spec.test == 0 {
        return Err(Error::invalid("tiered dataset needs at least one sample"));
    }
    if !(1..=LAYOUT.len()).contains(&spec.tiers) {
        return Err(Error::invalid(format!(
            "tiers must be in 1..={}, got {}",
            LAYOUT.len(),
            spec.tiers
        )));
    }
    if spec.classes < 2 {
        return Err(Error::invalid("tiered dataset needs at least two classes"));
    }
    if !(2..=16).contains(&spec.dim) {
        return Err(Error::invalid(format!("dimension must be in 2..=16, got {}", spec.dim)));
    }

    let mut geo = substream(spec.seed, "data.geometry");
    let layout: Vec<_> = (0..spec.tiers).map(|t| tier_components(t, spec, &mut geo)).collect();
    let mut noise = substream(spec.seed, "data.samples");

    let total = spec.train + spec.val + spec.test;
    let mut features = Vec::with_capacity(total * spec.dim);
    let mut labels = Vec::with_capacity(total);
    let mut splits = Vec::with_capacity(total);
    let mut tiers = Vec::with_capacity(total);
    let cells = spec.tiers * spec.classes;
    for (split, n) in [(Split::Train, spec.train), (Split::Val, spec.val), (Split::Test, spec.test)] {
        for j in 0..n {
            let cell = j % cells;
            let (tier, class) = (cell / spec.classes, cell % spec.classes);
            let source = if noise.random::<f64>() < LAYOUT[tier].foreign {
                (class + 1 + noise.random_range(0..spec.classes - 1)) % spec.classes
            } else {
                class
            };
            let comps = &layout[tier][source];
            let comp = &comps[noise.random_range(0..comps.len())];
            for m in &comp.mean {
                let e: f64 = StandardNormal.sample(&mut noise);
                features.push(m + comp.noise * e);
            }
            labels.push(class);
            splits.push(split);
            tiers.push(tier + 1);
        }
    }
    standardize_columns(&mut features, spec.dim);
    let provenance = format!(
        "tiered(train={},val={},test={},tiers={},classes={},dim={},seed={})",
        spec.train, spec.val, spec.test, spec.tiers, spec.classes, spec.dim, spec.seed
    );
    Dataset::new(features, spec.dim, labels, spec.classes, splits, provenance)?.with_tiers(tiers)
}

fn standardize_columns(features: &mut [f64], dim: usize) {
    let n = (features.len() / dim) as f64;
    for c in 0..dim {
        let mean = features.iter().skip(c).step_by(dim).sum::<f64>() / n;
        let var = features.iter().skip(c).step_by(dim).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for v in features.iter_mut().skip(c).step_by(dim) {
            *v = (*v - mean) / sd;
        }
    }
}
