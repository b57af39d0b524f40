//! Stage-wise joint training of base models and the shared selector.
//!
//! Stage `t` trains model `t` from scratch while models `1..t` stay frozen.
//! The selector carries over between stages; its optimizer and schedule are
//! rebuilt at every stage.

mod optim;
mod search;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::datahub::Samples;
use crate::error::{Error, Result};
use crate::losses::{stage_objective, LossBundle, LossWeights, Relaxation, StageInputs};
use crate::nets::{BaseConfig, BaseModel, Parameterized, Selector, SelectorConfig};
use crate::numgraph::Graph;
use crate::rng::substream;

pub use optim::{scaled_milestones, Adam, AdamConfig, Sgd, SgdConfig, MILESTONE_FRACTIONS, SELECTOR_DECAY_CHOICES};
pub use search::{random_search, sample_trials, SearchOutcome, TrialResult, SEARCH_TRIALS};

/// How halt probabilities enter the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltRelaxation {
    Soft,
    /// Straight-through Gumbel samples at the scheduled temperature.
    Gumbel,
}

/// Linear anneal from `start` to `end` over the epochs of a stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureSchedule {
    pub start: f64,
    pub end: f64,
}

impl TemperatureSchedule {
    pub fn constant(t: f64) -> Self {
        Self { start: t, end: t }
    }

    /// Temperature for 0-based `epoch` of `epochs`.
    pub fn at(&self, epoch: usize, epochs: usize) -> f64 {
        if epochs <= 1 {
            return self.start;
        }
        let f = epoch as f64 / (epochs - 1) as f64;
        self.start + (self.end - self.start) * f
    }
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self::constant(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stages: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub selector_hidden: usize,
    pub base_optim: SgdConfig,
    pub selector_optim: AdamConfig,
    pub weights: LossWeights,
    pub lambda_dis: f64,
    pub relaxation: HaltRelaxation,
    pub temperature: TemperatureSchedule,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(stages: usize, epochs: usize) -> Self {
        Self {
            stages,
            epochs,
            batch_size: 64,
            hidden: vec![64, 64],
            selector_hidden: 32,
            base_optim: SgdConfig::reference(epochs),
            selector_optim: AdamConfig::reference(epochs),
            weights: LossWeights {
                ens: 0.1,
                cost: 3e-4,
                rank: 0.01,
            },
            lambda_dis: 0.01,
            relaxation: HaltRelaxation::Soft,
            temperature: TemperatureSchedule::default(),
            seed: 0,
        }
    }

    /// Three-stage setup used for the tiered desk benchmark.
    pub fn desk_benchmark(seed: u64) -> Self {
        Self {
            hidden: vec![128, 128],
            seed,
            ..Self::new(3, 40)
        }
    }

    /// Every validation failure, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.stages == 0 {
            out.push("stages must be >= 1".to_string());
        }
        if self.epochs == 0 {
            out.push("epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            out.push("batch_size must be >= 1".to_string());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            out.push(format!("hidden widths must be non-empty and positive, got {:?}", self.hidden));
        }
        if self.selector_hidden == 0 {
            out.push("selector_hidden must be >= 1".to_string());
        }
        if let Err(e) = self.base_optim.validate() {
            out.push(e.to_string());
        }
        if let Err(e) = self.selector_optim.validate() {
            out.push(e.to_string());
        }
        if let Err(e) = self.weights.validate() {
            out.push(e.to_string());
        }
        if !(self.lambda_dis >= 0.0 && self.lambda_dis.is_finite()) {
            out.push(format!("lambda_dis must be >= 0, got {}", self.lambda_dis));
        }
        let TemperatureSchedule { start, end } = self.temperature;
        if !(start > 0.0 && end > 0.0 && start.is_finite() && end.is_finite()) {
            out.push(format!("temperatures must be positive, got {start} -> {end}"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(p.join("; ")))
        }
    }

    pub fn base_config(&self, input_dim: usize, num_classes: usize) -> BaseConfig {
        BaseConfig {
            input_dim,
            hidden: self.hidden.clone(),
            num_classes,
        }
    }
}

/// Batch-size-weighted means of the loss terms over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub stage: usize,
    /// 1-based.
    pub epoch: usize,
    pub base_lr: f64,
    pub selector_lr: Option<f64>,
    pub base: f64,
    pub ens: Option<f64>,
    pub cost: Option<f64>,
    pub rank: Option<f64>,
    pub total: f64,
}

impl EpochRecord {
    pub fn is_finite(&self) -> bool {
        [Some(self.base), self.ens, self.cost, self.rank, Some(self.total)]
            .iter()
            .flatten()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LearningCurve {
    pub records: Vec<EpochRecord>,
}

impl LearningCurve {
    pub fn stage(&self, stage: usize) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    pub fn all_finite(&self) -> bool {
        self.records.iter().all(EpochRecord::is_finite)
    }

    /// Tab-separated table; absent terms are written as `-`.
    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        let mut s = String::from("stage\tepoch\tbase_lr\tselector_lr\tbase\tens\tcost\trank\ttotal\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.6}\t{}\t{:.6}\t{}\t{}\t{}\t{:.6}",
                r.stage,
                r.epoch,
                r.base_lr,
                r.selector_lr.map_or("-".to_string(), |v| format!("{v:.6}")),
                r.base,
                opt(r.ens),
                opt(r.cost),
                opt(r.rank),
                r.total
            );
        }
        s
    }
}

/// FNV-1a over parameter names and the bit patterns of their values.
pub fn param_checksum(p: &impl Parameterized) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for (name, t) in p.named_params() {
        eat(name.as_bytes());
        for v in t.data() {
            eat(&v.to_bits().to_le_bytes());
        }
    }
    h
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub models: Vec<BaseModel>,
    pub selector: Selector,
    pub curve: LearningCurve,
}

/// State handed to the per-stage callback.
pub struct StageReport<'a> {
    pub stage: usize,
    pub models: &'a [BaseModel],
    pub selector: &'a Selector,
    pub curve: &'a LearningCurve,
}

fn check_data(data: &Samples) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    Ok(())
}

/// Trains model `stage` on top of the frozen `prefix`, updating `selector` when `stage > 1`.
fn run_stage(
    cfg: &TrainConfig,
    data: &Samples,
    prefix: &[BaseModel],
    selector: &mut Selector,
    stage: usize,
    curve: &mut LearningCurve,
) -> Result<BaseModel> {
    let t = prefix.len() + 1;
    let base_cfg = cfg.base_config(data.dim, data.num_classes);
    let mut model = BaseModel::new(base_cfg, &mut substream(cfg.seed, &format!("init.model.{stage}")))?;
    let mut sgd = Sgd::new(cfg.base_optim.clone())?;
    let mut adam = Adam::new(cfg.selector_optim.clone())?;
    let mut shuffle = substream(cfg.seed, &format!("shuffle.stage.{stage}"));
    let mut gumbel = substream(cfg.seed, &format!("gumbel.stage.{stage}"));
    let train_selector = t > 1;

    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let relaxation = match cfg.relaxation {
            HaltRelaxation::Soft => Relaxation::Soft,
            HaltRelaxation::Gumbel => Relaxation::Gumbel {
                temperature: cfg.temperature.at(epoch, cfg.epochs),
            },
        };
        let (base_lr, selector_lr) = (sgd.lr(), adam.lr());
        let mut sums = [0.0f64; 5];
        for batch in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(batch);
            let mut g = Graph::new();
            let xv = g.constant(vec![batch.len(), data.dim], x)?;
            let mut bindings: Vec<_> = prefix.iter().map(|m| m.bind(&mut g, false)).collect();
            bindings.push(model.bind(&mut g, true));
            let sel = selector.bind(&mut g, train_selector);
            let losses = stage_objective(
                &mut g,
                &StageInputs {
                    models: &bindings,
                    selector: &sel,
                    x: xv,
                    labels: &y,
                    weights: cfg.weights,
                    lambda_dis: cfg.lambda_dis,
                    relaxation,
                },
                &mut gumbel,
            )?;
            let bundle: LossBundle = losses.bundle(&g);
            if let Some(component) = bundle.first_non_finite() {
                return Err(Error::Divergence {
                    stage,
                    epoch: epoch + 1,
                    component,
                });
            }
            g.backward(losses.total)?;

            model.zero_grad();
            model.pull_grads(&g, &bindings[t - 1].vars())?;
            sgd.step(&mut model.params_mut());
            if train_selector {
                selector.zero_grad();
                selector.pull_grads(&g, &sel.vars())?;
                adam.step(&mut selector.params_mut());
            }

            let n = batch.len() as f64;
            for (acc, v) in sums
                .iter_mut()
                .zip([bundle.base, bundle.ens, bundle.cost, bundle.rank, bundle.total])
            {
                *acc += n * v;
            }
        }
        sgd.end_epoch();
        adam.end_epoch();

        let n = data.len() as f64;
        let mean = |i: usize| sums[i] / n;
        let joint = |i: usize| train_selector.then(|| mean(i));
        let record = EpochRecord {
            stage,
            epoch: epoch + 1,
            base_lr,
            selector_lr: train_selector.then_some(selector_lr),
            base: mean(0),
            ens: joint(1),
            cost: joint(2),
            rank: joint(3),
            total: mean(4),
        };
        if !record.is_finite() {
            return Err(Error::Divergence {
                stage,
                epoch: epoch + 1,
                component: "epoch mean",
            });
        }
        curve.records.push(record);
    }
    model.clear_grads();
    selector.clear_grads();
    Ok(model)
}

pub fn train_sequential(cfg: &TrainConfig, data: &Samples) -> Result<TrainOutcome> {
    train_sequential_with(cfg, data, |_| Ok(()))
}

/// As [`train_sequential`], calling `on_stage` after every completed stage.
pub fn train_sequential_with(
    cfg: &TrainConfig,
    data: &Samples,
    mut on_stage: impl FnMut(StageReport<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(data)?;
    let sel_cfg = SelectorConfig::for_classes(data.num_classes, cfg.selector_hidden);
    let mut selector = Selector::new(sel_cfg, &mut substream(cfg.seed, "init.selector"))?;
    let mut models: Vec<BaseModel> = Vec::with_capacity(cfg.stages);
    let mut curve = LearningCurve::default();

    for stage in 1..=cfg.stages {
        let frozen: Vec<u64> = models.iter().map(param_checksum).collect();
        let model = run_stage(cfg, data, &models, &mut selector, stage, &mut curve)?;
        if models.iter().map(param_checksum).ne(frozen.iter().copied()) {
            return Err(Error::invalid(format!("stage {stage} modified a frozen model")));
        }
        models.push(model);
        on_stage(StageReport {
            stage,
            models: &models,
            selector: &selector,
            curve: &curve,
        })?;
    }
    Ok(TrainOutcome { models, selector, curve })
}

/// Trains `cfg.stages` independent dual-head models with the base loss only.
///
/// Member `i` uses the same init and shuffle streams as cascade stage `i`, so
/// member 1 equals the first cascade model.
pub fn train_pool(cfg: &TrainConfig, data: &Samples) -> Result<(Vec<BaseModel>, LearningCurve)> {
    cfg.validate()?;
    check_data(data)?;
    let sel_cfg = SelectorConfig::for_classes(data.num_classes, cfg.selector_hidden);
    let runs: Vec<Result<(BaseModel, LearningCurve)>> = (1..=cfg.stages)
        .into_par_iter()
        .map(|member| {
            // stage-1 objective never touches the selector
            let mut unused = Selector::zeros(sel_cfg.clone())?;
            let mut curve = LearningCurve::default();
            let m = run_stage(cfg, data, &[], &mut unused, member, &mut curve)?;
            Ok((m, curve))
        })
        .collect();
    let mut models = Vec::with_capacity(cfg.stages);
    let mut curve = LearningCurve::default();
    for run in runs {
        let (m, c) = run?;
        models.push(m);
        curve.records.extend(c.records);
    }
    Ok((models, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::{gen_tiered, Split, TieredSpec};

    fn tiny() -> Samples {
        gen_tiered(&TieredSpec {
            train: 90,
            val: 9,
            test: 9,
            dim: 4,
            seed: 5,
            ..Default::default()
        })
        .unwrap()
        .split(Split::Train)
    }

    fn small_cfg(stages: usize) -> TrainConfig {
        TrainConfig {
            hidden: vec![8],
            selector_hidden: 4,
            batch_size: 16,
            seed: 11,
            ..TrainConfig::new(stages, 3)
        }
    }

    #[test]
    fn problems_are_listed_exhaustively() {
        let cfg = TrainConfig {
            stages: 0,
            epochs: 0,
            batch_size: 0,
            lambda_dis: -1.0,
            ..TrainConfig::new(2, 5)
        };
        assert_eq!(cfg.problems().len(), 4, "{:?}", cfg.problems());
        assert!(TrainConfig::new(3, 10).validate().is_ok());
    }

    #[test]
    fn temperature_anneals_linearly() {
        let s = TemperatureSchedule { start: 1.0, end: 0.1 };
        assert_eq!(s.at(0, 10), 1.0);
        assert!((s.at(9, 10) - 0.1).abs() < 1e-12);
        assert_eq!(s.at(0, 1), 1.0);
    }

    #[test]
    fn single_stage_leaves_selector_untouched() {
        let data = tiny();
        let cfg = small_cfg(1);
        let out = train_sequential(&cfg, &data).unwrap();
        let fresh = Selector::new(SelectorConfig::for_classes(3, 4), &mut substream(cfg.seed, "init.selector")).unwrap();
        assert_eq!(out.selector, fresh);
        assert!(out.curve.records.iter().all(|r| r.ens.is_none() && r.selector_lr.is_none()));
        let (pool, _) = train_pool(&cfg, &data).unwrap();
        assert_eq!(pool[0], out.models[0]);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let data = tiny();
        let cfg = small_cfg(2);
        let a = train_sequential(&cfg, &data).unwrap();
        let b = train_sequential(&cfg, &data).unwrap();
        assert_eq!(a.models, b.models);
        assert_eq!(a.selector, b.selector);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn earlier_models_are_frozen_across_stages() {
        let data = tiny();
        let mut sums: Vec<Vec<u64>> = Vec::new();
        train_sequential_with(&small_cfg(3), &data, |r| {
            sums.push(r.models.iter().map(param_checksum).collect());
            Ok(())
        })
        .unwrap();
        assert_eq!(sums.len(), 3);
        assert_eq!(sums[1][0], sums[0][0]);
        assert_eq!(sums[2][..2], sums[1][..]);
    }

    #[test]
    fn curve_has_one_record_per_epoch() {
        let out = train_sequential(&small_cfg(2), &tiny()).unwrap();
        assert_eq!(out.curve.records.len(), 6);
        assert!(out.curve.all_finite());
        let tsv = out.curve.to_tsv();
        assert_eq!(tsv.lines().count(), 7);
        assert!(tsv.lines().nth(1).unwrap().contains("\t-\t"));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            base_optim: SgdConfig {
                lr: 1e30,
                weight_decay: 0.5,
                ..SgdConfig::reference(3)
            },
            ..small_cfg(1)
        };
        match train_sequential(&cfg, &tiny()) {
            Err(Error::Divergence { stage, .. }) => assert_eq!(stage, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
