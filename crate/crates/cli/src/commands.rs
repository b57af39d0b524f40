//! Subcommand bodies. Each writes its tables, the echoed config and a manifest into `--out`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context as _};
use cascade_core::baselines::{
    sweep_thresholds, threshold_grid, threshold_grid_search, AverageEnsemble, GridSearch, SingleModel, ThresholdPolicy,
};
use cascade_core::datahub::{load_checkpoint, save_checkpoint, CheckpointInfo, Dataset, Samples, Split};
use cascade_core::evalkit::{
    evaluate, format_utility, mark_dominated, pareto_sweep, raw_utility, records_tsv, reported_utility, write_traces, EvalRecord,
    LearnedCascade, ParetoPoint, PoolPredictions, Predictor, UtilityConfig,
};
use cascade_core::losses::LossWeights;
use cascade_core::nets::{BaseModel, Parameterized, Selector};
use cascade_core::training::{train_pool, train_sequential, train_sequential_with, TrainConfig};

use crate::config::{Overrides, RunConfig};
use crate::manifest::Manifest;
use crate::report;
use crate::Method;

pub struct Context {
    pub cfg: RunConfig,
    pub config_path: Option<PathBuf>,
    pub overrides: Overrides,
    pub out: PathBuf,
    pub command: String,
}

impl Context {
    pub fn new(command: &str, config_path: Option<PathBuf>, overrides: Overrides, out: PathBuf) -> anyhow::Result<Self> {
        let cfg = match &config_path {
            Some(path) => RunConfig::from_file(path, &overrides)?,
            None => RunConfig::parse("", &overrides)?,
        };
        Ok(Self {
            cfg,
            config_path,
            overrides,
            out,
            command: command.to_string(),
        })
    }

    /// Creates the output directory, echoes the config and records the inputs.
    fn start(&self) -> anyhow::Result<Manifest> {
        self.cfg.check_inputs()?;
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        self.write("config.cfg", &self.cfg.text)?;
        let mut m = Manifest::new(&self.command);
        m.set("seed", self.cfg.seed);
        for (k, v) in self.overrides.entries() {
            m.set(&format!("override.{k}"), v);
        }
        if let Some(path) = &self.config_path {
            m.input("config", path)?;
        }
        for (i, path) in self.cfg.data_inputs().iter().enumerate() {
            m.input(&format!("data.{i}"), path)?;
        }
        Ok(m)
    }

    fn write(&self, name: &str, contents: &str) -> anyhow::Result<()> {
        let path = self.out.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    fn info(&self, stage: usize) -> CheckpointInfo {
        CheckpointInfo {
            seed: self.cfg.seed,
            stage,
            hyper: self.cfg.hyper(),
        }
    }

    fn data(&self) -> anyhow::Result<Dataset> {
        self.cfg.load_data()
    }
}

fn nonempty(ds: &Dataset, split: Split) -> anyhow::Result<Samples> {
    let s = ds.split(split);
    ensure!(!s.is_empty(), "the {} split is empty", split.name());
    Ok(s)
}

/// The parameters as they will be after a checkpoint round trip.
fn quantized(models: &[BaseModel], selector: Option<&Selector>) -> (Vec<BaseModel>, Option<Selector>) {
    let mut models = models.to_vec();
    models.iter_mut().for_each(Parameterized::quantize_f32);
    let selector = selector.cloned().map(|mut s| {
        s.quantize_f32();
        s
    });
    (models, selector)
}

/// Calibrates utility on `data` with `anchors[0]` against the average of all anchors.
fn calibrate(anchors: &[BaseModel], data: &Samples, tau_c: f64) -> anyhow::Result<Option<UtilityConfig>> {
    if anchors.len() < 2 {
        eprintln!("note: utility needs at least two anchor models; utility columns left empty");
        return Ok(None);
    }
    let single = evaluate("single", &SingleModel(&anchors[0]), data, None)?.record.top1;
    let full = evaluate("average", &AverageEnsemble(anchors), data, None)?.record.top1;
    match UtilityConfig::calibrated(single, full, anchors.len(), tau_c) {
        Ok(u) => Ok(Some(u)),
        Err(e) => {
            eprintln!("note: {e}; utility columns left empty");
            Ok(None)
        }
    }
}

/// `fixed` when given, otherwise the validation grid-search optimum.
fn woc_threshold(pool: &[BaseModel], val: &Samples, tau_c: f64, fixed: Option<f64>) -> anyhow::Result<(f64, Option<GridSearch>)> {
    if let Some(t) = fixed {
        return Ok((t, None));
    }
    let Some(utility) = calibrate(pool, val, tau_c)? else {
        eprintln!("note: woc threshold defaults to {DEFAULT_THRESHOLD}; pass --threshold to choose one");
        return Ok((DEFAULT_THRESHOLD, None));
    };
    let search = threshold_grid_search(pool, val, &utility)?;
    Ok((search.best_threshold(), Some(search)))
}

fn grid_tsv(search: &GridSearch) -> String {
    let mut s = String::from("threshold\ttop1\tcost\traw_utility\tbest\n");
    for (i, p) in search.points.iter().enumerate() {
        s.push_str(&format!(
            "{:.2}\t{:.2}\t{:.4}\t{:.6}\t{}\n",
            p.threshold,
            p.top1,
            p.avg_cost,
            p.raw_utility,
            u8::from(i == search.best)
        ));
    }
    s
}

/// Evaluates `method`, writes its traces, and returns its record.
fn run_method(
    ctx: &Context,
    name: &str,
    method: &dyn Predictor,
    data: &Samples,
    utility: Option<&UtilityConfig>,
) -> anyhow::Result<EvalRecord> {
    let e = evaluate(name, method, data, utility)?;
    write_traces(&ctx.out.join(format!("traces-{name}.jsonl")), &e.traces)?;
    Ok(e.record)
}

fn finish(ctx: &Context, table: &str, records: &[EvalRecord], manifest: Manifest) -> anyhow::Result<()> {
    let tsv = records_tsv(records);
    ctx.write(table, &tsv)?;
    print!("{tsv}");
    manifest.write(&ctx.out)
}

pub fn train(ctx: &Context) -> anyhow::Result<()> {
    let manifest = ctx.start()?;
    let ds = ctx.data()?;
    let train = nonempty(&ds, Split::Train)?;
    let stages_dir = ctx.out.join("stages");
    let outcome = train_sequential_with(&ctx.cfg.train, &train, |r| {
        save_checkpoint(
            &stages_dir.join(format!("stage-{}", r.stage)),
            r.models,
            Some(r.selector),
            &ctx.info(r.stage),
        )?;
        eprintln!("stage {}/{} trained", r.stage, ctx.cfg.train.stages);
        Ok(())
    })?;
    let stages = outcome.models.len();
    save_checkpoint(
        &ctx.out.join("checkpoint"),
        &outcome.models,
        Some(&outcome.selector),
        &ctx.info(stages),
    )?;
    ctx.write("curve.tsv", &outcome.curve.to_tsv())?;

    // scored with the checkpointed precision so `eval` reproduces these numbers
    let (models, selector) = quantized(&outcome.models, Some(&outcome.selector));
    let selector = selector.expect("selector present");
    let val = ds.split(Split::Val);
    let mut records = Vec::new();
    if !val.is_empty() {
        let e = evaluate(
            "learned",
            &LearnedCascade {
                models: &models,
                selector: &selector,
            },
            &val,
            None,
        )?;
        records.push(e.record);
    }
    finish(ctx, "train_eval.tsv", &records, manifest)
}

pub fn eval(
    ctx: &Context,
    checkpoint: &Path,
    method: Method,
    threshold: Option<f64>,
    anchors: Option<&Path>,
) -> anyhow::Result<()> {
    let mut manifest = ctx.start()?;
    let ck = load_checkpoint(checkpoint)?;
    let mut files = std::fs::read_dir(checkpoint)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    files.sort();
    for path in files {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        manifest.input(&format!("checkpoint.{name}"), &path)?;
    }
    let ds = ctx.data()?;
    let input_dim = ck.models[0].config().input_dim;
    ensure!(
        input_dim == ds.dim() && ck.models[0].num_classes() == ds.num_classes(),
        "checkpoint expects {input_dim} features and {} classes, dataset has {} and {}",
        ck.models[0].num_classes(),
        ds.dim(),
        ds.num_classes()
    );
    let data = nonempty(&ds, ctx.cfg.eval_split)?;
    let anchor_models = match anchors {
        Some(dir) => {
            manifest.set("anchors", dir.display());
            load_checkpoint(dir)?.models
        }
        None => ck.models.clone(),
    };
    let tau_c = ctx.cfg.tau_c;
    let utility = calibrate(&anchor_models, &data, tau_c)?;
    let u = utility.as_ref();

    let wanted = |m: Method| method == m || method == Method::All;
    let mut records = Vec::new();
    if wanted(Method::Learned) {
        match &ck.selector {
            Some(selector) => records.push(run_method(
                ctx,
                "learned",
                &LearnedCascade {
                    models: &ck.models,
                    selector,
                },
                &data,
                u,
            )?),
            None if method == Method::Learned => bail!("checkpoint {} has no selector", checkpoint.display()),
            None => {}
        }
    }
    if wanted(Method::Single) {
        records.push(run_method(ctx, "single", &SingleModel(&ck.models[0]), &data, u)?);
    }
    if wanted(Method::Average) {
        records.push(run_method(ctx, "average", &AverageEnsemble(&ck.models), &data, u)?);
    }
    if wanted(Method::Woc) {
        let val = nonempty(&ds, Split::Val)?;
        let (t, search) = woc_threshold(&ck.models, &val, tau_c, threshold)?;
        manifest.set("woc.threshold", t);
        if let Some(search) = search {
            ctx.write("woc_grid.tsv", &grid_tsv(&search))?;
        }
        records.push(run_method(ctx, "woc", &ThresholdPolicy::new(t, &ck.models)?, &data, u)?);
    }
    finish(ctx, "eval.tsv", &records, manifest)
}

pub fn baseline(ctx: &Context, method: Method, threshold: Option<f64>) -> anyhow::Result<()> {
    ensure!(
        method != Method::Learned,
        "baseline runs single, average or woc; use `train` for the learned cascade"
    );
    let mut manifest = ctx.start()?;
    let ds = ctx.data()?;
    let train = nonempty(&ds, Split::Train)?;
    let (pool, curve) = train_pool(&ctx.cfg.train, &train)?;
    save_checkpoint(&ctx.out.join("pool"), &pool, None, &ctx.info(pool.len()))?;
    ctx.write("curve.tsv", &curve.to_tsv())?;
    let (pool, _) = quantized(&pool, None);

    let data = nonempty(&ds, ctx.cfg.eval_split)?;
    let tau_c = ctx.cfg.tau_c;
    let utility = calibrate(&pool, &data, tau_c)?;
    let u = utility.as_ref();
    let wanted = |m: Method| method == m || method == Method::All;
    let mut records = Vec::new();
    if wanted(Method::Single) {
        records.push(run_method(ctx, "single", &SingleModel(&pool[0]), &data, u)?);
    }
    if wanted(Method::Average) {
        records.push(run_method(ctx, "average", &AverageEnsemble(&pool), &data, u)?);
    }
    if wanted(Method::Woc) {
        let val = nonempty(&ds, Split::Val)?;
        let (t, search) = woc_threshold(&pool, &val, tau_c, threshold)?;
        manifest.set("woc.threshold", t);
        if let Some(search) = search {
            ctx.write("woc_grid.tsv", &grid_tsv(&search))?;
        }
        records.push(run_method(ctx, "woc", &ThresholdPolicy::new(t, &pool)?, &data, u)?);
    }
    finish(ctx, "baseline.tsv", &records, manifest)
}

/// A one-dimensional sweep specification.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    /// Cost-term weights, one full cascade training each.
    Cost(Vec<f64>),
    /// Cascade lengths.
    Stages(Vec<usize>),
    /// Confidence thresholds of the pool cascade.
    Threshold(Vec<f64>),
}

fn parse_list<T: FromStr>(key: &str, values: &str) -> Result<Vec<T>, String> {
    let parsed = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| format!("`{key}` grid: cannot parse `{}`", v.trim()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if parsed.is_empty() {
        return Err(format!("`{key}` grid is empty"));
    }
    Ok(parsed)
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (key, values) = s.split_once('=').map_or((s, None), |(k, v)| (k, Some(v)));
        match (key.trim(), values) {
            ("cost", Some(v)) => parse_list("cost", v).map(Grid::Cost),
            ("stages", Some(v)) => {
                let t: Vec<usize> = parse_list("stages", v)?;
                if t.contains(&0) {
                    return Err("`stages` grid values must be at least 1".into());
                }
                Ok(Grid::Stages(t))
            }
            ("threshold", None) => Ok(Grid::Threshold(threshold_grid())),
            ("threshold", Some(v)) => parse_list("threshold", v).map(Grid::Threshold),
            _ => Err(format!(
                "unknown grid `{s}`; expected cost=a,b,.. or stages=1,2,.. or threshold[=a,b,..]"
            )),
        }
    }
}

fn frontier_tsv(points: &[ParetoPoint], utility: Option<&UtilityConfig>) -> anyhow::Result<String> {
    let mut s = String::from("label\ttop1\tcost\traw_utility\tutility\tdominated\n");
    for p in points {
        let (raw, rep) = match utility {
            Some(u) => {
                let raw = raw_utility(p.top1, p.cost, u)?;
                (format_utility(Some(raw)), format_utility(Some(reported_utility(raw, u))))
            }
            None => ("-".into(), "-".into()),
        };
        s.push_str(&format!(
            "{}\t{:.2}\t{:.4}\t{raw}\t{rep}\t{}\n",
            p.label,
            p.top1,
            p.cost,
            u8::from(p.dominated)
        ));
    }
    Ok(s)
}

pub fn sweep(ctx: &Context, grid: &Grid) -> anyhow::Result<()> {
    let mut manifest = ctx.start()?;
    let ds = ctx.data()?;
    let train = nonempty(&ds, Split::Train)?;
    let data = nonempty(&ds, ctx.cfg.eval_split)?;
    let tau_c = ctx.cfg.tau_c;
    match grid {
        Grid::Cost(weights) => {
            manifest.set("grid", format!("cost={}", join(weights)));
            let (pool, _) = train_pool(&ctx.cfg.train, &train)?;
            let utility = calibrate(&pool, &data, tau_c)?;
            let points = pareto_sweep(weights, |w| {
                let cfg = TrainConfig {
                    weights: LossWeights {
                        cost: *w,
                        ..ctx.cfg.train.weights
                    },
                    ..ctx.cfg.train.clone()
                };
                let o = train_sequential(&cfg, &train)?;
                let (models, selector) = quantized(&o.models, Some(&o.selector));
                let selector = selector.expect("selector present");
                let r = evaluate(
                    "learned",
                    &LearnedCascade {
                        models: &models,
                        selector: &selector,
                    },
                    &data,
                    None,
                )?
                .record;
                Ok(ParetoPoint::new(format!("cost={w}"), r.avg_cost, r.top1))
            })?;
            let tsv = frontier_tsv(&points, utility.as_ref())?;
            ctx.write("frontier.tsv", &tsv)?;
            ctx.write("frontier.svg", &report::frontier_plot(&tsv)?)?;
            print!("{tsv}");
        }
        Grid::Threshold(thresholds) => {
            manifest.set("grid", format!("threshold={}", join(thresholds)));
            let (pool, _) = train_pool(&ctx.cfg.train, &train)?;
            let (pool, _) = quantized(&pool, None);
            let utility = calibrate(&pool, &data, tau_c)?;
            let preds = PoolPredictions::compute(&pool, &data)?;
            let mut points: Vec<ParetoPoint> = sweep_thresholds(&preds, thresholds)
                .into_iter()
                .map(|(t, top1, cost)| ParetoPoint::new(format!("threshold={t}"), cost, top1))
                .collect();
            mark_dominated(&mut points);
            let tsv = frontier_tsv(&points, utility.as_ref())?;
            ctx.write("frontier.tsv", &tsv)?;
            ctx.write("frontier.svg", &report::frontier_plot(&tsv)?)?;
            print!("{tsv}");
        }
        Grid::Stages(lengths) => {
            manifest.set("grid", format!("stages={}", join(lengths)));
            let tsv = stage_sweep(ctx, lengths, &train, &ds, &data)?;
            ctx.write("tsweep.tsv", &tsv)?;
            ctx.write("utility_vs_t.svg", &report::tsweep_plot(&tsv)?)?;
            print!("{tsv}");
        }
    }
    manifest.write(&ctx.out)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// WoC threshold when the validation search is unavailable.
const DEFAULT_THRESHOLD: f64 = 0.5;

/// Anchor size for utility calibration across cascade lengths.
const ANCHOR_MODELS: usize = 3;

/// One row per cascade length and method. Training stage `t` does not depend on
/// later stages, so every length is a prefix of a single longest run.
fn stage_sweep(ctx: &Context, lengths: &[usize], train: &Samples, ds: &Dataset, data: &Samples) -> anyhow::Result<String> {
    let longest = *lengths.iter().max().expect("grid is non-empty");
    let cfg = TrainConfig {
        stages: longest,
        ..ctx.cfg.train.clone()
    };
    let mut snapshots: Vec<(Vec<BaseModel>, Selector)> = Vec::new();
    train_sequential_with(&cfg, train, |r| {
        let (models, selector) = quantized(r.models, Some(r.selector));
        snapshots.push((models, selector.expect("selector present")));
        Ok(())
    })?;
    let (pool, _) = train_pool(&cfg, train)?;
    let (pool, _) = quantized(&pool, None);
    let anchors = &pool[..pool.len().min(ANCHOR_MODELS)];
    let utility = calibrate(anchors, data, ctx.cfg.tau_c)?;
    let val = nonempty(ds, Split::Val)?;
    let val_utility = calibrate(anchors, &val, ctx.cfg.tau_c)?;
    let u = utility.as_ref();

    let opt = format_utility;
    let mut s = String::from("stages\tmethod\ttop1\tcost\traw_utility\tutility\n");
    let mut push = |t: usize, r: &EvalRecord| {
        s.push_str(&format!(
            "{t}\t{}\t{:.2}\t{:.4}\t{}\t{}\n",
            r.method,
            r.top1,
            r.avg_cost,
            opt(r.raw_utility),
            opt(r.reported_utility)
        ));
    };
    for &t in lengths {
        let (models, selector) = &snapshots[t - 1];
        push(t, &evaluate("learned", &LearnedCascade { models, selector }, data, u)?.record);
        let members = &pool[..t];
        push(t, &evaluate("average", &AverageEnsemble(members), data, u)?.record);
        let threshold = match &val_utility {
            Some(vu) => threshold_grid_search(members, &val, vu)?.best_threshold(),
            None => DEFAULT_THRESHOLD,
        };
        push(
            t,
            &evaluate("woc", &ThresholdPolicy::new(threshold, members)?, data, u)?.record,
        );
    }
    Ok(s)
}
