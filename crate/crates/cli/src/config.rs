//! Flat `key = value` run configuration with `#` comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use cascade_core::datahub::{gen_tiered, load_csv, load_idx_pair, Dataset, Split, TieredSpec};
use cascade_core::rng::substream;
use cascade_core::training::{scaled_milestones, HaltRelaxation, TrainConfig};

const KEYS: &[&str] = &[
    "seed",
    "stages",
    "epochs",
    "batch_size",
    "hidden",
    "selector_hidden",
    "base.lr",
    "base.momentum",
    "base.nesterov",
    "base.weight_decay",
    "base.gamma",
    "selector.lr",
    "selector.weight_decay",
    "selector.decay",
    "weights.ens",
    "weights.cost",
    "weights.rank",
    "lambda_dis",
    "relaxation",
    "temperature.start",
    "temperature.end",
    "data",
    "data.path",
    "data.labels",
    "data.header",
    "data.val_frac",
    "data.test_frac",
    "data.train",
    "data.val",
    "data.test",
    "data.dim",
    "data.classes",
    "data.tiers",
    "utility.tau_c",
    "eval.split",
];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Tiered(TieredSpec),
    Csv {
        path: PathBuf,
        header: bool,
        val_frac: f64,
        test_frac: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        val_frac: f64,
        test_frac: f64,
    },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Config file contents exactly as read.
    pub text: String,
    pub data: DataSource,
    pub train: TrainConfig,
    pub tau_c: f64,
    pub eval_split: Split,
    pub seed: u64,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub stages: Option<usize>,
}

impl Overrides {
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if let Some(s) = self.seed {
            out.push(("seed".into(), s.to_string()));
        }
        if let Some(s) = self.stages {
            out.push(("stages".into(), s.to_string()));
        }
        out
    }
}

fn parse_pairs(text: &str, errors: &mut Vec<String>) -> BTreeMap<String, String> {
    let mut pairs = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(format!("line {}: expected `key = value`, got `{line}`", i + 1));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            errors.push(format!("line {}: unknown key `{key}`", i + 1));
        } else if pairs.insert(key.to_string(), value.to_string()).is_some() {
            errors.push(format!("line {}: duplicate key `{key}`", i + 1));
        }
    }
    pairs
}

/// Typed lookups that record failures instead of stopping at the first one.
struct Reader<'a> {
    pairs: &'a BTreeMap<String, String>,
    errors: &'a mut Vec<String>,
}

impl Reader<'_> {
    fn get<T: FromStr>(&mut self, key: &str, default: T) -> T {
        match self.pairs.get(key) {
            None => default,
            Some(v) => v.parse().unwrap_or_else(|_| {
                self.errors.push(format!("`{key}`: cannot parse `{v}`"));
                default
            }),
        }
    }

    fn list(&mut self, key: &str, default: Vec<usize>) -> Vec<usize> {
        match self.pairs.get(key) {
            None => default,
            Some(v) => v
                .split(',')
                .map(|w| w.trim().parse())
                .collect::<Result<_, _>>()
                .unwrap_or_else(|_| {
                    self.errors
                        .push(format!("`{key}`: expected comma-separated widths, got `{v}`"));
                    default
                }),
        }
    }

    fn text(&self, key: &str) -> Option<String> {
        self.pairs.get(key).cloned()
    }
}

impl RunConfig {
    pub fn from_file(path: &Path, overrides: &Overrides) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, overrides)
    }

    /// Parses and validates; every problem is reported in one error.
    pub fn parse(text: &str, overrides: &Overrides) -> anyhow::Result<Self> {
        let mut errors = Vec::new();
        let pairs = parse_pairs(text, &mut errors);
        let mut r = Reader {
            pairs: &pairs,
            errors: &mut errors,
        };

        let seed = overrides.seed.unwrap_or_else(|| r.get("seed", 0));
        let stages = overrides.stages.unwrap_or_else(|| r.get("stages", 3));
        let epochs = r.get("epochs", 40);
        let mut train = TrainConfig {
            seed,
            ..TrainConfig::new(stages, epochs)
        };
        train.batch_size = r.get("batch_size", train.batch_size);
        train.hidden = r.list("hidden", train.hidden.clone());
        train.selector_hidden = r.get("selector_hidden", train.selector_hidden);
        let base = &mut train.base_optim;
        base.lr = r.get("base.lr", base.lr);
        base.momentum = r.get("base.momentum", base.momentum);
        base.nesterov = r.get("base.nesterov", base.nesterov);
        base.weight_decay = r.get("base.weight_decay", base.weight_decay);
        base.gamma = r.get("base.gamma", base.gamma);
        let sel = &mut train.selector_optim;
        sel.lr = r.get("selector.lr", sel.lr);
        sel.weight_decay = r.get("selector.weight_decay", sel.weight_decay);
        sel.decay = r.get("selector.decay", sel.decay);
        train.weights.ens = r.get("weights.ens", train.weights.ens);
        train.weights.cost = r.get("weights.cost", train.weights.cost);
        train.weights.rank = r.get("weights.rank", train.weights.rank);
        train.lambda_dis = r.get("lambda_dis", train.lambda_dis);
        train.relaxation = match r.text("relaxation").as_deref() {
            None | Some("soft") => HaltRelaxation::Soft,
            Some("gumbel") => HaltRelaxation::Gumbel,
            Some(other) => {
                r.errors.push(format!("`relaxation`: expected soft or gumbel, got `{other}`"));
                HaltRelaxation::Soft
            }
        };
        train.temperature.start = r.get("temperature.start", train.temperature.start);
        // an unset end keeps the temperature constant
        train.temperature.end = r.get("temperature.end", train.temperature.start);
        if epochs > 0 {
            train.base_optim.milestones = scaled_milestones(epochs);
            train.selector_optim.milestones = scaled_milestones(epochs);
        }

        let val_frac = r.get("data.val_frac", 0.1);
        let test_frac = r.get("data.test_frac", 0.2);
        let data = match r.text("data").as_deref() {
            None | Some("tiered") => {
                let d = TieredSpec::default();
                DataSource::Tiered(TieredSpec {
                    train: r.get("data.train", d.train),
                    val: r.get("data.val", d.val),
                    test: r.get("data.test", d.test),
                    tiers: r.get("data.tiers", d.tiers),
                    classes: r.get("data.classes", d.classes),
                    dim: r.get("data.dim", d.dim),
                    seed,
                })
            }
            Some(kind @ ("csv" | "idx")) => {
                let path = r.text("data.path").map(PathBuf::from);
                if path.is_none() {
                    r.errors.push(format!("`data = {kind}` needs `data.path`"));
                }
                let path = path.unwrap_or_default();
                if kind == "csv" {
                    DataSource::Csv {
                        path,
                        header: r.get("data.header", false),
                        val_frac,
                        test_frac,
                    }
                } else {
                    let labels = r.text("data.labels").map(PathBuf::from);
                    if labels.is_none() {
                        r.errors.push("`data = idx` needs `data.labels`".into());
                    }
                    DataSource::Idx {
                        images: path,
                        labels: labels.unwrap_or_default(),
                        val_frac,
                        test_frac,
                    }
                }
            }
            Some(other) => {
                r.errors.push(format!("`data`: expected tiered, csv or idx, got `{other}`"));
                DataSource::Tiered(TieredSpec::default())
            }
        };
        let tau_c = r.get("utility.tau_c", cascade_core::evalkit::TAU_COST);
        let eval_split = match r.text("eval.split").as_deref() {
            None | Some("test") => Split::Test,
            Some("val") => Split::Val,
            Some(other) => {
                r.errors.push(format!("`eval.split`: expected val or test, got `{other}`"));
                Split::Test
            }
        };

        errors.extend(train.problems());
        if !(tau_c > 0.0 && tau_c.is_finite()) {
            errors.push(format!("`utility.tau_c` must be positive, got {tau_c}"));
        }
        if !errors.is_empty() {
            bail!("invalid configuration:\n  {}", errors.join("\n  "));
        }
        Ok(Self {
            text: text.to_string(),
            data,
            train,
            tau_c,
            eval_split,
            seed,
        })
    }

    /// Files the dataset is read from (empty for generated data).
    pub fn data_inputs(&self) -> Vec<PathBuf> {
        match &self.data {
            DataSource::Tiered(_) => Vec::new(),
            DataSource::Csv { path, .. } => vec![path.clone()],
            DataSource::Idx { images, labels, .. } => vec![images.clone(), labels.clone()],
        }
    }

    /// Fails on the first dataset file that does not exist.
    pub fn check_inputs(&self) -> anyhow::Result<()> {
        for path in self.data_inputs() {
            if !path.is_file() {
                bail!("dataset file not found: {}", path.display());
            }
        }
        Ok(())
    }

    pub fn load_data(&self) -> anyhow::Result<Dataset> {
        self.check_inputs()?;
        let split = |mut ds: Dataset, val: f64, test: f64| -> anyhow::Result<Dataset> {
            ds.assign_random_splits(val, test, &mut substream(self.seed, "data.split"))?;
            Ok(ds)
        };
        Ok(match &self.data {
            DataSource::Tiered(spec) => gen_tiered(spec)?,
            DataSource::Csv {
                path,
                header,
                val_frac,
                test_frac,
            } => split(load_csv(path, *header)?, *val_frac, *test_frac)?,
            DataSource::Idx {
                images,
                labels,
                val_frac,
                test_frac,
            } => split(load_idx_pair(images, labels)?, *val_frac, *test_frac)?,
        })
    }

    /// Hyperparameters recorded in checkpoint manifests.
    pub fn hyper(&self) -> BTreeMap<String, String> {
        let t = &self.train;
        let mut h = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            h.insert(k.to_string(), v);
        };
        put("epochs", t.epochs.to_string());
        put("batch_size", t.batch_size.to_string());
        put("base_lr", t.base_optim.lr.to_string());
        put("selector_lr", t.selector_optim.lr.to_string());
        put("weights", format!("{},{},{}", t.weights.ens, t.weights.cost, t.weights.rank));
        put("lambda_dis", t.lambda_dis.to_string());
        put("relaxation", format!("{:?}", t.relaxation).to_lowercase());
        h
    }
}
