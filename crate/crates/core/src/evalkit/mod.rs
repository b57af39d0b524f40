//! Accuracy, cost and utility of cascades, plus per-sample traces and the
//! minimum-ensemble-size analysis.

mod pareto;
mod utility;

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datahub::Samples;
use crate::error::{Error, Result};
use crate::halting::{infer, HaltingTrace, InferOptions};
use crate::nets::{base_forward, BaseModel, Selector};
use crate::rng::substream;

pub use pareto::{dominates, mark_dominated, pareto_sweep, ParetoPoint};
pub use utility::{calibrate_tau, raw_utility, reported_utility, UtilityConfig, TAU_COST};

/// Final prediction for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub probs: Vec<f64>,
    pub steps_used: usize,
    pub halting: Option<HaltingTrace>,
}

/// A frozen inference method.
pub trait Predictor: Sync {
    /// Largest possible number of executed models.
    fn max_steps(&self) -> usize;
    fn predict(&self, x: &[f64]) -> Result<Decision>;
}

/// Models plus trained selector, evaluated lazily with thresholded halting.
pub struct LearnedCascade<'a> {
    pub models: &'a [BaseModel],
    pub selector: &'a Selector,
}

impl Predictor for LearnedCascade<'_> {
    fn max_steps(&self) -> usize {
        self.models.len()
    }

    fn predict(&self, x: &[f64]) -> Result<Decision> {
        // eval mode never draws from the stream
        let mut rng = substream(0, "eval");
        let (pred, trace) = infer(self.models, self.selector, x, InferOptions::default(), &mut rng)?;
        Ok(Decision {
            probs: pred.probs,
            steps_used: pred.steps_used,
            halting: Some(trace),
        })
    }
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    pub steps_used: usize,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halting: Option<HaltingTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: String,
    /// Percent.
    pub top1: f64,
    pub avg_cost: f64,
    pub max_steps: usize,
    pub samples: usize,
    pub raw_utility: Option<f64>,
    pub reported_utility: Option<f64>,
}

impl EvalRecord {
    pub fn with_utility(mut self, cfg: &UtilityConfig) -> Result<Self> {
        let raw = raw_utility(self.top1, self.avg_cost, cfg)?;
        self.raw_utility = Some(raw);
        self.reported_utility = Some(reported_utility(raw, cfg));
        Ok(self)
    }
}

pub struct Evaluation {
    pub record: EvalRecord,
    pub traces: Vec<SampleTrace>,
}

/// Runs `method` over every test sample in parallel.
pub fn evaluate(name: &str, method: &dyn Predictor, test: &Samples, utility: Option<&UtilityConfig>) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let traces = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let d = method.predict(test.row(i))?;
            Ok(SampleTrace {
                index: i,
                label: test.labels[i],
                predicted: argmax(&d.probs),
                steps_used: d.steps_used,
                probs: d.probs,
                halting: d.halting,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = traces.len() as f64;
    let correct = traces.iter().filter(|t| t.predicted == t.label).count() as f64;
    let record = EvalRecord {
        method: name.to_string(),
        top1: 100.0 * correct / n,
        avg_cost: traces.iter().map(|t| t.steps_used as f64).sum::<f64>() / n,
        max_steps: method.max_steps(),
        samples: traces.len(),
        raw_utility: None,
        reported_utility: None,
    };
    let record = match utility {
        Some(cfg) => record.with_utility(cfg)?,
        None => record,
    };
    Ok(Evaluation { record, traces })
}

/// Top-1 recomputed from stored probabilities and labels.
pub fn replay_top1(traces: &[SampleTrace]) -> f64 {
    let correct = traces.iter().filter(|t| argmax(&t.probs) == t.label).count();
    100.0 * correct as f64 / traces.len().max(1) as f64
}

/// One JSON object per line.
pub fn write_traces(path: &Path, traces: &[SampleTrace]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for t in traces {
        serde_json::to_writer(&mut w, t).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<SampleTrace>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Four decimals, or scientific notation once the magnitude reaches 1e6; `-` when absent.
pub fn format_utility(v: Option<f64>) -> String {
    match v {
        None => "-".to_string(),
        Some(v) if v.is_finite() && v.abs() >= 1e6 => format!("{v:.6e}"),
        Some(v) => format!("{v:.4}"),
    }
}

/// Tab-separated results table.
pub fn records_tsv(records: &[EvalRecord]) -> String {
    let opt = format_utility;
    let mut s = String::from("method\ttop1\tcost\traw_utility\tutility\tsamples\n");
    for r in records {
        let _ = writeln!(
            s,
            "{}\t{:.2}\t{:.2}\t{}\t{}\t{}",
            r.method,
            r.top1,
            r.avg_cost,
            opt(r.raw_utility),
            opt(r.reported_utility),
            r.samples
        );
    }
    s
}

/// Main-head probabilities of every pool member on every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolPredictions {
    /// `[sample][member]`.
    pub probs: Vec<Vec<Vec<f64>>>,
    pub labels: Vec<usize>,
}

impl PoolPredictions {
    pub fn compute(pool: &[BaseModel], data: &Samples) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::invalid("pool is empty"));
        }
        let probs = (0..data.len())
            .into_par_iter()
            .map(|i| {
                pool.iter()
                    .map(|m| base_forward(m, data.row(i)).map(|o| o.main_probs))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            probs,
            labels: data.labels.clone(),
        })
    }

    pub fn members(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Running averages of the first `1..=k` predictions.
pub fn prefix_averages(preds: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut sum = vec![0.0; preds.first().map_or(0, Vec::len)];
    preds
        .iter()
        .enumerate()
        .map(|(k, p)| {
            sum.iter_mut().zip(p).for_each(|(s, v)| *s += v);
            sum.iter().map(|s| s / (k + 1) as f64).collect()
        })
        .collect()
}

/// Smallest prefix size whose average predicts correctly, per sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeHistogram {
    /// `counts[k - 1]` samples first become correct with `k` models.
    pub counts: Vec<usize>,
    /// Samples no prefix classifies correctly.
    pub never: usize,
}

impl SizeHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.never
    }

    pub fn solvable(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Share of solvable samples that need exactly `k` models.
    pub fn solvable_fraction(&self, k: usize) -> f64 {
        self.counts[k - 1] as f64 / self.solvable().max(1) as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("size\tsamples\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{}\t{c}", k + 1);
        }
        let _ = writeln!(s, "never\t{}", self.never);
        s
    }
}

pub fn min_ensemble_size_histogram(preds: &PoolPredictions) -> SizeHistogram {
    let mut h = SizeHistogram {
        counts: vec![0; preds.members()],
        never: 0,
    };
    for (p, &y) in preds.probs.iter().zip(&preds.labels) {
        match prefix_averages(p).iter().position(|avg| argmax(avg) == y) {
            Some(k) => h.counts[k] += 1,
            None => h.never += 1,
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{BaseConfig, Linear, SelectorConfig};

    struct Oracle<'a>(&'a [usize]);

    #[test]
    fn utilities_switch_to_scientific_notation_when_large() {
        assert_eq!(format_utility(None), "-");
        assert_eq!(format_utility(Some(1.0)), "1.0000");
        assert_eq!(format_utility(Some(1.5e17)), "1.500000e17");
        assert_eq!(format_utility(Some(f64::INFINITY)), "inf");
    }

    impl Predictor for Oracle<'_> {
        fn max_steps(&self) -> usize {
            1
        }
        fn predict(&self, x: &[f64]) -> Result<Decision> {
            let y = self.0[x[0] as usize];
            let mut probs = vec![0.0; 3];
            probs[y] = 1.0;
            Ok(Decision {
                probs,
                steps_used: 1,
                halting: None,
            })
        }
    }

    fn indexed_samples(labels: Vec<usize>) -> Samples {
        Samples {
            features: (0..labels.len()).map(|i| i as f64).collect(),
            tiers: None,
            dim: 1,
            num_classes: 3,
            labels,
        }
    }

    #[test]
    fn perfect_oracle_scores_100() {
        let labels = vec![0, 2, 1, 1, 0];
        let test = indexed_samples(labels.clone());
        let ev = evaluate("oracle", &Oracle(&labels), &test, None).unwrap();
        assert_eq!(ev.record.top1, 100.0);
        assert_eq!(ev.record.avg_cost, 1.0);
        assert!(evaluate("oracle", &Oracle(&labels), &indexed_samples(vec![]), None).is_err());
    }

    #[test]
    fn never_halting_selector_costs_t() {
        let cfg = BaseConfig {
            input_dim: 2,
            hidden: vec![3],
            num_classes: 2,
        };
        let mut rng = substream(1, "t");
        let models: Vec<_> = (0..3).map(|_| BaseModel::new(cfg.clone(), &mut rng).unwrap()).collect();
        let mut sel = Selector::zeros(SelectorConfig::for_classes(2, 4)).unwrap();
        *sel.halt_head_mut() = Linear::zeros(4, 1);
        sel.halt_head_mut().bias.data_mut()[0] = -50.0;
        let test = Samples {
            features: vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6],
            labels: vec![0, 1, 0],
            tiers: None,
            dim: 2,
            num_classes: 2,
        };
        let cascade = LearnedCascade {
            models: &models,
            selector: &sel,
        };
        let ev = evaluate("learned", &cascade, &test, None).unwrap();
        assert_eq!(ev.record.avg_cost, 3.0);
        assert_eq!(ev.record.max_steps, 3);
    }

    #[test]
    fn traces_round_trip_and_replay() {
        let traces = vec![
            SampleTrace {
                index: 0,
                label: 1,
                predicted: 1,
                steps_used: 2,
                probs: vec![0.2, 0.8],
                halting: Some(HaltingTrace {
                    h: vec![0.0, 1.0],
                    s: vec![1.0, 1.0],
                    p: vec![0.0, 1.0],
                    z: 2,
                }),
            },
            SampleTrace {
                index: 1,
                label: 0,
                predicted: 1,
                steps_used: 1,
                probs: vec![0.4, 0.6],
                halting: None,
            },
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_traces(f.path(), &traces).unwrap();
        let back = read_traces(f.path()).unwrap();
        assert_eq!(back, traces);
        assert_eq!(replay_top1(&back), 50.0);
    }

    #[test]
    fn histogram_buckets() {
        let preds = PoolPredictions {
            probs: vec![
                vec![vec![0.9, 0.1], vec![0.9, 0.1]],
                vec![vec![0.4, 0.6], vec![0.9, 0.1]],
                vec![vec![0.1, 0.9], vec![0.2, 0.8]],
            ],
            labels: vec![0, 0, 0],
        };
        let h = min_ensemble_size_histogram(&preds);
        assert_eq!(h.counts, vec![1, 1]);
        assert_eq!(h.never, 1);
        assert_eq!(h.total(), 3);
        assert_eq!(h.solvable_fraction(1), 0.5);
    }

    #[test]
    fn argmax_prefers_first_maximum() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
    }

    #[test]
    fn prefix_averages_accumulate() {
        let avg = prefix_averages(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        assert_eq!(avg, vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.5, 0.5]]);
    }
}
