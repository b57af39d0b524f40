//! Datasets, loaders, and checkpoint persistence.

mod checkpoint;
mod csv_io;
mod idx;
mod tiered;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointInfo, FORMAT_VERSION};
pub use csv_io::{load_csv, write_csv};
pub use idx::{load_idx, load_idx_pair, parse_idx, IdxArray};
pub use tiered::{gen_tiered, TieredSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Labelled feature matrix with one split tag per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
    splits: Vec<Split>,
    tiers: Option<Vec<usize>>,
    provenance: String,
}

/// Owned rows of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub tiers: Option<Vec<usize>>,
    pub dim: usize,
    pub num_classes: usize,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Gathers rows `idx` into a contiguous batch.
    pub fn batch(&self, idx: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.row(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    /// Keeps only rows whose tier is in `keep`.
    pub fn filter_tiers(&self, keep: &[usize]) -> Samples {
        let Some(tiers) = &self.tiers else {
            return self.clone();
        };
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep.contains(&tiers[i])).collect();
        let (features, labels) = self.batch(&idx);
        Samples {
            features,
            labels,
            tiers: Some(idx.iter().map(|&i| tiers[i]).collect()),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
        splits: Vec<Split>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let ds = Self {
            features,
            dim,
            labels,
            num_classes,
            splits,
            tiers: None,
            provenance: provenance.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_tiers(mut self, tiers: Vec<usize>) -> Result<Self> {
        if tiers.len() != self.labels.len() {
            return Err(Error::invalid("one tier tag per sample required"));
        }
        self.tiers = Some(tiers);
        Ok(self)
    }

    /// Shape and label checks. Each sample carries exactly one split tag, so
    /// splits are disjoint by construction.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.labels.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        if self.features.len() != self.labels.len() * self.dim {
            return Err(Error::invalid(format!(
                "{} feature values do not fill {} rows of width {}",
                self.features.len(),
                self.labels.len(),
                self.dim
            )));
        }
        if self.splits.len() != self.labels.len() {
            return Err(Error::invalid("one split tag per sample required"));
        }
        if let Some(bad) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{}", self.num_classes)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn tiers(&self) -> Option<&[usize]> {
        self.tiers.as_deref()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn split(&self, split: Split) -> Samples {
        let idx = self.indices(split);
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in &idx {
            features.extend_from_slice(&self.features[i * self.dim..(i + 1) * self.dim]);
        }
        Samples {
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            tiers: self.tiers.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect()),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// Re-tags samples with a shuffled train/val/test partition.
    pub fn assign_random_splits(&mut self, val_frac: f64, test_frac: f64, rng: &mut Rng) -> Result<()> {
        if !(0.0..1.0).contains(&val_frac) || !(0.0..1.0).contains(&test_frac) || val_frac + test_frac >= 1.0 {
            return Err(Error::invalid(format!("bad split fractions val={val_frac} test={test_frac}")));
        }
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let n_val = (n as f64 * val_frac).round() as usize;
        let n_test = (n as f64 * test_frac).round() as usize;
        for (rank, &i) in order.iter().enumerate() {
            self.splits[i] = if rank < n_test {
                Split::Test
            } else if rank < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
        }
        Ok(())
    }
}

/// Per-column min-max scaling into `[0, 1]`; constant columns become 0.
pub(crate) fn scale_columns(features: &mut [f64], dim: usize) {
    for c in 0..dim {
        let col = features.iter().skip(c).step_by(dim);
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        let span = hi - lo;
        for v in features.iter_mut().skip(c).step_by(dim) {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
}
