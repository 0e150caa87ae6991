use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Group, UpliftDataset};
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub stratify_by_treatment: bool,
}

fn default_true() -> bool {
    true
}

impl SplitSpec {
    pub fn new(train_fraction: f64, validation_fraction: f64, seed: u64) -> Self {
        Self {
            train_fraction,
            validation_fraction,
            seed,
            stratify_by_treatment: true,
        }
    }

    fn validate(&self) -> Result<()> {
        let t = self.train_fraction;
        let v = self.validation_fraction;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::invalid(format!("train_fraction must be in (0, 1], got {t}")));
        }
        if !(0.0..1.0).contains(&v) {
            return Err(Error::invalid(format!(
                "validation_fraction must be in [0, 1), got {v}"
            )));
        }
        if t + v > 1.0 + 1e-12 {
            return Err(Error::invalid("train_fraction + validation_fraction exceeds 1"));
        }
        Ok(())
    }
}

/// Row-index partition. Each part is sorted ascending so the original row
/// order (and hence score tie-breaking) is preserved inside each part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn train_set(&self, ds: &UpliftDataset) -> Result<UpliftDataset> {
        ds.subset(&self.train)
    }

    /// `None` when the validation part is empty.
    pub fn validation_set(&self, ds: &UpliftDataset) -> Result<Option<UpliftDataset>> {
        if self.validation.is_empty() {
            Ok(None)
        } else {
            ds.subset(&self.validation).map(Some)
        }
    }

    pub fn test_set(&self, ds: &UpliftDataset) -> Result<UpliftDataset> {
        ds.subset(&self.test)
    }
}

fn strata(ds: &UpliftDataset, stratify: bool) -> Vec<(&'static str, Vec<usize>)> {
    if stratify {
        [Group::Treatment, Group::Control]
            .into_iter()
            .map(|g| {
                let flag = g.flag();
                (g.name(), (0..ds.len()).filter(|&i| ds.treatment()[i] == flag).collect())
            })
            .collect()
    } else {
        vec![("all", (0..ds.len()).collect())]
    }
}

/// Random train/validation/test partition, stratified by treatment arm unless
/// disabled. Within each arm the part sizes are the rounded fractions, so they
/// deviate from the requested fractions by at most one row.
pub fn split(ds: &UpliftDataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let mut out = Splits {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (name, mut idx) in strata(ds, spec.stratify_by_treatment) {
        let n = idx.len();
        let n_train = (spec.train_fraction * n as f64).round() as usize;
        let n_val = (spec.validation_fraction * n as f64).round() as usize;
        if n_train == 0 || n_train + n_val >= n || (spec.validation_fraction > 0.0 && n_val == 0) {
            return Err(Error::invalid(format!(
                "split fractions ({}, {}) leave an empty part for stratum {name} of {n} rows",
                spec.train_fraction, spec.validation_fraction
            )));
        }
        idx.shuffle(&mut rng);
        out.train.extend_from_slice(&idx[..n_train]);
        out.validation.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// `k` disjoint folds covering all rows, stratified by treatment arm.
pub fn stratified_folds(ds: &UpliftDataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = seeded(seed);
    let mut folds = vec![Vec::new(); k];
    for (name, mut idx) in strata(ds, true) {
        if idx.len() < k {
            return Err(Error::invalid(format!(
                "stratum {name} has {} rows, fewer than {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            folds[pos % k].push(i);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}
