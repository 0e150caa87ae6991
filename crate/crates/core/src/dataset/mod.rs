//! Randomized-trial data: the dense [`UpliftDataset`], per-arm [`GroupView`]s
//! with optional label reversion, raw CSV ingestion and feature encoding,
//! stratified splitting and a synthetic generator with known treatment effect.

mod encode;
mod raw;
mod split;
mod synthetic;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use encode::{fit_encode, hillstrom_rules, ColumnKind, ColumnRule, EncodingSchema, FittedColumn};
pub use raw::{load_hillstrom, load_raw_trial, RawTable, RawTrial, HILLSTROM_CONTROL_ARM};
pub use split::{split, stratified_folds, SplitSpec, Splits};
pub(crate) use synthetic::sigmoid;
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

use crate::{Error, Result};

/// Treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "T")]
    Treatment,
    #[serde(rename = "C")]
    Control,
}

impl Group {
    pub fn flag(self) -> u8 {
        match self {
            Group::Treatment => 1,
            Group::Control => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Treatment => "T",
            Group::Control => "C",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Immutable table of encoded covariates, binary treatment flags and binary
/// outcomes. Features are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UpliftDataset {
    features: Vec<f64>,
    dim: usize,
    treatment: Vec<u8>,
    outcome: Vec<u8>,
    feature_names: Vec<String>,
}

impl UpliftDataset {
    /// Builds a dataset from a row-major feature buffer.
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        treatment: Vec<u8>,
        outcome: Vec<u8>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = treatment.len();
        if n == 0 {
            return Err(Error::NoData);
        }
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if outcome.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: outcome.len(),
            });
        }
        if features.len() != n * dim {
            return Err(Error::DimensionMismatch {
                expected: n * dim,
                actual: features.len(),
            });
        }
        if feature_names.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: feature_names.len(),
            });
        }
        if let Some(i) = treatment.iter().position(|&t| t > 1) {
            return Err(Error::Parse {
                row: i + 1,
                message: format!("treatment must be 0 or 1, got {}", treatment[i]),
            });
        }
        if let Some(i) = outcome.iter().position(|&y| y > 1) {
            return Err(Error::Parse {
                row: i + 1,
                message: format!("outcome must be 0 or 1, got {}", outcome[i]),
            });
        }
        if let Some(k) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature {} of row {}", k % dim, k / dim + 1)));
        }
        Ok(Self {
            features,
            dim,
            treatment,
            outcome,
            feature_names,
        })
    }

    /// Builds a dataset from per-row feature vectors with default names `f0..`.
    pub fn from_rows(rows: &[Vec<f64>], treatment: Vec<u8>, outcome: Vec<u8>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        let names = default_feature_names(dim);
        Self::new(rows.concat(), dim, treatment, outcome, names)
    }

    pub fn len(&self) -> usize {
        self.treatment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatment.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[u8] {
        &self.outcome
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.treatment[i] == 1
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn group_len(&self, group: Group) -> usize {
        let flag = group.flag();
        self.treatment.iter().filter(|&&t| t == flag).count()
    }

    /// Rows `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut treatment = Vec::with_capacity(indices.len());
        let mut outcome = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("row index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            treatment.push(self.treatment[i]);
            outcome.push(self.outcome[i]);
        }
        Self::new(features, self.dim, treatment, outcome, self.feature_names.clone())
    }

    /// Largest Euclidean row norm.
    pub fn max_row_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Canonical export: columns `f0..f{d-1},treatment,outcome`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for j in 0..self.dim {
            out.push_str(&format!("f{j},"));
        }
        out.push_str("treatment,outcome\n");
        for i in 0..self.len() {
            for v in self.row(i) {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{},{}\n", self.treatment[i], self.outcome[i]));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv_string().as_bytes())
    }

    /// Reads the canonical export. Any header naming works as long as the last
    /// two columns are `treatment` and `outcome`; the remaining headers become
    /// feature names.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let k = headers.len();
        if k < 3 || headers[k - 2] != "treatment" || headers[k - 1] != "outcome" {
            return Err(Error::MissingColumn("treatment,outcome (last two)".into()));
        }
        let dim = k - 2;
        let mut features = Vec::new();
        let mut treatment = Vec::new();
        let mut outcome = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let record = record?;
            let row = r + 1;
            if record.len() != k {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {k} fields, got {}", record.len()),
                });
            }
            for field in record.iter().take(dim) {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    row,
                    message: format!("not a number: `{field}`"),
                })?;
                features.push(v);
            }
            treatment.push(parse_flag(&record[dim], row, "treatment")?);
            outcome.push(parse_flag(&record[dim + 1], row, "outcome")?);
        }
        if treatment.is_empty() {
            return Err(Error::NoData);
        }
        Self::new(features, dim, treatment, outcome, headers[..dim].to_vec())
    }
}

pub(crate) fn parse_flag(field: &str, row: usize, what: &str) -> Result<u8> {
    match field.trim() {
        "0" | "0.0" => Ok(0),
        "1" | "1.0" => Ok(1),
        other => Err(Error::Parse {
            row,
            message: format!("{what} must be 0 or 1, got `{other}`"),
        }),
    }
}

pub(crate) fn default_feature_names(dim: usize) -> Vec<String> {
    (0..dim).map(|j| format!("f{j}")).collect()
}

/// One treatment arm of a dataset, optionally with reverted labels.
#[derive(Debug, Clone)]
pub struct GroupView<'a> {
    parent: &'a UpliftDataset,
    group: Group,
    reverted: bool,
    rows: Vec<usize>,
    n_pos: usize,
    n_neg: usize,
}

/// View over the rows of `group`. With `revert`, effective labels are `1 - y`.
pub fn group_view(ds: &UpliftDataset, group: Group, revert: bool) -> Result<GroupView<'_>> {
    let flag = group.flag();
    let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.treatment[i] == flag).collect();
    if rows.is_empty() {
        return Err(Error::EmptyGroup(group.name()));
    }
    let ones = rows.iter().filter(|&&i| ds.outcome[i] == 1).count();
    let (n_pos, n_neg) = if revert {
        (rows.len() - ones, ones)
    } else {
        (ones, rows.len() - ones)
    };
    Ok(GroupView {
        parent: ds,
        group,
        reverted: revert,
        rows,
        n_pos,
        n_neg,
    })
}

impl<'a> GroupView<'a> {
    pub fn parent(&self) -> &'a UpliftDataset {
        self.parent
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn is_reverted(&self) -> bool {
        self.reverted
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn n_pos(&self) -> usize {
        self.n_pos
    }

    pub fn n_neg(&self) -> usize {
        self.n_neg
    }

    /// Effective label of parent row `i` (which must belong to this view).
    pub fn label(&self, i: usize) -> u8 {
        let y = self.parent.outcome[i];
        if self.reverted {
            1 - y
        } else {
            y
        }
    }

    /// The same rows with labels flipped once more.
    pub fn reverted(&self) -> GroupView<'a> {
        GroupView {
            parent: self.parent,
            group: self.group,
            reverted: !self.reverted,
            rows: self.rows.clone(),
            n_pos: self.n_neg,
            n_neg: self.n_pos,
        }
    }

    /// Parent row indices with effective label 1.
    pub fn positives(&self) -> Vec<usize> {
        self.rows.iter().copied().filter(|&i| self.label(i) == 1).collect()
    }

    /// Parent row indices with effective label 0.
    pub fn negatives(&self) -> Vec<usize> {
        self.rows.iter().copied().filter(|&i| self.label(i) == 0).collect()
    }

    pub fn require_both_classes(&self) -> Result<()> {
        if self.n_pos == 0 || self.n_neg == 0 {
            Err(Error::MissingClass(match (self.group, self.reverted) {
                (Group::Treatment, false) => "T",
                (Group::Treatment, true) => "T (reverted)",
                (Group::Control, false) => "C",
                (Group::Control, true) => "C (reverted)",
            }))
        } else {
            Ok(())
        }
    }
}
