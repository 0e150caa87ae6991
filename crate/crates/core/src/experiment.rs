//! Repeated random-split protocols: per-split test AUUC, bound and policy
//! risk for each method with aggregate statistics, and the distribution of
//! the gap between expected AUUC and the train-set lower bound.
//!
//! Artifacts are deterministic under the master seed. Wall-clock timings are
//! the one exception and go to a separate `timings.csv`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    fit_encode, generate_synthetic, hillstrom_rules, load_hillstrom, split, SplitSpec, SyntheticSpec, UpliftDataset,
};
use crate::io::{read_to_string, write_atomic, write_json};
use crate::metrics::{auuc, decile_ratios, policy_risk_curve};
use crate::parallel::map_indexed;
use crate::rng::{derive_seed, seeded, streams};
use crate::selection::{
    binomial_sign_test, empirical_bernstein_upper, run_auuc_max, select_baseline, select_by_cv, Baseline, BaselineGrid,
    GridSpec, SelectionResult, SignTest,
};
use crate::{Error, Result};

/// Where an experiment's rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Raw Hillstrom e-mail CSV, encoded with the default rules.
    Hillstrom {
        path: PathBuf,
        #[serde(default = "default_outcome")]
        outcome: String,
        #[serde(default = "default_arm")]
        treatment_arm: String,
        #[serde(default = "default_true")]
        scale_history: bool,
    },
    /// Already-encoded CSV (`f0..,treatment,outcome`).
    Csv {
        path: PathBuf,
    },
    Synthetic(SyntheticSpec),
}

fn default_outcome() -> String {
    "visit".into()
}

fn default_arm() -> String {
    "Womens E-Mail".into()
}

fn default_true() -> bool {
    true
}

impl DataSource {
    pub fn load(&self) -> Result<UpliftDataset> {
        match self {
            DataSource::Hillstrom {
                path,
                outcome,
                treatment_arm,
                scale_history,
            } => {
                let raw = load_hillstrom(path, treatment_arm, outcome)?;
                Ok(fit_encode(&raw, &hillstrom_rules(*scale_history))?.1)
            }
            DataSource::Csv { path } => UpliftDataset::read_csv(path),
            DataSource::Synthetic(spec) => Ok(generate_synthetic(spec)?.dataset),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AuucMax,
    AuucMaxCv,
    Tm,
    Cvt,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::AuucMax, Method::AuucMaxCv, Method::Tm, Method::Cvt];

    pub fn name(self) -> &'static str {
        match self {
            Method::AuucMax => "auuc-max",
            Method::AuucMaxCv => "auuc-max-cv",
            Method::Tm => "tm",
            Method::Cvt => "cvt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundGapConfig {
    /// Random test-set halves used to estimate each model's expected AUUC.
    pub num_splits_for_mean: usize,
    /// Known range of a single AUUC value, for the Bernstein bound.
    pub eb_range: (f64, f64),
    pub eb_delta: f64,
    pub bins: usize,
}

impl Default for BoundGapConfig {
    fn default() -> Self {
        Self {
            num_splits_for_mean: 200,
            eb_range: (-1.0, 1.0),
            eb_delta: 0.01,
            bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub ranker_grid: GridSpec,
    #[serde(default = "BaselineGrid::tm_default")]
    pub tm_grid: BaselineGrid,
    #[serde(default = "BaselineGrid::cvt_default")]
    pub cvt_grid: BaselineGrid,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default = "default_num_splits")]
    pub num_splits: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_k_folds")]
    pub k_folds: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
    /// Concurrent splits; `None` uses every core.
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub bound_gap: BoundGapConfig,
}

fn default_methods() -> Vec<Method> {
    vec![Method::AuucMax]
}

fn default_num_splits() -> usize {
    20
}

fn default_delta() -> f64 {
    0.05
}

fn default_k_folds() -> usize {
    5
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_splits == 0 {
            return Err(Error::invalid("num_splits must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("δ must lie in (0, 1), got {}", self.delta)));
        }
        if self.split.validation_fraction <= 0.0 {
            return Err(Error::invalid("experiments need a validation part (early stopping)"));
        }
        if self.jobs == Some(0) {
            return Err(Error::invalid("jobs must be at least 1"));
        }
        self.split_spec(0).validate_public()
    }

    pub fn split_spec(&self, split_index: usize) -> SplitSpec {
        SplitSpec::new(
            self.split.train_fraction,
            self.split.validation_fraction,
            derive_seed(self.master_seed, streams::SPLIT, split_index as u64),
        )
    }

    fn grids_for_split(&self, split_index: usize) -> (GridSpec, BaselineGrid, BaselineGrid) {
        let seed = derive_seed(self.master_seed, streams::TRAIN, split_index as u64);
        let mut ranker = self.ranker_grid.clone();
        ranker.template.seed = seed;
        let mut tm = self.tm_grid.clone();
        tm.template.seed = seed;
        let mut cvt = self.cvt_grid.clone();
        cvt.template.seed = seed;
        (ranker, tm, cvt)
    }
}

impl SplitSpec {
    fn validate_public(&self) -> Result<()> {
        let t = self.train_fraction;
        let v = self.validation_fraction;
        if !(t > 0.0 && t < 1.0 && (0.0..1.0).contains(&v) && t + v < 1.0) {
            return Err(Error::invalid(format!(
                "split fractions ({t}, {v}) must leave a non-empty test part"
            )));
        }
        Ok(())
    }
}

/// Train/validation/test datasets of split `split_index`.
pub fn split_datasets(
    ds: &UpliftDataset,
    cfg: &ExperimentConfig,
    split_index: usize,
) -> Result<(UpliftDataset, UpliftDataset, UpliftDataset)> {
    let s = split(ds, &cfg.split_spec(split_index))?;
    let validation = s
        .validation_set(ds)?
        .ok_or_else(|| Error::invalid("empty validation part"))?;
    Ok((s.train_set(ds)?, validation, s.test_set(ds)?))
}

/// Select and fit one method on one split.
pub fn fit_method(
    method: Method,
    cfg: &ExperimentConfig,
    split_index: usize,
    train: &UpliftDataset,
    validation: &UpliftDataset,
) -> Result<SelectionResult> {
    let (ranker, tm, cvt) = cfg.grids_for_split(split_index);
    match method {
        Method::AuucMax => run_auuc_max(train, validation, &ranker, cfg.delta),
        Method::AuucMaxCv => select_by_cv(train, validation, &ranker, cfg.k_folds),
        Method::Tm => select_baseline(Baseline::Tm, train, validation, &tm),
        Method::Cvt => select_baseline(Baseline::Cvt, train, validation, &cvt),
    }
}

/// One method on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub split: usize,
    pub split_seed: u64,
    pub method: Method,
    pub ok: bool,
    pub test_auuc: Option<f64>,
    /// Train-set lower bound of the selected model (bound-selected ranker only).
    pub lower_bound: Option<f64>,
    /// Policy risk at treated ratios 0.1..0.9.
    pub policy_risk: Vec<f64>,
    pub error: Option<String>,
}

const ROW_HEADER: &str =
    "split,split_seed,method,ok,test_auuc,lower_bound,pr_0.1,pr_0.2,pr_0.3,pr_0.4,pr_0.5,pr_0.6,pr_0.7,pr_0.8,pr_0.9,error";

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn rows_to_csv(rows: &[SplitRow]) -> String {
    let mut out = String::from(ROW_HEADER);
    out.push('\n');
    for r in rows {
        let mut fields = vec![
            r.split.to_string(),
            r.split_seed.to_string(),
            r.method.name().to_string(),
            r.ok.to_string(),
            opt_str(r.test_auuc),
            opt_str(r.lower_bound),
        ];
        for k in 0..9 {
            fields.push(opt_str(r.policy_risk.get(k).copied()));
        }
        fields.push(r.error.as_deref().unwrap_or("").replace([',', '\n', '"'], ";"));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn rows_from_csv(text: &str) -> Result<Vec<SplitRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Parse {
            row: line + 1,
            message: format!("bad {what}"),
        };
        let num = |k: usize| -> Result<Option<f64>> {
            let f = rec.get(k).unwrap_or("");
            if f.is_empty() {
                Ok(None)
            } else {
                f.parse().map(Some).map_err(|_| bad("number"))
            }
        };
        if rec.len() != 16 {
            return Err(bad("field count"));
        }
        let policy_risk: Vec<f64> = (6..15).filter_map(|k| num(k).transpose()).collect::<Result<_>>()?;
        let error = rec.get(15).filter(|s| !s.is_empty()).map(str::to_string);
        rows.push(SplitRow {
            split: rec[0].parse().map_err(|_| bad("split"))?,
            split_seed: rec[1].parse().map_err(|_| bad("split_seed"))?,
            method: rec[2].parse()?,
            ok: rec[3].parse().map_err(|_| bad("ok"))?,
            test_auuc: num(4)?,
            lower_bound: num(5)?,
            policy_risk,
            error,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_test_auuc: f64,
    pub std_test_auuc: f64,
    pub two_sigma: f64,
    pub mean_lower_bound: Option<f64>,
    pub mean_policy_risk: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Method,
    pub b: Method,
    #[serde(flatten)]
    pub test: SignTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub num_splits: usize,
    pub methods: Vec<MethodAggregate>,
    pub comparisons: Vec<Comparison>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Aggregate statistics recomputed from per-split rows.
pub fn aggregate(rows: &[SplitRow], num_splits: usize) -> Aggregate {
    let mut by_method: BTreeMap<Method, Vec<&SplitRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(r.method).or_default().push(r);
    }
    let mut methods = Vec::new();
    for (&method, rs) in &by_method {
        let ok: Vec<&SplitRow> = rs.iter().copied().filter(|r| r.ok).collect();
        let auucs: Vec<f64> = ok.iter().filter_map(|r| r.test_auuc).collect();
        if auucs.is_empty() {
            methods.push(MethodAggregate {
                method,
                n_ok: 0,
                n_failed: rs.len(),
                mean_test_auuc: f64::NAN,
                std_test_auuc: f64::NAN,
                two_sigma: f64::NAN,
                mean_lower_bound: None,
                mean_policy_risk: Vec::new(),
            });
            continue;
        }
        let (mean, std) = mean_std(&auucs);
        let bounds: Vec<f64> = ok.iter().filter_map(|r| r.lower_bound).collect();
        let mean_policy_risk = (0..9)
            .map(|k| {
                let v: Vec<f64> = ok.iter().filter_map(|r| r.policy_risk.get(k).copied()).collect();
                mean_std(&v).0
            })
            .collect();
        methods.push(MethodAggregate {
            method,
            n_ok: ok.len(),
            n_failed: rs.len() - ok.len(),
            mean_test_auuc: mean,
            std_test_auuc: std,
            two_sigma: 2.0 * std,
            mean_lower_bound: (!bounds.is_empty()).then(|| mean_std(&bounds).0),
            mean_policy_risk,
        });
    }
    let mut comparisons = Vec::new();
    let keys: Vec<Method> = by_method.keys().copied().collect();
    for &a in &keys {
        for &b in &keys {
            if a == b {
                continue;
            }
            let value = |m: Method, s: usize| {
                by_method[&m]
                    .iter()
                    .find(|r| r.split == s && r.ok)
                    .and_then(|r| r.test_auuc)
            };
            let (mut va, mut vb) = (Vec::new(), Vec::new());
            for s in 0..num_splits {
                if let (Some(x), Some(y)) = (value(a, s), value(b, s)) {
                    va.push(x);
                    vb.push(y);
                }
            }
            if let Ok(test) = binomial_sign_test(&va, &vb, 0.05) {
                comparisons.push(Comparison { a, b, test });
            }
        }
    }
    Aggregate {
        num_splits,
        methods,
        comparisons,
    }
}

pub const ROWS_FILE: &str = "rows.csv";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<SplitRow>,
    pub aggregate: Aggregate,
    /// `(split, method, seconds)` for rows computed in this run.
    pub timings: Vec<(usize, Method, f64)>,
}

/// Size the global worker pool. Call once, before any parallel work.
pub fn configure_threads(jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Err(Error::invalid("jobs must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(())
}

/// Run `f` inside a pool of `jobs` threads when given.
fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    #[cfg(feature = "parallel")]
    if let Some(j) = jobs {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        return Ok(pool.install(f));
    }
    let _ = jobs;
    Ok(f())
}

fn run_one(ds: &UpliftDataset, cfg: &ExperimentConfig, split_index: usize, method: Method) -> (SplitRow, f64) {
    let started = Instant::now();
    let split_seed = cfg.split_spec(split_index).seed;
    let result = (|| -> Result<(f64, Option<f64>, Vec<f64>)> {
        let (train, validation, test) = split_datasets(ds, cfg, split_index)?;
        let sel = fit_method(method, cfg, split_index, &train, &validation)?;
        let scores = sel.model.score(&test)?;
        let test_auuc = auuc(&scores, &test)?;
        let lower_bound = sel.records[sel.best_index].bound.map(|b| b.lower_bound);
        let pr = policy_risk_curve(&scores, &test, &decile_ratios())?
            .into_iter()
            .map(|p| p.risk)
            .collect();
        Ok((test_auuc, lower_bound, pr))
    })();
    let row = match result {
        Ok((a, lb, pr)) => SplitRow {
            split: split_index,
            split_seed,
            method,
            ok: true,
            test_auuc: Some(a),
            lower_bound: lb,
            policy_risk: pr,
            error: None,
        },
        Err(e) => SplitRow {
            split: split_index,
            split_seed,
            method,
            ok: false,
            test_auuc: None,
            lower_bound: None,
            policy_risk: Vec::new(),
            error: Some(e.to_string()),
        },
    };
    (row, started.elapsed().as_secs_f64())
}

fn sort_rows(rows: &mut [SplitRow]) {
    rows.sort_by_key(|r| (r.split, r.method));
}

/// Every configured method on `num_splits` random splits. Rows already in
/// `output_dir/rows.csv` are kept and not recomputed; the file is rewritten
/// after each completed split, so an interrupted run resumes where it stopped.
pub fn run_splits(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let ds = cfg.data.load()?;
    let dir = &cfg.output_dir;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    let rows_path = dir.join(ROWS_FILE);
    let mut existing = if rows_path.exists() {
        rows_from_csv(&read_to_string(&rows_path)?)?
    } else {
        Vec::new()
    };
    existing.retain(|r| r.split < cfg.num_splits && cfg.methods.contains(&r.method));
    let done: Vec<(usize, Method)> = existing.iter().map(|r| (r.split, r.method)).collect();
    let todo: Vec<usize> = (0..cfg.num_splits)
        .filter(|&s| cfg.methods.iter().any(|m| !done.contains(&(s, *m))))
        .collect();
    let shared = Mutex::new((existing, Vec::<(usize, Method, f64)>::new(), None::<Error>));
    with_jobs(cfg.jobs, || {
        map_indexed(todo.len(), |k| {
            let s = todo[k];
            let fresh: Vec<(SplitRow, f64)> = cfg
                .methods
                .iter()
                .filter(|m| !done.contains(&(s, **m)))
                .map(|&m| run_one(&ds, cfg, s, m))
                .collect();
            let mut guard = shared.lock().expect("rows lock");
            for (row, secs) in fresh {
                guard.1.push((row.split, row.method, secs));
                guard.0.push(row);
            }
            sort_rows(&mut guard.0);
            if let Err(e) = write_atomic(&rows_path, rows_to_csv(&guard.0).as_bytes()) {
                guard.2.get_or_insert(e);
            }
        });
    })?;
    let (mut rows, mut timings, err) = shared.into_inner().expect("rows lock");
    if let Some(e) = err {
        return Err(e);
    }
    sort_rows(&mut rows);
    write_atomic(&rows_path, rows_to_csv(&rows).as_bytes())?;
    let agg = aggregate(&rows, cfg.num_splits);
    write_json(&dir.join(AGGREGATE_FILE), &agg)?;
    timings.sort_by_key(|t| (t.0, t.1));
    append_timings(&dir.join(TIMINGS_FILE), &timings)?;
    if rows.iter().all(|r| !r.ok) {
        return Err(Error::AllFailed(rows.len()));
    }
    Ok(ExperimentResult {
        rows,
        aggregate: agg,
        timings,
    })
}

fn append_timings(path: &Path, timings: &[(usize, Method, f64)]) -> Result<()> {
    let mut text = if path.exists() {
        read_to_string(path)?
    } else {
        String::from("split,method,wall_time_s\n")
    };
    for (s, m, t) in timings {
        text.push_str(&format!("{s},{m},{t}\n"));
    }
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub rows: usize,
    pub consistent: bool,
    pub mismatches: Vec<String>,
}

fn close(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

/// Recompute the aggregate of `dir/rows.csv` and compare it with `dir/aggregate.json`.
pub fn verify(dir: &Path) -> Result<VerifyReport> {
    let rows = rows_from_csv(&read_to_string(&dir.join(ROWS_FILE))?)?;
    let stored: Aggregate = serde_json::from_str(&read_to_string(&dir.join(AGGREGATE_FILE))?)?;
    let fresh = aggregate(&rows, stored.num_splits);
    let mut mismatches = Vec::new();
    if fresh.methods.len() != stored.methods.len() {
        mismatches.push("method count".to_string());
    }
    for (a, b) in fresh.methods.iter().zip(&stored.methods) {
        let label = a.method.name();
        if a.method != b.method || a.n_ok != b.n_ok || a.n_failed != b.n_failed {
            mismatches.push(format!("{label}: counts"));
        }
        for (what, x, y) in [
            ("mean_test_auuc", a.mean_test_auuc, b.mean_test_auuc),
            ("std_test_auuc", a.std_test_auuc, b.std_test_auuc),
            ("two_sigma", a.two_sigma, b.two_sigma),
            (
                "mean_lower_bound",
                a.mean_lower_bound.unwrap_or(f64::NAN),
                b.mean_lower_bound.unwrap_or(f64::NAN),
            ),
        ] {
            if !close(x, y) {
                mismatches.push(format!("{label}: {what} {x} vs {y}"));
            }
        }
        if a.mean_policy_risk.len() != b.mean_policy_risk.len()
            || a.mean_policy_risk
                .iter()
                .zip(&b.mean_policy_risk)
                .any(|(x, y)| !close(*x, *y))
        {
            mismatches.push(format!("{label}: mean_policy_risk"));
        }
    }
    if fresh.comparisons.len() != stored.comparisons.len()
        || fresh.comparisons.iter().zip(&stored.comparisons).any(|(x, y)| {
            x.a != y.a || x.b != y.b || x.test.wins_a != y.test.wins_a || !close(x.test.p_value, y.test.p_value)
        })
    {
        mismatches.push("comparisons".to_string());
    }
    Ok(VerifyReport {
        rows: rows.len(),
        consistent: mismatches.is_empty(),
        mismatches,
    })
}

/// One split of the bound-gap protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub split: usize,
    pub lower_bound: f64,
    pub test_auuc: f64,
    /// Bernstein upper estimate of the model's expected AUUC.
    pub expected_auuc: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub n_ok: usize,
    pub n_failed: usize,
    /// Mean of `expected_auuc - lower_bound`.
    pub mean_gap: f64,
    /// Mean of `test_auuc - lower_bound`.
    pub mean_test_gap: f64,
    pub quantiles: Vec<(f64, f64)>,
    /// Fraction of splits where the train-set bound is at most the test AUUC.
    pub bound_holds_fraction: f64,
    pub mean_lower_bound: f64,
    pub mean_test_auuc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapResult {
    pub rows: Vec<GapRow>,
    pub histogram: Vec<(f64, f64, usize)>,
    pub summary: GapSummary,
}

pub const GAP_ROWS_FILE: &str = "gap_rows.csv";
pub const GAP_HISTOGRAM_FILE: &str = "gap_histogram.csv";
pub const GAP_SUMMARY_FILE: &str = "gap_summary.json";

/// Per-split gap between the selected ranker's expected AUUC and its
/// train-set lower bound. The expected AUUC of each split's model is the
/// empirical Bernstein upper bound over its AUUC on
/// `num_splits_for_mean` random halves of that split's test set.
pub fn bound_gap(cfg: &ExperimentConfig) -> Result<GapResult> {
    cfg.validate()?;
    let gap_cfg = &cfg.bound_gap;
    if gap_cfg.num_splits_for_mean < 2 || gap_cfg.bins == 0 {
        return Err(Error::invalid("bound gap needs num_splits_for_mean >= 2 and bins >= 1"));
    }
    let ds = cfg.data.load()?;
    let results = with_jobs(cfg.jobs, || {
        map_indexed(cfg.num_splits, |s| -> Result<GapRow> {
            let (train, validation, test) = split_datasets(&ds, cfg, s)?;
            let sel = fit_method(Method::AuucMax, cfg, s, &train, &validation)?;
            let lower_bound = sel.records[sel.best_index]
                .bound
                .map(|b| b.lower_bound)
                .ok_or_else(|| Error::invalid("bound selection produced no bound"))?;
            let scores = sel.model.score(&test)?;
            let test_auuc = auuc(&scores, &test)?;
            let mut rng = seeded(derive_seed(cfg.master_seed, streams::SIGMA, s as u64));
            let mut idx: Vec<usize> = (0..test.len()).collect();
            let half = test.len() / 2;
            let mut samples = Vec::with_capacity(gap_cfg.num_splits_for_mean);
            for _ in 0..gap_cfg.num_splits_for_mean {
                idx.shuffle(&mut rng);
                let mut part = idx[..half].to_vec();
                part.sort_unstable();
                let sub = test.subset(&part)?;
                let sub_scores: Vec<f64> = part.iter().map(|&i| scores[i]).collect();
                samples.push(auuc(&sub_scores, &sub)?);
            }
            let expected_auuc = empirical_bernstein_upper(&samples, gap_cfg.eb_range, gap_cfg.eb_delta)?;
            Ok(GapRow {
                split: s,
                lower_bound,
                test_auuc,
                expected_auuc,
                gap: expected_auuc - lower_bound,
            })
        })
    })?;
    let n_failed = results.iter().filter(|r| r.is_err()).count();
    let rows: Vec<GapRow> = results.into_iter().filter_map(|r| r.ok()).collect();
    if rows.is_empty() {
        return Err(Error::AllFailed(cfg.num_splits));
    }
    let mut gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    gaps.sort_by(|a, b| a.total_cmp(b));
    let quantile = |q: f64| {
        let pos = q * (gaps.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        gaps[lo] + (gaps[hi] - gaps[lo]) * (pos - lo as f64)
    };
    let n = rows.len() as f64;
    let summary = GapSummary {
        n_ok: rows.len(),
        n_failed,
        mean_gap: gaps.iter().sum::<f64>() / n,
        mean_test_gap: rows.iter().map(|r| r.test_auuc - r.lower_bound).sum::<f64>() / n,
        quantiles: [0.05, 0.25, 0.5, 0.75, 0.95]
            .into_iter()
            .map(|q| (q, quantile(q)))
            .collect(),
        bound_holds_fraction: rows.iter().filter(|r| r.lower_bound <= r.test_auuc).count() as f64 / n,
        mean_lower_bound: rows.iter().map(|r| r.lower_bound).sum::<f64>() / n,
        mean_test_auuc: rows.iter().map(|r| r.test_auuc).sum::<f64>() / n,
    };
    let (lo, hi) = (gaps[0], gaps[gaps.len() - 1]);
    let width = if hi > lo { (hi - lo) / gap_cfg.bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; gap_cfg.bins];
    for &g in &gaps {
        let b = (((g - lo) / width) as usize).min(gap_cfg.bins - 1);
        counts[b] += 1;
    }
    let histogram: Vec<(f64, f64, usize)> = counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + b as f64 * width, lo + (b + 1) as f64 * width, c))
        .collect();
    let dir = &cfg.output_dir;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    let mut text = String::from("split,lower_bound,test_auuc,expected_auuc,gap\n");
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.split, r.lower_bound, r.test_auuc, r.expected_auuc, r.gap
        ));
    }
    write_atomic(&dir.join(GAP_ROWS_FILE), text.as_bytes())?;
    let mut hist = String::from("bin_lo,bin_hi,count\n");
    for (a, b, c) in &histogram {
        hist.push_str(&format!("{a},{b},{c}\n"));
    }
    write_atomic(&dir.join(GAP_HISTOGRAM_FILE), hist.as_bytes())?;
    write_json(&dir.join(GAP_SUMMARY_FILE), &summary)?;
    Ok(GapResult {
        rows,
        histogram,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config(dir: &Path) -> ExperimentConfig {
        let mut cb = vec![0.0; 3];
        cb[0] = 0.5;
        let spec = SyntheticSpec::new(1200, 3, 0.5, cb, vec![1.0, -0.5, 0.0], 3).with_intercepts(-1.0, 0.0);
        let mut ranker = GridSpec {
            lambda_grid: vec![1.0],
            lr_grid: vec![0.05],
            ..GridSpec::default()
        };
        ranker.template.epochs = 5;
        ranker.template.batch_size = 64;
        ExperimentConfig {
            data: DataSource::Synthetic(spec),
            methods: vec![Method::AuucMax],
            ranker_grid: ranker,
            tm_grid: BaselineGrid::tm_default(),
            cvt_grid: BaselineGrid::cvt_default(),
            split: SplitFractions::default(),
            num_splits: 1,
            delta: 0.05,
            k_folds: 5,
            output_dir: dir.to_path_buf(),
            master_seed: 7,
            jobs: Some(1),
            bound_gap: BoundGapConfig::default(),
        }
    }

    #[test]
    fn single_split_aggregate_is_that_row() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let res = run_splits(&cfg).unwrap();
        assert_eq!(res.rows.len(), 1);
        let row = &res.rows[0];
        assert!(row.ok, "{:?}", row.error);
        assert_eq!(res.aggregate.methods[0].mean_test_auuc, row.test_auuc.unwrap());
        assert_eq!(res.aggregate.methods[0].std_test_auuc, 0.0);
        assert!(verify(dir.path()).unwrap().consistent);
    }

    #[test]
    fn rows_csv_round_trip() {
        let rows = vec![
            SplitRow {
                split: 0,
                split_seed: 99,
                method: Method::Tm,
                ok: true,
                test_auuc: Some(0.0123),
                lower_bound: None,
                policy_risk: (1..10).map(|k| k as f64 / 10.0).collect(),
                error: None,
            },
            SplitRow {
                split: 1,
                split_seed: 100,
                method: Method::Cvt,
                ok: false,
                test_auuc: None,
                lower_bound: None,
                policy_risk: Vec::new(),
                error: Some("boom".into()),
            },
        ];
        let text = rows_to_csv(&rows);
        assert_eq!(rows_from_csv(&text).unwrap(), rows);
    }

    #[test]
    fn config_rejects_zero_splits() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.num_splits = 0;
        assert!(matches!(run_splits(&cfg).unwrap_err().kind(), crate::ErrorKind::Config));
    }
}
