//! Hyperparameter selection: the bound-maximizing grid search for the linear
//! ranker, its k-fold cross-validation counterpart, validation-AUUC selection
//! for the logistic baselines, and the statistics used to compare methods.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::bound::{auuc_lower_bound, BoundReport, FunctionClassSpec};
use crate::dataset::{stratified_folds, UpliftDataset};
use crate::metrics::auuc;
use crate::models::{fit_cvt, fit_tm, train_digest, LinearScorer, LogisticConfig, Model, ModelKind, Scorer};
use crate::optimizer::{train_ranker, TrainConfig, TrainingLog};
use crate::parallel::map_indexed;
use crate::rng::{derive_seed, streams};
use crate::{Error, Result};

/// Grid over `(Λ, η)` for the linear ranker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda_grid: Vec<f64>,
    pub lr_grid: Vec<f64>,
    #[serde(default)]
    pub template: TrainConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lambda_grid: vec![0.5, 0.8, 1.0],
            lr_grid: vec![5e-4, 1e-3],
            template: TrainConfig::default(),
        }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() || self.lr_grid.is_empty() {
            return Err(Error::invalid("selection grids must be non-empty"));
        }
        Ok(())
    }

    /// Points in `Λ`-major order; `seed` of each point is derived from the
    /// template seed and the point index.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &lambda_cap in &self.lambda_grid {
            for &learning_rate in &self.lr_grid {
                out.push(GridPoint {
                    index: out.len(),
                    lambda_cap: Some(lambda_cap),
                    learning_rate,
                    l2: None,
                });
            }
        }
        out
    }

    fn config_for(&self, p: &GridPoint) -> TrainConfig {
        TrainConfig {
            learning_rate: p.learning_rate,
            lambda_cap: p.lambda_cap.expect("ranker grid point has Λ"),
            seed: derive_seed(self.template.seed, streams::GRID, p.index as u64),
            ..self.template.clone()
        }
    }
}

/// Grid over `(η, l2)` for a logistic baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineGrid {
    pub lr_grid: Vec<f64>,
    pub l2_grid: Vec<f64>,
    #[serde(default)]
    pub template: LogisticConfig,
}

impl BaselineGrid {
    pub fn tm_default() -> Self {
        Self {
            lr_grid: vec![0.1, 0.5],
            l2_grid: vec![0.0, 1e-6, 1e-4],
            template: LogisticConfig::default(),
        }
    }

    pub fn cvt_default() -> Self {
        Self {
            lr_grid: vec![5e-3, 1e-2],
            ..Self::tm_default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lr_grid.is_empty() || self.l2_grid.is_empty() {
            return Err(Error::invalid("selection grids must be non-empty"));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &l2 in &self.l2_grid {
            for &learning_rate in &self.lr_grid {
                out.push(GridPoint {
                    index: out.len(),
                    lambda_cap: None,
                    learning_rate,
                    l2: Some(l2),
                });
            }
        }
        out
    }

    fn config_for(&self, p: &GridPoint) -> LogisticConfig {
        LogisticConfig {
            learning_rate: p.learning_rate,
            l2: p.l2.expect("baseline grid point has l2"),
            seed: derive_seed(self.template.seed, streams::GRID, p.index as u64),
            ..self.template.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub lambda_cap: Option<f64>,
    pub learning_rate: f64,
    pub l2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Train-set AUUC lower bound.
    Bound,
    /// Mean held-out-fold AUUC.
    CrossValidation,
    /// AUUC on the validation set.
    ValidationAuuc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    #[serde(flatten)]
    pub point: GridPoint,
    pub value: Option<f64>,
    pub bound: Option<BoundReport>,
    pub error: Option<String>,
    /// Seconds spent on this point; not serialized, so artifacts stay reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionResult {
    pub criterion: Criterion,
    pub best_index: usize,
    pub best_value: f64,
    pub best_lambda: Option<f64>,
    pub best_weights: Vec<f64>,
    pub records: Vec<GridRecord>,
    #[serde(skip)]
    pub model: Model,
    /// Training log of the returned ranker, when one was trained.
    #[serde(skip)]
    pub training_log: Option<TrainingLog>,
    /// Total seconds, including the final refit for cross-validation.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl SelectionResult {
    pub fn records_csv(&self) -> String {
        let mut out = String::from("index,lambda_cap,learning_rate,l2,value,lower_bound,error\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.point.index,
                opt(r.point.lambda_cap),
                r.point.learning_rate,
                opt(r.point.l2),
                opt(r.value),
                opt(r.bound.map(|b| b.lower_bound)),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            ));
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("index,wall_time_s\n");
        for r in &self.records {
            out.push_str(&format!("{},{}\n", r.point.index, r.wall_time_s));
        }
        out
    }
}

struct Outcome {
    value: f64,
    bound: Option<BoundReport>,
    model: Option<(Model, Option<TrainingLog>)>,
}

/// Strictly better value wins; equal values go to smaller Λ, then smaller η,
/// then smaller l2.
fn better(a: (&GridPoint, f64), b: (&GridPoint, f64)) -> bool {
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    let key = |p: &GridPoint| (p.lambda_cap.unwrap_or(0.0), p.learning_rate, p.l2.unwrap_or(0.0));
    let (ka, kb) = (key(a.0), key(b.0));
    ka.partial_cmp(&kb) == Some(std::cmp::Ordering::Less)
}

fn select(
    criterion: Criterion,
    points: Vec<GridPoint>,
    eval: impl Fn(&GridPoint) -> Result<Outcome> + Sync + Send,
    refit: impl FnOnce(&GridPoint) -> Result<(Model, Option<TrainingLog>)>,
) -> Result<SelectionResult> {
    let started = Instant::now();
    let results = map_indexed(points.len(), |k| {
        let t0 = Instant::now();
        let r = eval(&points[k]);
        (r, t0.elapsed().as_secs_f64())
    });
    let mut records = Vec::with_capacity(points.len());
    let mut best: Option<(usize, f64)> = None;
    let mut models = Vec::with_capacity(points.len());
    for (p, (res, secs)) in points.iter().zip(results) {
        let (value, bound, error, model) = match res {
            Ok(o) => (Some(o.value), o.bound, None, o.model),
            Err(e) => (None, None, Some(e.to_string()), None),
        };
        if let Some(v) = value.filter(|v| v.is_finite()) {
            if best.is_none_or(|(bi, bv)| better((p, v), (&points[bi], bv))) {
                best = Some((p.index, v));
            }
        }
        records.push(GridRecord {
            point: *p,
            value,
            bound,
            error,
            wall_time_s: secs,
        });
        models.push(model);
    }
    let Some((best_index, best_value)) = best else {
        return Err(Error::AllFailed(points.len()));
    };
    let winner = &points[best_index];
    let (model, training_log) = match models.swap_remove(best_index) {
        Some(m) => m,
        None => refit(winner)?,
    };
    let best_weights = match &model.kind {
        ModelKind::AuucMax(m) => m.weights.clone(),
        ModelKind::TwoModel(m) => m.model_t.weights.iter().chain(&m.model_c.weights).copied().collect(),
        ModelKind::Cvt(m) => m.model_z.weights.clone(),
    };
    Ok(SelectionResult {
        criterion,
        best_index,
        best_value,
        best_lambda: winner.lambda_cap,
        best_weights,
        records,
        model,
        training_log,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn ranker_model(weights: Vec<f64>, cfg: &TrainConfig, train: &UpliftDataset) -> Result<Model> {
    Ok(Model {
        kind: ModelKind::AuucMax(LinearScorer::new(weights, 0.0)?),
        feature_names: train.feature_names().to_vec(),
        lambda_cap: Some(cfg.lambda_cap),
        train_digest: train_digest(cfg, train)?,
    })
}

/// Train the ranker at every `(Λ, η)` and keep the one with the largest
/// train-set AUUC lower bound. `validation` is used for early stopping only.
pub fn run_auuc_max(
    train: &UpliftDataset,
    validation: &UpliftDataset,
    grid: &GridSpec,
    delta: f64,
) -> Result<SelectionResult> {
    grid.validate()?;
    let radius = train.max_row_norm();
    select(
        Criterion::Bound,
        grid.points(),
        |p| {
            let cfg = grid.config_for(p);
            let (w, log) = train_ranker(train, validation, &cfg)?;
            let model = ranker_model(w, &cfg, train)?;
            let scores = model.score(train)?;
            let spec = FunctionClassSpec::new(cfg.lambda_cap, radius)?;
            let report = auuc_lower_bound(&scores, train, &spec, delta)?;
            Ok(Outcome {
                value: report.lower_bound,
                bound: Some(report),
                model: Some((model, Some(log))),
            })
        },
        |_| unreachable!("bound selection keeps every model"),
    )
}

/// Mean held-out AUUC over `k_folds` stratified folds of `train` per grid
/// point; the winner is retrained on all of `train`. `validation` is used for
/// early stopping only, in the folds and in the final fit.
pub fn select_by_cv(
    train: &UpliftDataset,
    validation: &UpliftDataset,
    grid: &GridSpec,
    k_folds: usize,
) -> Result<SelectionResult> {
    grid.validate()?;
    let folds = stratified_folds(train, k_folds, derive_seed(grid.template.seed, streams::FOLD, 0))?;
    let parts: Vec<(UpliftDataset, UpliftDataset)> = (0..k_folds)
        .map(|f| {
            let rest: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            let mut rest = rest;
            rest.sort_unstable();
            Ok((train.subset(&rest)?, train.subset(&folds[f])?))
        })
        .collect::<Result<_>>()?;
    select(
        Criterion::CrossValidation,
        grid.points(),
        |p| {
            let cfg = grid.config_for(p);
            let mut total = 0.0;
            for (f, (fit_set, held_out)) in parts.iter().enumerate() {
                let fold_cfg = TrainConfig {
                    seed: derive_seed(cfg.seed, streams::FOLD, f as u64 + 1),
                    ..cfg.clone()
                };
                let (w, _) = train_ranker(fit_set, validation, &fold_cfg)?;
                let scores = LinearScorer::new(w, 0.0)?.score(held_out)?;
                total += auuc(&scores, held_out)?;
            }
            Ok(Outcome {
                value: total / k_folds as f64,
                bound: None,
                model: None,
            })
        },
        |p| {
            let cfg = grid.config_for(p);
            let (w, log) = train_ranker(train, validation, &cfg)?;
            Ok((ranker_model(w, &cfg, train)?, Some(log)))
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Tm,
    Cvt,
}

/// Fit a logistic baseline at every `(η, l2)` and keep the one with the
/// largest validation AUUC. The validation set also drives early stopping.
pub fn select_baseline(
    kind: Baseline,
    train: &UpliftDataset,
    validation: &UpliftDataset,
    grid: &BaselineGrid,
) -> Result<SelectionResult> {
    grid.validate()?;
    select(
        Criterion::ValidationAuuc,
        grid.points(),
        |p| {
            let cfg = grid.config_for(p);
            let model_kind = match kind {
                Baseline::Tm => ModelKind::TwoModel(fit_tm(train, Some(validation), &cfg)?),
                Baseline::Cvt => ModelKind::Cvt(fit_cvt(train, Some(validation), &cfg)?),
            };
            let model = Model {
                kind: model_kind,
                feature_names: train.feature_names().to_vec(),
                lambda_cap: None,
                train_digest: train_digest(&cfg, train)?,
            };
            let value = auuc(&model.score(validation)?, validation)?;
            Ok(Outcome {
                value,
                bound: None,
                model: Some((model, None)),
            })
        },
        |_| unreachable!("validation selection keeps every model"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins_a: usize,
    pub non_tied: usize,
    pub p_value: f64,
    pub significant: bool,
}

/// One-sided exact sign test of "a beats b": `P(X >= wins_a)` for
/// `X ~ Binomial(non_tied, 1/2)`; significant when `p < alpha`.
pub fn binomial_sign_test(a: &[f64], b: &[f64], alpha: f64) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::invalid("sign test needs at least one pair"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let wins_a = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let n = wins_a + losses;
    if n == 0 {
        return Err(Error::invalid("every pair is tied"));
    }
    let p_value = binomial_upper_tail(n, wins_a);
    Ok(SignTest {
        wins_a,
        non_tied: n,
        p_value,
        significant: p_value < alpha,
    })
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let dist = Binomial::new(0.5, n as u64).expect("p = 1/2 is a valid probability");
    // sf(k - 1) = P(X > k - 1)
    dist.sf(k as u64 - 1)
}

/// Upper confidence bound on the mean of samples known to lie in `[lo, hi]`:
/// `mean + (hi - lo) [sqrt(2 V ln(2/δ) / n) + 7 ln(2/δ) / (3 (n - 1))]`, with
/// `V` the unbiased sample variance of the samples rescaled to `[0, 1]`.
pub fn empirical_bernstein_upper(samples: &[f64], range: (f64, f64), delta: f64) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid("empirical Bernstein bound needs at least 2 samples"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("δ must lie in (0, 1), got {delta}")));
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::invalid(format!("invalid range [{lo}, {hi}]")));
    }
    if samples.iter().any(|&v| !(lo..=hi).contains(&v)) {
        return Err(Error::invalid(format!("samples fall outside [{lo}, {hi}]")));
    }
    let width = hi - lo;
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let mean_u = (mean - lo) / width;
    let var_u = samples
        .iter()
        .map(|&v| {
            let u = (v - lo) / width - mean_u;
            u * u
        })
        .sum::<f64>()
        / (nf - 1.0);
    let log_term = (2.0 / delta).ln();
    Ok(mean + width * ((2.0 * var_u * log_term / nf).sqrt() + 7.0 * log_term / (3.0 * (nf - 1.0))))
}
