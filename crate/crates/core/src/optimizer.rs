//! Pairwise surrogate objective over linear weights, Adam with step decay,
//! max-norm projection and early stopping on validation loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{group_view, Group, GroupView, UpliftDataset};
use crate::metrics::{group_stats, GroupStats};
use crate::rng::seeded;
use crate::surrogates::Surrogate;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Multiply the learning rate by `factor` every `interval` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub factor: f64,
    pub interval: usize,
}

impl Default for StepDecay {
    fn default() -> Self {
        Self {
            factor: 0.5,
            interval: 50,
        }
    }
}

impl StepDecay {
    /// Rate in effect during 1-based `epoch`.
    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        let drops = epoch.saturating_sub(1) / self.interval.max(1);
        base * self.factor.powi(drops as i32)
    }

    fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor <= 1.0) || self.interval == 0 {
            return Err(Error::invalid("step decay needs factor in (0, 1] and interval >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Positives and negatives sampled per group per step.
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub lambda_cap: f64,
    pub surrogate: Surrogate,
    pub weighted_by_lambda: bool,
    pub seed: u64,
    pub step_decay: StepDecay,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 1000,
            epochs: 200,
            early_stop_patience: 10,
            lambda_cap: 1.0,
            surrogate: Surrogate::default(),
            weighted_by_lambda: false,
            seed: 0,
            step_decay: StepDecay::default(),
            adam: AdamParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if !(self.lambda_cap > 0.0 && self.lambda_cap.is_finite()) {
            return Err(Error::invalid(format!("Λ must be positive, got {}", self.lambda_cap)));
        }
        self.surrogate.validate()?;
        self.step_decay.validate()
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, params: AdamParams) -> Self {
        Self {
            params,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, x: &mut [f64], grad: &[f64], lr: f64) {
        let AdamParams { beta1, beta2, eps } = self.params;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((xi, &g), m), v) in x.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *xi -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

pub fn norm(w: &[f64]) -> f64 {
    w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean projection onto the ball `||w|| <= lambda_cap`.
pub fn project_max_norm(w: &[f64], lambda_cap: f64) -> Vec<f64> {
    let mut out = w.to_vec();
    project_in_place(&mut out, lambda_cap);
    out
}

fn project_in_place(w: &mut [f64], lambda_cap: f64) {
    let n = norm(w);
    if n > lambda_cap {
        let k = lambda_cap / n;
        w.iter_mut().for_each(|v| *v *= k);
    }
}

/// Sums over the grid of (positive score `a_i`, negative score `b_j`) pairs:
/// total surrogate value plus, per positive, `Σ_j s'(a_i - b_j)` and, per
/// negative, `Σ_i s'(a_i - b_j)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PairSums {
    pub loss: f64,
    pub row: Vec<f64>,
    pub col: Vec<f64>,
}

pub(crate) fn pair_sums_brute(a: &[f64], b: &[f64], s: &Surrogate, grad: bool) -> PairSums {
    let mut out = PairSums {
        loss: 0.0,
        row: vec![0.0; if grad { a.len() } else { 0 }],
        col: vec![0.0; if grad { b.len() } else { 0 }],
    };
    for (i, &ai) in a.iter().enumerate() {
        let mut acc = 0.0;
        for (j, &bj) in b.iter().enumerate() {
            let z = ai - bj;
            acc += s.value(z);
            if grad {
                let d = s.derivative(z);
                out.row[i] += d;
                out.col[j] += d;
            }
        }
        out.loss += acc;
    }
    out
}

fn binomials(q: usize) -> Vec<f64> {
    let mut c = vec![1.0; q + 1];
    for k in 1..q {
        c[k] = c[k - 1] * (q - k + 1) as f64 / k as f64;
    }
    c
}

/// For each `i`: `Σ_{j : a_i - b_j < mu} (mu - a_i + b_j)^q`, through sorted
/// suffix sums of powers of `b`. `O((P + N) log N)`.
fn poly_row_sums(a: &[f64], b: &[f64], mu: f64, q: usize) -> Vec<f64> {
    let n = b.len();
    let shift = b.iter().sum::<f64>() / n as f64;
    let mut sorted: Vec<f64> = b.iter().map(|v| v - shift).collect();
    sorted.sort_by(|x, y| x.total_cmp(y));
    // suffix[k][m] = Σ_{j >= m} sorted[j]^k
    let mut suffix = vec![vec![0.0; n + 1]; q + 1];
    for m in (0..n).rev() {
        let mut p = 1.0;
        for row in suffix.iter_mut() {
            row[m] = row[m + 1] + p;
            p *= sorted[m];
        }
    }
    let binom = binomials(q);
    a.iter()
        .map(|&ai| {
            let u = mu - ai + shift;
            let m = sorted.partition_point(|&v| v + shift <= ai - mu);
            let mut total = 0.0;
            let mut up = 1.0;
            // Σ_k C(q,k) u^{q-k} Σ b^k, accumulated from k = q down to 0
            for k in (0..=q).rev() {
                total += binom[k] * up * suffix[k][m];
                up *= u;
            }
            total
        })
        .collect()
}

fn pair_sums(a: &[f64], b: &[f64], s: &Surrogate, grad: bool) -> PairSums {
    match *s {
        Surrogate::Poly { mu, p } if (1..=4).contains(&p) => {
            let p = p as usize;
            let loss = poly_row_sums(a, b, mu, p).iter().sum();
            if !grad {
                return PairSums {
                    loss,
                    row: Vec::new(),
                    col: Vec::new(),
                };
            }
            let k = -(p as f64);
            let neg_a: Vec<f64> = a.iter().map(|v| -v).collect();
            let neg_b: Vec<f64> = b.iter().map(|v| -v).collect();
            let row = poly_row_sums(a, b, mu, p - 1).into_iter().map(|v| k * v).collect();
            let col = poly_row_sums(&neg_b, &neg_a, mu, p - 1)
                .into_iter()
                .map(|v| k * v)
                .collect();
            PairSums { loss, row, col }
        }
        _ => pair_sums_brute(a, b, s, grad),
    }
}

/// Positive and negative row indices of one (possibly reverted) group.
#[derive(Debug, Clone)]
struct GroupPairs {
    pos: Vec<usize>,
    neg: Vec<usize>,
    weight: f64,
}

/// The pairwise objective
/// `Σ_g c_g (1/(P_g N_g)) Σ_{i,j} s(w·x_i - w·x_j)` over the treated group and
/// the label-reverted control group, with `c_g = 1` or `c_g = λ^g`.
#[derive(Debug, Clone)]
pub struct PairwiseObjective<'a> {
    ds: &'a UpliftDataset,
    groups: [GroupPairs; 2],
    surrogate: Surrogate,
}

impl<'a> PairwiseObjective<'a> {
    pub fn new(ds: &'a UpliftDataset, surrogate: Surrogate, weighted: bool) -> Result<Self> {
        let view_t = group_view(ds, Group::Treatment, false)?;
        let view_c = group_view(ds, Group::Control, true)?;
        let stats = group_stats(ds)?;
        Self::from_views(&view_t, &view_c, surrogate, weighted, &stats)
    }

    pub fn from_views(
        view_t: &GroupView<'a>,
        view_c: &GroupView<'a>,
        surrogate: Surrogate,
        weighted: bool,
        stats: &GroupStats,
    ) -> Result<Self> {
        surrogate.validate()?;
        if !std::ptr::eq(view_t.parent(), view_c.parent()) {
            return Err(Error::invalid("group views must share one dataset"));
        }
        view_t.require_both_classes()?;
        view_c.require_both_classes()?;
        let (wt, wc) = if weighted {
            (stats.lambda_t, stats.lambda_c)
        } else {
            (1.0, 1.0)
        };
        let pairs = |v: &GroupView<'_>, weight| GroupPairs {
            pos: v.positives(),
            neg: v.negatives(),
            weight,
        };
        Ok(Self {
            ds: view_t.parent(),
            groups: [pairs(view_t, wt), pairs(view_c, wc)],
            surrogate,
        })
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.ds.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ds.dim(),
                actual: w.len(),
            });
        }
        Ok(())
    }

    /// Objective restricted to the given pos/neg index lists of each group.
    fn evaluate(&self, w: &[f64], lists: [(&[usize], &[usize]); 2], grad: Option<&mut [f64]>) -> f64 {
        let want = grad.is_some();
        let mut g_acc = vec![0.0; if want { w.len() } else { 0 }];
        let mut total = 0.0;
        for ((pos, neg), group) in lists.into_iter().zip(&self.groups) {
            let a: Vec<f64> = pos.iter().map(|&i| dot(w, self.ds.row(i))).collect();
            let b: Vec<f64> = neg.iter().map(|&j| dot(w, self.ds.row(j))).collect();
            let sums = pair_sums(&a, &b, &self.surrogate, want);
            let scale = group.weight / (pos.len() as f64 * neg.len() as f64);
            total += scale * sums.loss;
            if want {
                for (&i, &c) in pos.iter().zip(&sums.row) {
                    for (g, x) in g_acc.iter_mut().zip(self.ds.row(i)) {
                        *g += scale * c * x;
                    }
                }
                for (&j, &r) in neg.iter().zip(&sums.col) {
                    for (g, x) in g_acc.iter_mut().zip(self.ds.row(j)) {
                        *g -= scale * r * x;
                    }
                }
            }
        }
        if let Some(g) = grad {
            g.copy_from_slice(&g_acc);
        }
        total
    }

    fn full_lists(&self) -> [(&[usize], &[usize]); 2] {
        [
            (&self.groups[0].pos, &self.groups[0].neg),
            (&self.groups[1].pos, &self.groups[1].neg),
        ]
    }

    pub fn loss(&self, w: &[f64]) -> Result<f64> {
        self.check(w)?;
        Ok(self.evaluate(w, self.full_lists(), None))
    }

    pub fn loss_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(w)?;
        let mut g = vec![0.0; w.len()];
        let loss = self.evaluate(w, self.full_lists(), Some(&mut g));
        Ok((loss, g))
    }

    /// Batch estimate: `batch` positives and `batch` negatives drawn with
    /// replacement per group, all in-batch pairs.
    fn batch_loss_and_grad<R: Rng>(&self, w: &[f64], batch: usize, rng: &mut R, g: &mut [f64]) -> f64 {
        let draw = |rng: &mut R, from: &[usize]| -> Vec<usize> {
            (0..batch).map(|_| from[rng.random_range(0..from.len())]).collect()
        };
        let mut sampled = Vec::with_capacity(4);
        for group in &self.groups {
            sampled.push(draw(rng, &group.pos));
            sampled.push(draw(rng, &group.neg));
        }
        self.evaluate(w, [(&sampled[0], &sampled[1]), (&sampled[2], &sampled[3])], Some(g))
    }

    /// Largest positive or negative index list over both groups.
    fn largest_side(&self) -> usize {
        self.groups
            .iter()
            .flat_map(|g| [g.pos.len(), g.neg.len()])
            .max()
            .unwrap_or(0)
    }
}

pub fn pairwise_loss(
    w: &[f64],
    view_t: &GroupView<'_>,
    view_c_reverted: &GroupView<'_>,
    surrogate: &Surrogate,
    weighted: bool,
    stats: &GroupStats,
) -> Result<f64> {
    PairwiseObjective::from_views(view_t, view_c_reverted, *surrogate, weighted, stats)?.loss(w)
}

pub fn pairwise_grad(
    w: &[f64],
    view_t: &GroupView<'_>,
    view_c_reverted: &GroupView<'_>,
    surrogate: &Surrogate,
    weighted: bool,
    stats: &GroupStats,
) -> Result<Vec<f64>> {
    PairwiseObjective::from_views(view_t, view_c_reverted, *surrogate, weighted, stats)?
        .loss_and_grad(w)
        .map(|(_, g)| g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch objective over the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub weight_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr,weight_norm\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.lr, r.weight_norm
            ));
        }
        out
    }
}

/// Generic early-stopping loop shared by every learner: `epoch_fn` runs one
/// epoch (mutating the parameters) and returns the mean training loss;
/// `val_fn` scores the current parameters. The parameters with the lowest
/// validation loss are restored at the end.
#[allow(clippy::too_many_arguments)]
pub(crate) fn early_stopping_loop(
    params: &mut Vec<f64>,
    epochs: usize,
    patience: usize,
    base_lr: f64,
    decay: &StepDecay,
    mut epoch_fn: impl FnMut(&mut Vec<f64>, f64) -> Result<f64>,
    mut val_fn: impl FnMut(&[f64]) -> Result<f64>,
    norm_of: impl Fn(&[f64]) -> f64,
) -> Result<TrainingLog> {
    let mut log = TrainingLog {
        best_val_loss: f64::INFINITY,
        ..TrainingLog::default()
    };
    let mut best = params.clone();
    let mut since_best = 0;
    for epoch in 1..=epochs {
        let lr = decay.rate(base_lr, epoch);
        let train_loss = epoch_fn(params, lr)?;
        let val_loss = val_fn(params)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss diverged at epoch {epoch} (learning rate {base_lr})"
            )));
        }
        log.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            weight_norm: norm_of(params),
        });
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best.clone_from(params);
            since_best = 0;
        } else {
            since_best += 1;
            if patience > 0 && since_best >= patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    *params = best;
    Ok(log)
}

/// Minimize the pairwise objective of `train` under `||w|| <= Λ`, keeping the
/// weights with the best full-pair loss on `validation`.
pub fn train_ranker(
    train: &UpliftDataset,
    validation: &UpliftDataset,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, TrainingLog)> {
    cfg.validate()?;
    if validation.dim() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            actual: validation.dim(),
        });
    }
    let objective = PairwiseObjective::new(train, cfg.surrogate, cfg.weighted_by_lambda)?;
    let val_objective = PairwiseObjective::new(validation, cfg.surrogate, cfg.weighted_by_lambda)?;
    let steps = objective.largest_side().div_ceil(cfg.batch_size).max(1);
    let mut rng = seeded(cfg.seed);
    let mut adam = Adam::new(train.dim(), cfg.adam);
    let mut grad = vec![0.0; train.dim()];
    let mut w = vec![0.0; train.dim()];
    let cap = cfg.lambda_cap;
    let log = early_stopping_loop(
        &mut w,
        cfg.epochs,
        cfg.early_stop_patience,
        cfg.learning_rate,
        &cfg.step_decay,
        |w, lr| {
            let mut sum = 0.0;
            for _ in 0..steps {
                sum += objective.batch_loss_and_grad(w, cfg.batch_size, &mut rng, &mut grad);
                adam.step(w, &grad, lr);
                project_in_place(w, cap);
                assert!(norm(w) <= cap * (1.0 + 1e-12), "max-norm constraint violated");
            }
            Ok(sum / steps as f64)
        },
        |w| val_objective.loss(w),
        norm,
    )?;
    Ok((w, log))
}
